"""PPT feasibility of EVM templates and quantum-domain boundary scans.

The test solved for a template ``M(theta)`` is the max-min-eigenvalue program

    t* = max_{theta, t} t   s.t.   M(theta) >= t 1,   PT(M(theta)) >= t 1,

a small standard-form SDP. ``t* < 0`` means no completion of the measured data
is compatible with a state whose partial transpose is positive, which certifies
effective entanglement (verdict ``quantum``).
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from cvxopt import matrix, solvers

from . import evm, fock, sources
from .numerics import ContractError

log = logging.getLogger(__name__)

SOLVER_TOL = 1e-7
DEADBAND = 1e-6

QUANTUM = "quantum"
CLASSICAL = "classical_compatible"
BOUNDARY = "boundary"


class SolverError(RuntimeError):
    def __init__(self, msg: str, lower: float, upper: float):
        super().__init__(f"{msg} (bounds: {lower:.3e} <= t* <= {upper:.3e})")
        self.lower = lower
        self.upper = upper


@dataclass
class VerificationResult:
    t_star: float
    verdict: str
    theta_opt: np.ndarray
    iterations: int
    runtime: float
    upper_bound: float = np.nan
    witness: tuple = field(default=(), repr=False)


def verdict_of(t_star: float, deadband: float = DEADBAND) -> str:
    if t_star < -deadband:
        return QUANTUM
    if t_star > deadband:
        return CLASSICAL
    return BOUNDARY


def _real_embed(h: np.ndarray) -> np.ndarray:
    a, b = h.real, h.imag
    return np.block([[a, -b], [b, a]])


def _vec(m: np.ndarray) -> np.ndarray:
    return m.reshape(-1, order="F")


def _sdp(c: np.ndarray, gs: list[np.ndarray], hs: list[np.ndarray], tol: float):
    """``min c.x  s.t.  h_k - G_k x >= 0`` (real symmetric blocks) with CVXOPT's primal-dual solver."""
    opts = {"show_progress": False, "abstol": tol, "reltol": tol, "feastol": min(tol, 1e-8), "maxiters": 200}
    return solvers.sdp(matrix(c), Gs=[matrix(g) for g in gs], hs=[matrix(h) for h in hs], options=opts)


class _Program:
    """Compiled constraint data for one template structure (basis + transposition)."""

    def __init__(self, template: evm.EvmTemplate):
        n = template.dim
        self.n = n
        self.n2 = 2 * n
        k = template.n_params
        self.k = k
        eye = _vec(np.eye(self.n2))[:, None]
        if k:
            g1 = -np.array([_vec(_real_embed(b)) for b in template.basis]).T
            g2 = -np.array([_vec(_real_embed(template.pt(b))) for b in template.basis]).T
        else:
            g1 = g2 = np.zeros((self.n2 * self.n2, 0))
        self.gs = [np.hstack([g1, eye]), np.hstack([g2, eye])]

    def solve(self, template: evm.EvmTemplate, tol: float) -> VerificationResult:
        start = time.perf_counter()
        m0 = template.M0
        hs = [_real_embed(m0), _real_embed(template.pt(m0))]
        c = np.zeros(self.k + 1)
        c[-1] = -1.0
        lower = upper = np.nan
        # one retry with a looser stopping rule; the bounds themselves are recomputed exactly
        for attempt_tol in (tol, 10 * tol):
            sol = _sdp(c, self.gs, hs, attempt_tol)
            x = np.array(sol["x"]).ravel() if sol["x"] is not None else np.zeros(self.k + 1)
            theta = x[: self.k]
            mat = template.evaluate(theta)
            lower = float(min(np.linalg.eigvalsh(mat)[0], np.linalg.eigvalsh(template.pt(mat))[0]))
            zs = [np.array(z) for z in sol["zs"]] if sol["zs"][0] is not None else [np.zeros_like(h) for h in hs]
            upper = float(sum(np.sum(z * h) for z, h in zip(zs, hs)))
            if sol["status"] in ("optimal", "unknown") and upper - lower <= max(10 * tol, 1e-6):
                break
        else:
            raise SolverError(f"SDP solver stopped with status {sol['status']}", lower, upper)
        witness = (_complex_witness(zs[0], self.n), _complex_witness(zs[1], self.n))
        return VerificationResult(
            lower, verdict_of(lower), theta, int(sol["iterations"]), time.perf_counter() - start, upper, witness
        )


def _complex_witness(z: np.ndarray, n: int) -> np.ndarray:
    # Re Tr(H W) equals Tr(embed(H) Z) for Hermitian H
    return (z[:n, :n] + z[n:, n:]) + 1j * (z[n:, :n] - z[:n, n:])


_CACHE: dict[str, _Program] = {}


def _program(template: evm.EvmTemplate) -> _Program:
    h = hashlib.sha1()
    h.update(np.ascontiguousarray(template.basis).tobytes())
    h.update(np.ascontiguousarray(template.pt_index).tobytes())
    h.update(str(template.basis.shape).encode())
    key = h.hexdigest()
    prog = _CACHE.get(key)
    if prog is None:
        if len(_CACHE) > 64:
            _CACHE.clear()
        prog = _CACHE[key] = _Program(template)
    return prog


def feasibility(template: evm.EvmTemplate, tol: float = SOLVER_TOL) -> VerificationResult:
    """Certified optimum of the max-min-eigenvalue program for ``template``.

    ``t_star`` is evaluated exactly at the returned parameters, so it is a
    certified lower bound; ``upper_bound`` comes from the dual witness.
    """
    return _program(template).solve(template, tol)


@dataclass
class BoundaryPoint:
    x: float
    value: float
    lo: float
    hi: float
    t_at_hi: float
    flag: str = ""


@dataclass
class BoundaryCurve:
    points: list[BoundaryPoint]
    meta: dict = field(default_factory=dict)

    @property
    def x(self) -> np.ndarray:
        return np.array([p.x for p in self.points])

    @property
    def values(self) -> np.ndarray:
        return np.array([p.value for p in self.points])

    @property
    def failures(self) -> int:
        return sum(1 for p in self.points if p.flag)


def _is_classical(factory: Callable[[float], evm.EvmTemplate], value: float, tol: float) -> tuple[bool, float]:
    try:
        tmpl = factory(value)
    except ContractError:
        return False, -np.inf
    res = feasibility(tmpl, tol)
    return res.t_star >= -DEADBAND, res.t_star


def bisect(
    factory: Callable[[float], evm.EvmTemplate],
    quantum_end: float,
    classical_end: float,
    width: float = 1e-4,
    tol: float = SOLVER_TOL,
    recheck: bool = True,
) -> BoundaryPoint:
    """Locate the verdict change of ``factory(v)`` between two bracket ends.

    ``quantum_end`` must give a quantum verdict and ``classical_end`` a
    classical one; the bracket may be oriented either way. With ``recheck``
    every evaluation runs at ten times the solver tolerance, so the returned
    bracket ends are certified at that accuracy.
    """
    tol = tol / 10 if recheck else tol
    q, c = quantum_end, classical_end
    ok_c, t_c = _is_classical(factory, c, tol)
    ok_q, _ = _is_classical(factory, q, tol)
    if not ok_c or ok_q:
        flag = "bracket: classical end not classical" if not ok_c else "bracket: quantum end not quantum"
        return BoundaryPoint(np.nan, np.nan, q, c, t_c, flag)
    while abs(c - q) > width:
        mid = 0.5 * (q + c)
        ok, t = _is_classical(factory, mid, tol)
        if ok:
            c, t_c = mid, t
        else:
            q = mid
    return BoundaryPoint(np.nan, c, q, c, t_c, "")


def squeezed_factory(var_x: float, s: float | None = None, source: sources.PurifiedSource | None = None,
                     m: int = 0, insert_identity: bool = False, transpose_c: bool = False):
    """``var_p -> template`` at fixed ``var_x`` for the squeezed scenario."""
    if m > 0 and source is None:
        raise ContractError("C-unitaries need a purified source")

    def factory(var_p: float) -> evm.EvmTemplate:
        mom = evm.MeasuredMoments(var_x, var_p)
        if m == 0 and not insert_identity:
            ov = s if s is not None else float(np.real(source.overlap))
            return evm.template_squeezed(mom, ov)
        return evm.template_with_c_unitaries(("x", "p"), mom.conditional(), source, m, insert_identity, transpose_c)

    return factory


def boundary_scan_squeezed(
    var_x_grid: Sequence[float],
    s: float | None = None,
    source: sources.PurifiedSource | None = None,
    m: int = 0,
    width: float = 1e-4,
    tol: float = SOLVER_TOL,
    insert_identity: bool = False,
    recheck: bool = True,
) -> BoundaryCurve:
    """Smallest classical-compatible ``Var_0(p)`` for each ``Var_0(x)`` on the grid."""
    pts = []
    for vx in var_x_grid:
        factory = squeezed_factory(vx, s, source, m, insert_identity)
        try:
            pt = _boundary_point(factory, 0.25 / vx, width, tol, recheck)
        except SolverError as exc:
            pt = BoundaryPoint(np.nan, np.nan, exc.lower, exc.upper, np.nan, f"solver: {exc}")
        pt.x = vx
        pts.append(pt)
        if pt.flag:
            log.warning("boundary point var_x=%g flagged: %s", vx, pt.flag)
    return BoundaryCurve(pts, {"m": m, "s": s, "width": width})


def _boundary_point(factory, floor: float, width: float, tol: float, recheck: bool) -> BoundaryPoint:
    lo = floor * (1 + 1e-9)
    # a direct minimization gives a narrow starting bracket; fall back to a wide one
    try:
        guess = boundary_min_direct(factory, tol)
    except (SolverError, ArithmeticError, ValueError):
        guess = None
    if guess is not None:
        q_end, c_end = max(lo, guess - 2 * width), guess + 2 * width
        pt = bisect(factory, q_end, c_end, width, tol, recheck)
        if not pt.flag:
            return pt
        if pt.flag.startswith("bracket: quantum end") and q_end == lo:
            return BoundaryPoint(np.nan, floor, floor, floor, pt.t_at_hi, "")
    hi = 1.0 / (4 * floor) if floor < 0.25 else 1.0
    hi = max(hi, 1.0)
    while not _is_classical(factory, hi, tol)[0] and hi < 1e3:
        hi *= 2
    if hi >= 1e3:
        # below the smallest classical Var_x the whole column is quantum
        return BoundaryPoint(np.nan, np.inf, hi, np.inf, np.nan, "")
    pt = bisect(factory, lo, hi, width, tol, recheck)
    if pt.flag.startswith("bracket: quantum end"):
        # classical right down to the uncertainty floor
        return BoundaryPoint(np.nan, floor, floor, floor, pt.t_at_hi, "")
    return pt


def boundary_min_direct(factory: Callable[[float], evm.EvmTemplate], tol: float = SOLVER_TOL) -> float:
    """Smallest ``v`` for which ``factory(v)`` admits a PSD/PPT completion, solved as one SDP.

    Requires ``factory`` to be affine in ``v``; used as an independent check
    of the bisection.
    """
    t0, t1 = factory(1.0), factory(2.0)
    d = t1.M0 - t0.M0
    m0 = t0.M0 - d
    basis = np.concatenate([t0.basis, d[None]], axis=0)
    tmpl = evm.EvmTemplate(m0, basis, t0.labels, t0.pt_index, t0.provenance, t0.param_names + ("v",))
    prog = _Program(tmpl)
    gs = [g[:, :-1] for g in prog.gs]
    hs = [_real_embed(m0), _real_embed(tmpl.pt(m0))]
    c = np.zeros(prog.k)
    c[-1] = 1.0
    sol = _sdp(c, gs, hs, tol)
    if sol["status"] != "optimal":
        raise SolverError(f"direct boundary SDP returned {sol['status']}", np.nan, np.nan)
    return float(sol["x"][prog.k - 1])


def depolarize(rho: np.ndarray, p: float) -> np.ndarray:
    return p * np.eye(rho.shape[0]) / rho.shape[0] + (1 - p) * rho


def qubit_factory(theta: float, phi: float, mode: str):
    """``p -> template`` for depolarized qubit test states.

    ``mode`` is ``naive`` (phase-gate purifications), ``optimal``
    (overlap-maximizing purifications) or ``optimal+C`` (additionally the full
    ``rho_AC``, equivalent to Pauli measurements on ``C``).
    """
    ens, naive = sources.qubit_ensemble(theta, phi)
    if mode == "naive":
        src, use_c = naive, False
    elif mode == "optimal":
        src, use_c = sources.optimize_source(ens), False
    elif mode == "optimal+C":
        src, use_c = sources.optimize_source(ens), True
    else:
        raise ContractError(f"unknown purification mode {mode!r}")

    def factory(p: float) -> evm.EvmTemplate:
        outs = [depolarize(r, p) for r in ens.matrices]
        return evm.template_qubit(outs, src, use_c=use_c)

    return factory


def p_max_qubit(theta: float, phi: float = 0.0, mode: str = "optimal", width: float = 1e-4,
                tol: float = SOLVER_TOL) -> BoundaryPoint:
    """Largest depolarizing parameter for which effective entanglement is still verified."""
    factory = qubit_factory(theta, phi, mode)
    ok0, t0 = _is_classical(factory, 0.0, tol)
    if ok0:
        return BoundaryPoint(theta, 0.0, 0.0, 0.0, t0, "")
    pt = bisect(factory, 0.0, 1.0, width, tol)
    pt.x = theta
    pt.value = pt.lo  # largest quantum p
    return pt


def boundary_scan_qubit(theta_grid: Sequence[float], phi: float = 0.0, mode: str = "optimal",
                        width: float = 1e-4, tol: float = SOLVER_TOL) -> BoundaryCurve:
    pts = [p_max_qubit(th, phi, mode, width, tol) for th in theta_grid]
    return BoundaryCurve(pts, {"phi": phi, "mode": mode})


def displaced_template(a_out: float, var: float, source: sources.PurifiedSource, m: int = 0) -> evm.EvmTemplate:
    mom = evm.DisplacedMoments(a_out, var)
    if m == 0:
        return evm.template_displaced(mom, float(np.real(source.overlap)))
    return evm.template_with_c_unitaries(("1", "x", "p"), mom.conditional(), source, m)


@dataclass
class DomainMap:
    a_out: np.ndarray
    var: np.ndarray
    labels: np.ndarray  # shape (len(a_out), len(var)), verdict strings
    t_star: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def quantum(self) -> np.ndarray:
        return self.labels == QUANTUM

    def contour(self) -> np.ndarray:
        """Largest quantum variance per ``a_out`` row (NaN where none)."""
        out = np.full(len(self.a_out), np.nan)
        for r in range(len(self.a_out)):
            q = np.nonzero(self.quantum[r])[0]
            if q.size:
                out[r] = self.var[q.max()]
        return out


def domain_map_displaced(alpha: float, nbar: float, a_out_grid, var_grid, m: int = 0,
                         space: fock.FockSpace | None = None, tol: float = SOLVER_TOL) -> DomainMap:
    space = space or fock.FockSpace(16, max_deficit=2e-3)
    _, src = sources.cv_ensemble("displaced", fock.GaussianParams(nbar=nbar, alpha=alpha), space)
    a_out_grid, var_grid = np.asarray(a_out_grid, float), np.asarray(var_grid, float)
    labels = np.empty((a_out_grid.size, var_grid.size), dtype=object)
    ts = np.zeros(labels.shape)
    for r, a in enumerate(a_out_grid):
        for c, v in enumerate(var_grid):
            res = feasibility(displaced_template(a, v, src, m), tol)
            labels[r, c] = res.verdict
            ts[r, c] = res.t_star
    return DomainMap(a_out_grid, var_grid, labels, ts,
                     {"alpha": alpha, "nbar": nbar, "m": m, "overlap": float(np.real(src.overlap))})
