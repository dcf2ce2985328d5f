"""Measure-and-re-prepare (entanglement-breaking) strategies.

A strategy is a POVM ``{pi_i}`` together with one re-prepared state per
outcome; a test state ``rho`` is sent to ``sum_i tr(pi_i rho) sigma_i``.

For the squeezed scenario all strategies are used in their phase-symmetrized
form (equal mixture with the quarter-turn rotated strategy), so that the
output variances obey the swap symmetry the verification template assumes.
The figures of merit are then

    Var_0(p) = 1/4 sum_i [tr(pi_i rho0) e^{-2 r_i} + tr(pi_i rho1) e^{2 r_i}]
    Var_0(x) = 1/4 sum_i [tr(pi_i rho0) e^{2 r_i} + tr(pi_i rho1) e^{-2 r_i}]

for squeezed-vacuum re-preparations ``|r_i>``.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from . import evm, fock, sources
from .numerics import ContractError, DensityMatrix, as_array, fidelity, mat_sqrt_psd

log = logging.getLogger(__name__)

POVM_TOL = 1e-9


@dataclass(frozen=True)
class EbStrategy:
    """POVM elements plus re-prepared states.

    ``reprep`` holds :class:`fock.GaussianParams` for CV strategies (displaced
    squeezed thermal states) and 2x2 density matrices for qubit strategies.
    """

    povm: tuple
    reprep: tuple
    kind: str = "cv"

    def __post_init__(self):
        if len(self.povm) != len(self.reprep):
            raise ContractError("one re-prepared state per POVM element required")
        if self.kind not in ("cv", "qubit"):
            raise ContractError(f"unknown strategy kind {self.kind!r}")
        els = [as_array(p) for p in self.povm]
        total = sum(els)
        err = np.max(np.abs(total - np.eye(total.shape[0])))
        if err > POVM_TOL:
            raise ContractError(f"POVM elements sum to identity only within {err:.2e}")
        for e in els:
            if np.linalg.eigvalsh(0.5 * (e + e.conj().T))[0] < -1e-10:
                raise ContractError("POVM element is not PSD")
        object.__setattr__(self, "povm", tuple(els))

    def weights(self, rho) -> np.ndarray:
        rho = as_array(rho)
        return np.array([np.real(np.trace(e @ rho)) for e in self.povm])

    def to_json(self) -> str:
        def enc(x):
            if isinstance(x, fock.GaussianParams):
                return {"r": x.r, "nbar": x.nbar, "alpha": [np.real(x.alpha), np.imag(x.alpha)]}
            m = as_array(x)
            return [[[z.real, z.imag] for z in row] for row in m]

        return json.dumps({"kind": self.kind, "povm": [enc(p) for p in self.povm], "reprep": [enc(r) for r in self.reprep]})


def _gauss_moments(g: fock.GaussianParams) -> np.ndarray:
    """(mean_x, mean_p, <x^2>, <p^2>) of ``D(alpha) S(r) rho_th(nbar)``."""
    v = (2 * g.nbar + 1) / 2
    mx, mp = np.sqrt(2) * np.real(g.alpha), np.sqrt(2) * np.imag(g.alpha)
    return np.array([mx, mp, v * np.exp(2 * g.r) + mx**2, v * np.exp(-2 * g.r) + mp**2])


def _rotate(mom: np.ndarray) -> np.ndarray:
    # moments of U sigma U^dag with U = exp(-i pi/2 n): x -> p, p -> -x
    mx, mp, xx, pp = mom
    return np.array([mp, -mx, pp, xx])


def _to_dict(mom: np.ndarray) -> dict[str, float]:
    mx, mp, xx, pp = mom
    return {"mean_x": mx, "mean_p": mp, "var_x": xx - mx**2, "var_p": pp - mp**2}


def helstrom_povm(rho0, rho1, p0: float = 0.5, p1: float = 0.5) -> tuple[tuple[np.ndarray, np.ndarray], float]:
    """Minimum-error POVM ``(Pi_0, Pi_1)`` and its error probability."""
    a, b = as_array(rho0), as_array(rho1)
    if a.shape != b.shape:
        raise ContractError("dimension mismatch")
    gam = p0 * a - p1 * b
    lam, v = np.linalg.eigh(0.5 * (gam + gam.conj().T))
    pos = v[:, lam >= 0]
    pi0 = pos @ pos.conj().T
    pi1 = np.eye(a.shape[0]) - pi0
    perr = 0.5 * (1.0 - np.sum(np.abs(lam))) if np.isclose(p0 + p1, 1.0) else np.nan
    return (pi0, pi1), float(perr)


def simulate_eb(strategy: EbStrategy, ensemble: sources.Ensemble):
    """Outputs of each test state.

    CV strategies give a list of moment dicts; qubit strategies a list of
    output density matrices.
    """
    outs = []
    for rho in ensemble.matrices:
        w = strategy.weights(rho)
        if strategy.kind == "qubit":
            outs.append(sum(wi * as_array(s) for wi, s in zip(w, strategy.reprep)))
        else:
            mom = sum(wi * _gauss_moments(g) for wi, g in zip(w, strategy.reprep))
            outs.append(_to_dict(mom))
    return outs


def symmetrized_moments(strategy: EbStrategy, ensemble: sources.Ensemble) -> evm.MeasuredMoments:
    """Moments of output 0 under the equal mixture of the strategy and its rotated copy.

    Assumes ``rho1 = U rho0 U^dag`` for the quarter-turn ``U`` (true for the
    squeezed pair), so the rotated copy acting on ``rho0`` contributes the
    rotated output of ``rho1``.
    """
    if strategy.kind != "cv":
        raise ContractError("symmetrized moments need a CV strategy")
    rho0, rho1 = ensemble.matrices
    w0, w1 = strategy.weights(rho0), strategy.weights(rho1)
    m0 = sum(wi * _gauss_moments(g) for wi, g in zip(w0, strategy.reprep))
    m1 = sum(wi * _rotate(_gauss_moments(g)) for wi, g in zip(w1, strategy.reprep))
    d = _to_dict(0.5 * (m0 + m1))
    return evm.MeasuredMoments(d["var_x"], d["var_p"], d["mean_x"], d["mean_p"])


def squeezed_merit(t0: np.ndarray, t1: np.ndarray, r: np.ndarray) -> tuple[float, float]:
    """Symmetrized ``(Var_0(x), Var_0(p))`` for squeezed-vacuum re-preparations."""
    e = np.exp(2 * np.asarray(r))
    vx = 0.25 * np.sum(t0 * e + t1 / e)
    vp = 0.25 * np.sum(t0 / e + t1 * e)
    return float(vx), float(vp)


def fidelity_floor(rho0, rho1) -> float:
    """Global minimum of ``Var_0(p)`` over all EB strategies: ``F(rho0, rho1)/2``."""
    return 0.5 * fidelity(rho0, rho1)


def _pure_pair_2d(s: float) -> tuple[np.ndarray, np.ndarray]:
    g = 0.5 * np.arccos(np.clip(s, -1.0, 1.0))
    v0 = np.array([np.cos(g), np.sin(g)])
    v1 = np.array([np.cos(g), -np.sin(g)])
    return np.outer(v0, v0), np.outer(v1, v1)


def _povm_from_params(x: np.ndarray, n: int) -> list[np.ndarray]:
    gs = [x[4 * k : 4 * k + 4].reshape(2, 2) for k in range(n)]
    els = [g.T @ g + 1e-12 * np.eye(2) for g in gs]
    s = sum(els)
    lam, v = np.linalg.eigh(s)
    sinv = (v / np.sqrt(lam)) @ v.T
    return [sinv @ e @ sinv for e in els]


@dataclass
class PovmPoint:
    var_x: float
    var_p: float
    povm: list = field(repr=False, default_factory=list)
    r: np.ndarray = field(repr=False, default=None)
    spread: float = 0.0


def optimize_povm_pure_squeezed(
    r_in: float,
    var_x_targets: Sequence[float],
    n_elements: int = 4,
    seeds: int = 20,
    rng: np.random.Generator | None = None,
    r_bound: float = 5.0,
) -> list[PovmPoint]:
    """Numerically minimized ``Var_0(p)`` at fixed ``Var_0(x)`` for pure squeezed test states.

    The two test states span a plane; POVM elements are real 2x2 matrices
    ``S^{-1/2} G_i^T G_i S^{-1/2}`` (``S = sum G^T G``) and every element
    re-prepares a squeezed vacuum ``|r_i>``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    s = float(np.cosh(2 * r_in) ** -0.5)
    rho0, rho1 = _pure_pair_2d(s)
    n = n_elements

    def split(x):
        povm = _povm_from_params(x[: 4 * n], n)
        t0 = np.array([np.trace(e @ rho0) for e in povm])
        t1 = np.array([np.trace(e @ rho1) for e in povm])
        return povm, t0, t1, x[4 * n :]

    def vp(x):
        _, t0, t1, r = split(x)
        return squeezed_merit(t0, t1, r)[1]

    def vx(x):
        _, t0, t1, r = split(x)
        return squeezed_merit(t0, t1, r)[0]

    bounds = [(None, None)] * (4 * n) + [(-r_bound, r_bound)] * n
    out = []
    for c in var_x_targets:
        vals = []
        best = None
        for k in range(seeds):
            x0 = np.concatenate([rng.normal(size=4 * n), rng.uniform(-1, 1, size=n)])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = optimize.minimize(
                    vp, x0, method="SLSQP", bounds=bounds,
                    constraints=[{"type": "eq", "fun": lambda x, c=c: vx(x) - c}],
                    options={"maxiter": 500, "ftol": 1e-12},
                )
            if abs(vx(res.x) - c) > 1e-6:
                continue
            vals.append(res.fun)
            if best is None or res.fun < best.fun:
                best = res
        if best is None:
            out.append(PovmPoint(c, np.nan))
            log.warning("no feasible POVM found at Var_x=%g", c)
            continue
        spread = float(np.sort(vals)[min(len(vals) - 1, 2)] - best.fun) if len(vals) > 1 else 0.0
        if spread > 1e-4:
            log.info("multistart spread %.2e at Var_x=%g", spread, c)
        povm, _, _, r = split(best.x)
        out.append(PovmPoint(c, float(best.fun), povm, np.asarray(r), spread))
    return out


def _h(rho0: np.ndarray, rho1: np.ndarray, lam: float) -> float:
    # min over EB strategies of Var_p + lam Var_x
    return 0.5 * fidelity(rho0 + lam * rho1, rho1 + lam * rho0)


@dataclass
class ClassicalBoundary:
    var_x: np.ndarray
    var_p: np.ndarray
    lam: np.ndarray
    provenance: list
    level_b: float
    onset_b: float

    @property
    def region_A(self) -> list[tuple[float, float]]:
        return [(x, p) for x, p, pr in zip(self.var_x, self.var_p, self.provenance) if pr == "A"]

    def value(self, c) -> np.ndarray:
        return np.interp(c, self.var_x, self.var_p)


def lagrange_point(rho0, rho1, c: float, lam_max: float = 1e3, xtol: float = 1e-8) -> tuple[float, float]:
    """``(Var_p*, lambda*)`` at ``Var_x = c`` from the dual of the Lagrange construction.

    ``Var_p*(c) = max_{lambda >= 0} [h(lambda) - lambda c]`` with ``h`` the
    (concave) optimal value of ``Var_p + lambda Var_x``.
    """
    a, b = as_array(rho0), as_array(rho1)
    res = optimize.minimize_scalar(
        lambda lam: -(_h(a, b, lam) - lam * c), bounds=(0.0, lam_max), method="bounded",
        options={"xatol": xtol},
    )
    lam = float(res.x)
    val = _h(a, b, lam) - lam * c
    v0 = _h(a, b, 0.0)
    if v0 >= val:
        return v0, 0.0
    return float(val), lam


def lagrange_boundary(rho0, rho1, c_grid: Sequence[float], lam_tol: float = 1e-6) -> ClassicalBoundary:
    """Classical boundary ``Var_0(p)`` vs ``Var_0(x)``; points with ``lambda* ~ 0`` are region B."""
    a, b = as_array(rho0), as_array(rho1)
    f2 = _h(a, b, 0.0)
    c_grid = np.asarray(c_grid, float)
    if np.any(c_grid <= f2):
        raise ContractError(f"Var_x values must exceed the fidelity floor {f2:.6f}")
    vps, lams, prov = [], [], []
    for c in c_grid:
        v, lam = lagrange_point(a, b, c)
        vps.append(v)
        lams.append(lam)
        prov.append("B" if lam < lam_tol else "A")
    eps = 1e-6
    onset = (_h(a, b, eps) - f2) / eps
    return ClassicalBoundary(c_grid, np.array(vps), np.array(lams), prov, f2, float(onset))


def usd_kappa(alpha: complex, space: fock.FockSpace | None = None, tol: float = 1e-9) -> float:
    """Largest ``kappa`` with ``1 - kappa(|alpha><alpha| + |i alpha><i alpha|) >= 0`` by bisection."""
    space = space or fock.FockSpace(40, max_deficit=1e-6)
    u = fock.phase_rotation(space)
    v0 = fock.coherent(space, alpha)
    v1 = u.conj().T @ v0
    p = np.outer(v0, v0.conj()) + np.outer(v1, v1.conj())
    top = np.linalg.eigvalsh(p)[-1]
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if 1.0 - mid * top >= -1e-15:
            lo = mid
        else:
            hi = mid
    return lo


def usd_kappa_closed(alpha: complex) -> float:
    return 1.0 / (1.0 + np.exp(-abs(alpha) ** 2))


def q_coefficients(r: float, nbar: float) -> dict[str, float]:
    """Q-function coefficients of the p-squeezed thermal state ``S(r) rho_th S(r)^dag``.

    ``Q(alpha) = exp[(At - 1)|alpha|^2 - Re(Bt alpha*^2)] / (pi sqrt(D))`` with
    ``D = (1 + A)^2 - B^2``, ``At = 1 - (1 + A)/D``, ``Bt = -B/D``. The partner
    state (``-r``) has ``B -> -B``.
    """
    a = nbar + (2 * nbar + 1) * np.sinh(r) ** 2
    b = (2 * nbar + 1) * np.sinh(r) * np.cosh(r)
    d = (1 + a) ** 2 - b**2
    den = nbar**2 + (nbar + 0.5) * (1 + np.cosh(2 * r))
    return {
        "A": a,
        "B": b,
        "D": d,
        "At": 1 - (1 + a) / d,
        "Bt": -b / d,
        "At_ref": nbar * (nbar + 1) / den,
        "Bt1_ref": (nbar + 0.5) * np.sinh(2 * r) / den,
    }


def q_function(alpha: complex, r: float, nbar: float) -> float:
    c = q_coefficients(r, nbar)
    z = complex(alpha)
    expo = (c["At"] - 1) * abs(z) ** 2 - np.real(c["Bt"] * np.conj(z) ** 2)
    return float(np.exp(expo) / (np.pi * np.sqrt(c["D"])))


def usd_slope(alpha: complex, r: float, nbar: float) -> float:
    """Limit slope ``Q_1(alpha)/Q_0(alpha) = exp[-Bt_1 (alpha*^2 + alpha^2)]``."""
    bt1 = q_coefficients(r, nbar)["Bt1_ref"]
    z = complex(alpha)
    return float(np.exp(-bt1 * np.real(np.conj(z) ** 2 + z**2)))


@dataclass
class UsdLine:
    alpha: np.ndarray
    kappa: np.ndarray
    slope: np.ndarray
    slope_fock: np.ndarray
    bt1: float
    level: float


def usd_type_line(r: float, nbar: float, alpha_grid: Sequence[float], space: fock.FockSpace | None = None) -> UsdLine:
    """Slopes of the line from the fidelity-floor point towards the USD-type strategy.

    ``slope_fock`` is the truncated-Fock value ``<alpha|rho1|alpha>/<alpha|rho0|alpha>``,
    an independent check of the closed form.
    """
    space = space or fock.FockSpace(40, max_deficit=1e-6)
    alpha_grid = np.asarray(alpha_grid, float)
    if np.any(np.diff(alpha_grid) <= 0):
        raise ContractError("alpha grid must be increasing")
    rho0 = fock.squeezed_thermal(space, r, nbar).matrix
    rho1 = fock.squeezed_thermal(space, -r, nbar).matrix
    kap, m, mf = [], [], []
    for a in alpha_grid:
        k = usd_kappa(a, space)
        if abs(k - usd_kappa_closed(a)) > 1e-6:
            raise ContractError(f"admissible scale {k} disagrees with closed form at alpha={a}")
        v = fock.coherent(space, a)
        kap.append(k)
        m.append(usd_slope(a, r, nbar))
        mf.append(np.real(np.vdot(v, rho1 @ v)) / np.real(np.vdot(v, rho0 @ v)))
    return UsdLine(alpha_grid, np.array(kap), np.array(m), np.array(mf),
                   q_coefficients(r, nbar)["Bt1_ref"], 0.5 * fidelity(rho0, rho1))


def usd_strategy_point(r: float, nbar: float, alpha: float, r_rep: float,
                       space: fock.FockSpace | None = None) -> tuple[float, float]:
    """``(Var_x, Var_p)`` of the three-outcome USD-type strategy (symmetrized form)."""
    space = space or fock.FockSpace(40, max_deficit=1e-6)
    rho0 = fock.squeezed_thermal(space, r, nbar).matrix
    rho1 = fock.squeezed_thermal(space, -r, nbar).matrix
    u = fock.phase_rotation(space)
    k = usd_kappa_closed(alpha)
    v = fock.coherent(space, alpha)
    pi0 = k * np.outer(v, v.conj())
    pi1 = u.conj().T @ pi0 @ u
    piq = np.eye(space.dim) - pi0 - pi1
    t0 = np.array([np.real(np.trace(e @ rho0)) for e in (pi0, pi1, piq)])
    t1 = np.array([np.real(np.trace(e @ rho1)) for e in (pi0, pi1, piq)])
    return squeezed_merit(t0, t1, np.array([r_rep, -r_rep, 0.0]))


def qubit_eb_threshold(theta: float, phi: float = 0.0) -> float:
    """Depolarizing parameter matched by Helstrom measurement and re-preparation.

    Re-prepared states ``sigma_k`` are chosen so that the outputs are exactly
    ``(1 - p) rho_i + p 1/2``; the smallest ``p`` for which the required
    Bloch vectors stay inside the ball is returned.
    """
    ens, _ = sources.qubit_ensemble(theta, phi)
    rhos = ens.matrices
    (pi0, pi1), _ = helstrom_povm(*rhos)
    mm = np.array([[np.real(np.trace(pk @ r)) for pk in (pi0, pi1)] for r in rhos])
    if abs(np.linalg.det(mm)) < 1e-12:
        raise ContractError("Helstrom outcome statistics are singular: states indistinguishable")
    bloch = np.array([_bloch(r) for r in rhos])
    w = np.linalg.solve(mm, bloch)
    top = np.max(np.linalg.norm(w, axis=1))
    return float(max(0.0, 1.0 - 1.0 / top)) if top > 0 else 1.0


_PAULI = (
    np.array([[0, 1], [1, 0]], complex),
    np.array([[0, -1j], [1j, 0]], complex),
    np.array([[1, 0], [0, -1]], complex),
)


def _bloch(rho) -> np.ndarray:
    rho = as_array(rho)
    return np.array([np.real(np.trace(rho @ s)) for s in _PAULI])


def _from_bloch(v) -> np.ndarray:
    return 0.5 * (np.eye(2) + sum(c * s for c, s in zip(v, _PAULI)))


def qubit_eb_strategy(theta: float, phi: float = 0.0) -> tuple[EbStrategy, float]:
    """The Helstrom strategy of :func:`qubit_eb_threshold` and its depolarizing parameter."""
    ens, _ = sources.qubit_ensemble(theta, phi)
    rhos = ens.matrices
    (pi0, pi1), _ = helstrom_povm(*rhos)
    p = qubit_eb_threshold(theta, phi)
    mm = np.array([[np.real(np.trace(pk @ r)) for pk in (pi0, pi1)] for r in rhos])
    bloch = np.array([(1 - p) * _bloch(r) for r in rhos])
    w = np.linalg.solve(mm, bloch)
    norms = np.linalg.norm(w, axis=1)
    w = w / np.maximum(norms, 1.0)[:, None]
    return EbStrategy((pi0, pi1), tuple(_from_bloch(v) for v in w), kind="qubit"), p


def displaced_eb_moments(ensemble: sources.Ensemble, beta: float, nbar_rep: float = 0.0,
                         povm=None) -> evm.DisplacedMoments:
    """Binary-outcome strategy re-preparing displaced squeezed states at ``+-beta``.

    The squeezing is chosen so the outputs have equal ``x`` and ``p``
    variances, which the displaced template assumes. ``povm`` defaults to
    Helstrom and is symmetrized with the half-turn that swaps the test states.
    """
    rho0, rho1 = ensemble.matrices
    if povm is None:
        (pi0, _), _ = helstrom_povm(rho0, rho1)
    else:
        pi0 = as_array(povm)
    d = rho0.shape[0]
    half = np.diag((-1.0) ** np.arange(d))
    pi0 = 0.5 * (pi0 + half @ (np.eye(d) - pi0) @ half)
    pc = float(np.real(np.trace(pi0 @ rho0)))
    mu = 2 * pc - 1
    v = (2 * nbar_rep + 1) / 2
    # Var_x = v e^{2r} + 2 beta^2 (1 - mu^2) = Var_p = v e^{-2r}
    r = -0.5 * np.arcsinh(beta**2 * (1 - mu**2) / v)
    return evm.DisplacedMoments(beta * mu, v * np.exp(-2 * r))


def random_povm(dim: int, n: int, rng: np.random.Generator) -> list[np.ndarray]:
    gs = [rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)) for _ in range(n)]
    els = [g.conj().T @ g for g in gs]
    s = sum(els)
    sinv = np.linalg.inv(mat_sqrt_psd(s))
    els = [sinv @ e @ sinv.conj().T for e in els]
    els = [0.5 * (e + e.conj().T) for e in els]
    els[-1] = els[-1] + (np.eye(dim) - sum(els))
    return els


def random_cv_strategy(dim: int, rng: np.random.Generator, n: int | None = None) -> EbStrategy:
    n = n or int(rng.integers(2, 5))
    povm = random_povm(dim, n, rng)
    reprep = tuple(
        fock.GaussianParams(r=float(rng.uniform(-1, 1)), nbar=float(rng.exponential(0.2)),
                            alpha=complex(rng.normal(scale=0.5), rng.normal(scale=0.5)))
        for _ in range(n)
    )
    return EbStrategy(tuple(povm), reprep)


def random_qubit_strategy(rng: np.random.Generator, n: int | None = None) -> EbStrategy:
    n = n or int(rng.integers(2, 5))
    povm = random_povm(2, n, rng)
    states = []
    for _ in range(n):
        v = rng.normal(size=3)
        v *= rng.uniform(0, 1) / np.linalg.norm(v)
        states.append(_from_bloch(v))
    return EbStrategy(tuple(povm), tuple(states), kind="qubit")
