"""Expectation-value matrices (EVMs) and affine EVM templates.

An EVM is indexed by triples ``(i, j, k)``: ``i`` labels Alice's operator
``|phi><i|``, ``j`` one of Bob's operators, ``k`` one of the operators on the
purifying system ``C``. Its entries are ``Tr(rho A_i^dag A_l (x) B_j^dag B_m (x)
C_k^dag C_n)`` and with Alice's choice the partial transpose on ``A`` is a block
transposition of the index ``i``.

Templates hold the EVM that is compatible with a set of measured moments:
``M(theta) = M0 + sum_a theta_a M_a`` with real ``theta``. Template rows are
rescaled by ``1/sqrt(p_i)`` so diagonal ``A`` blocks hold conditional moments of
each output state (the layout used for the squeezed-state matrix with entries
``Var_0(x)`` on the diagonal). The rescaling is a congruence and commutes with
the block transposition, so it changes no verdict.

Bob's quadrature operators enter templates symbolically through the products

    x x = xx,  p p = pp,  x p = S + i/2,  p x = S - i/2,

where ``S`` is the symmetrized product. Operators on ``C`` are Weyl unitaries,
whose products are again Weyl unitaries up to a phase.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import fock
from .numerics import ContractError, DensityMatrix, as_array, partial_trace
from .sources import PurifiedSource

Label = tuple  # (i, j, k)

_BPROD = {
    ("1", "1"): [(1.0, "1")],
    ("1", "x"): [(1.0, "x")],
    ("x", "1"): [(1.0, "x")],
    ("1", "p"): [(1.0, "p")],
    ("p", "1"): [(1.0, "p")],
    ("x", "x"): [(1.0, "xx")],
    ("p", "p"): [(1.0, "pp")],
    ("x", "p"): [(1.0, "S"), (0.5j, "1")],
    ("p", "x"): [(1.0, "S"), (-0.5j, "1")],
}


@dataclass(frozen=True)
class MeasuredMoments:
    """Quadrature data of the output belonging to test state 0.

    With ``symmetric`` set, the output of test state 1 is the quarter-turn
    phase rotation of output 0: its ``x`` and ``p`` variances are swapped.
    """

    var_x0: float
    var_p0: float
    mean_x0: float = 0.0
    mean_p0: float = 0.0
    symmetric: bool = True

    def __post_init__(self):
        if self.var_x0 <= 0 or self.var_p0 <= 0:
            raise ContractError("variances must be positive")
        if self.var_x0 * self.var_p0 < 0.25 - 1e-9:
            raise ContractError(
                f"Var(x) Var(p) = {self.var_x0 * self.var_p0:.6f} < 1/4 violates the uncertainty relation"
            )
        if not self.symmetric:
            raise ContractError("the squeezed-state template requires phase-symmetric data")

    def conditional(self) -> dict[tuple[int, str], float]:
        mx, mp = self.mean_x0, self.mean_p0
        return {
            (0, "x"): mx,
            (0, "p"): mp,
            (0, "xx"): self.var_x0 + mx**2,
            (0, "pp"): self.var_p0 + mp**2,
            (1, "x"): mp,
            (1, "p"): -mx,
            (1, "xx"): self.var_p0 + mp**2,
            (1, "pp"): self.var_x0 + mx**2,
        }


@dataclass(frozen=True)
class DisplacedMoments:
    """Outputs with means ``+-(sqrt(2) a_out, 0)`` and common variance ``V`` in ``x`` and ``p``."""

    a_out: float
    var: float

    def __post_init__(self):
        if self.var < 0.5 - 1e-9:
            raise ContractError(f"variance {self.var} below the vacuum level 1/2")

    def conditional(self) -> dict[tuple[int, str], float]:
        out = {}
        for i, sign in ((0, 1.0), (1, -1.0)):
            mx = sign * np.sqrt(2) * self.a_out
            out[(i, "x")] = mx
            out[(i, "p")] = 0.0
            out[(i, "xx")] = self.var + mx**2
            out[(i, "pp")] = self.var
        return out


@dataclass(frozen=True)
class EvmTemplate:
    """Affine family ``M(theta) = M0 + sum_a theta_a basis[a]`` of Hermitian matrices."""

    M0: np.ndarray
    basis: np.ndarray
    labels: tuple
    pt_index: np.ndarray
    provenance: np.ndarray = field(repr=False)
    param_names: tuple = ()

    @property
    def dim(self) -> int:
        return self.M0.shape[0]

    @property
    def n_params(self) -> int:
        return self.basis.shape[0]

    def evaluate(self, theta=None) -> np.ndarray:
        if theta is None or self.n_params == 0:
            return self.M0.copy()
        return self.M0 + np.tensordot(np.asarray(theta, float), self.basis, axes=1)

    def pt(self, m: np.ndarray) -> np.ndarray:
        return m.reshape(-1)[self.pt_index].reshape(m.shape)

    def fit(self, target: np.ndarray) -> tuple[np.ndarray, float]:
        """Least-squares parameters reproducing ``target``; returns ``(theta, max residual)``."""
        target = np.asarray(target, complex)
        if self.n_params == 0:
            return np.zeros(0), float(np.max(np.abs(target - self.M0)))
        a = self.basis.reshape(self.n_params, -1).T
        a = np.vstack([a.real, a.imag])
        d = (target - self.M0).reshape(-1)
        b = np.concatenate([d.real, d.imag])
        theta, *_ = np.linalg.lstsq(a, b, rcond=None)
        return theta, float(np.max(np.abs(self.evaluate(theta) - target)))

    def to_json(self) -> str:
        """Debug dump: fixed entries with provenance and the basis matrices."""
        fixed = []
        for r in range(self.dim):
            for c in range(self.dim):
                v = self.M0[r, c]
                fixed.append({"row": r, "col": c, "value": [v.real, v.imag], "provenance": self.provenance[r, c]})
        return json.dumps(
            {
                "dim": self.dim,
                "labels": [list(map(str, lab)) for lab in self.labels],
                "fixed": fixed,
                "params": list(self.param_names),
                "basis": [[[z.real, z.imag] for z in b.reshape(-1)] for b in self.basis],
            }
        )


def pt_permutation(labels: Sequence[Label], transpose_c: bool = False) -> np.ndarray:
    """Flat index map of the block transposition on ``A`` (optionally also ``C``).

    Swapping the ``C`` index is only a partial transposition when the
    operators on ``C`` are transposition-compatible in the same way as Alice's.
    """
    pos = {lab: n for n, lab in enumerate(labels)}
    n = len(labels)
    idx = np.empty(n * n, dtype=int)
    for r, (i, j, k) in enumerate(labels):
        for c, (l, m, q) in enumerate(labels):
            if transpose_c:
                src = (pos[(l, j, q)], pos[(i, m, k)])
            else:
                src = (pos[(l, j, k)], pos[(i, m, q)])
            idx[r * n + c] = src[0] * n + src[1]
    return idx


def block_partial_transpose(chi, labels: Sequence[Label], transpose_c: bool = False) -> np.ndarray:
    chi = as_array(chi)
    return chi.reshape(-1)[pt_permutation(labels, transpose_c)].reshape(chi.shape)


def evm_labels(n_a: int, n_b: int, n_c: int = 1) -> list[Label]:
    return [(i, j, k) for i in range(n_a) for j in range(n_b) for k in range(n_c)]


def evm_exact(state, dims: tuple[int, int, int], a_ops, b_ops, c_ops=None) -> np.ndarray:
    """EVM of a state on ``A (x) B (x) C``.

    ``state`` is a state vector or a density matrix. Entries are computed as a
    Gram matrix of the vectors ``(A_i (x) B_j (x) C_k)|v>`` over an
    eigen-decomposition of the state, which makes the result PSD for any valid
    state; non-positive inputs such as partial transposes are handled linearly.
    """
    d_a, d_b, d_c = dims
    c_ops = [np.eye(d_c)] if c_ops is None else c_ops
    arr = np.asarray(state.matrix if isinstance(state, DensityMatrix) else state, dtype=complex)
    if arr.ndim == 1:
        weights, vecs = np.array([1.0]), arr[:, None]
    else:
        if arr.shape[0] != d_a * d_b * d_c:
            raise ContractError(f"state dimension {arr.shape[0]} does not match dims {dims}")
        weights, vecs = np.linalg.eigh(0.5 * (arr + arr.conj().T))
        keep = np.abs(weights) > 1e-15
        weights, vecs = weights[keep], vecs[:, keep]
    if vecs.shape[0] != d_a * d_b * d_c:
        raise ContractError(f"state dimension {vecs.shape[0]} does not match dims {dims}")
    n = len(a_ops) * len(b_ops) * len(c_ops)
    chi = np.zeros((n, n), dtype=complex)
    for w, v in zip(weights, vecs.T):
        t = v.reshape(d_a, d_b, d_c)
        phis = []
        for a in a_ops:
            ta = np.einsum("xa,abc->xbc", as_array(a), t)
            for b in b_ops:
                tb = np.einsum("yb,xbc->xyc", as_array(b), ta)
                for c in c_ops:
                    phis.append(np.einsum("zc,xyc->xyz", as_array(c), tb).reshape(-1))
        phi = np.array(phis)
        chi += w * phi.conj() @ phi.T
    return chi


def alice_ops(n: int = 2, phi=None) -> list[np.ndarray]:
    """The compact set ``{|phi><i|}``; ``phi`` drops out of every EVM entry."""
    phi = np.eye(n)[0] if phi is None else np.asarray(phi, complex)
    return [np.outer(phi, np.eye(n)[i]) for i in range(n)]


def conditional_scaling(chi: np.ndarray, labels: Sequence[Label], probs) -> np.ndarray:
    """Rescale rows and columns by ``1/sqrt(p_i)`` (template normalization)."""
    s = np.array([1.0 / np.sqrt(probs[lab[0]]) for lab in labels])
    return chi * np.outer(s, s)


def _weyl_algebra(d: int, c_labels: Sequence[tuple[int, int]]):
    mats = {lab: fock.weyl_operator(d, *lab) for lab in c_labels}

    def product(wk, wn):
        # W_k^dag W_n = phase * W(canonical)
        p = mats[wk].conj().T @ mats[wn]
        lab = ((wn[0] - wk[0]) % d, (wn[1] - wk[1]) % d)
        w = fock.weyl_operator(d, *lab)
        return lab, complex(np.trace(w.conj().T @ p) / d)

    def adjoint(w):
        # W(a,b)^dag = kappa * W(-a,-b)
        lab = ((-w[0]) % d, (-w[1]) % d)
        kappa = np.trace(fock.weyl_operator(d, *lab).conj().T @ fock.weyl_operator(d, *w).conj().T) / d
        return lab, complex(kappa)

    return product, adjoint


def build_template(
    b_ops: Sequence[str],
    measured: dict[tuple[int, str], float],
    rho_ac: np.ndarray,
    dim_c: int = 1,
    c_labels: Sequence[tuple[int, int]] = ((0, 0),),
    probs=(0.5, 0.5),
    transpose_c: bool = False,
) -> EvmTemplate:
    """Assemble a template from symbolic Bob operators and Weyl operators on ``C``.

    Each entry ``Tr(rho |i><l| (x) b (x) w)`` is
      * a source value when ``b`` is the identity (known from ``rho_ac``),
      * a measured conditional moment when ``i == l`` and ``w`` is the identity,
      * a free parameter otherwise, tied to its Hermitian partner.
    """
    c_labels = list(c_labels)
    if c_labels[0] != (0, 0):
        raise ContractError("the first operator on C must be the identity")
    product, adjoint = _weyl_algebra(dim_c, c_labels)
    labels = [(i, b, ci) for i in range(2) for b in b_ops for ci in range(len(c_labels))]
    n = len(labels)
    rho_ac = np.asarray(rho_ac, complex)
    if rho_ac.shape != (2 * dim_c, 2 * dim_c):
        raise ContractError(f"rho_AC must be {2 * dim_c}x{2 * dim_c}")
    weyl_cache = {}

    def source_value(i, l, w):
        if w not in weyl_cache:
            weyl_cache[w] = fock.weyl_operator(dim_c, *w)
        wm = weyl_cache[w]
        block = rho_ac[l * dim_c : (l + 1) * dim_c, i * dim_c : (i + 1) * dim_c]
        return complex(np.sum(block.T * wm)) / np.sqrt(probs[i] * probs[l])

    params: dict = {}
    names: list[str] = []
    coeffs: list[dict] = []

    def param_terms(key):
        """Real parameters and complex coefficients representing the unknown ``g(key)``."""
        i, l, mono, w = key
        w_adj, kappa = adjoint(w)
        partner = (l, i, mono, w_adj)
        canon = min(key, partner)
        if canon not in params:
            if canon == partner:
                params[canon] = [len(names)]
                names.append(f"g{canon}")
            else:
                params[canon] = [len(names), len(names) + 1]
                names.extend([f"re g{canon}", f"im g{canon}"])
        ids = params[canon]
        if canon == partner:
            _, kap = adjoint(canon[3])
            return [(ids[0], np.exp(-0.5j * np.angle(kap)))]
        if key == canon:
            return [(ids[0], 1.0), (ids[1], 1j)]
        _, kap = adjoint(canon[3])
        return [(ids[0], 1.0 / kap), (ids[1], -1j / kap)]

    m0 = np.zeros((n, n), dtype=complex)
    prov = np.empty((n, n), dtype=object)
    entries: list[tuple[int, int, int, complex]] = []
    for r, (i, bj, ck) in enumerate(labels):
        for c, (l, bm, cn) in enumerate(labels):
            w, phase = product(c_labels[ck], c_labels[cn])
            kinds = set()
            for coef, mono in _BPROD[(bj, bm)]:
                cf = coef * phase
                if mono == "1":
                    m0[r, c] += cf * source_value(i, l, w)
                    kinds.add("commutator" if bj != bm else "source")
                elif i == l and w == (0, 0) and (i, mono) in measured:
                    m0[r, c] += cf * measured[(i, mono)]
                    kinds.add("measured")
                else:
                    for pid, z in param_terms((i, l, mono, w)):
                        entries.append((pid, r, c, cf * z))
                    kinds.add("free")
            if "free" in kinds:
                prov[r, c] = "free+commutator" if "commutator" in kinds else "free"
            else:
                prov[r, c] = "+".join(sorted(kinds))
    basis = np.zeros((len(names), n, n), dtype=complex)
    for pid, r, c, z in entries:
        basis[pid, r, c] += z
    m0 = 0.5 * (m0 + m0.conj().T)
    basis = 0.5 * (basis + basis.conj().transpose(0, 2, 1))
    return EvmTemplate(m0, basis, tuple(labels), pt_permutation(labels, transpose_c), prov, tuple(names))


def _pure_rho_a(s: float, probs=(0.5, 0.5)) -> np.ndarray:
    off = np.sqrt(probs[0] * probs[1]) * s
    return np.array([[probs[0], off], [off, probs[1]]], dtype=complex)


def template_squeezed(moments: MeasuredMoments, s: float) -> EvmTemplate:
    """4x4 template over Bob's ``{x, p}`` for two phase-conjugate squeezed test states.

    Row order ``(0x, 0p, 1x, 1p)``; the free parameters are the real ``b1, b2``
    and the complex ``c1, c2, c3``.
    """
    s = float(np.clip(s, 0.0, 1.0))
    return build_template(("x", "p"), moments.conditional(), _pure_rho_a(s))


def template_displaced(moments: DisplacedMoments, s: float) -> EvmTemplate:
    """6x6 template over Bob's ``{1, x, p}`` for two displaced test states."""
    s = float(np.clip(s, 0.0, 1.0))
    return build_template(("1", "x", "p"), moments.conditional(), _pure_rho_a(s))


def template_with_c_unitaries(
    b_ops: Sequence[str],
    measured: dict[tuple[int, str], float],
    source: PurifiedSource,
    m: int,
    insert_identity: bool = False,
    transpose_c: bool = False,
) -> EvmTemplate:
    """Template enlarged by ``m`` generalized spin operators on the purifying system.

    Source data enter through ``rho_AC``: directly for entries whose Bob part is
    the identity and through the commutator offsets of the ``x p`` / ``p x``
    entries. ``insert_identity`` adds Bob's identity to ``b_ops`` when missing.
    """
    b_ops = tuple(b_ops)
    if insert_identity and "1" not in b_ops:
        b_ops = ("1",) + b_ops
    if m == 0:
        c_labels = [(0, 0)]
        rho_a = partial_trace(source.rho_AC, (2, source.dim_C), (0,))
        return build_template(b_ops, measured, rho_a, 1, c_labels, source.probs, transpose_c)
    c_labels = [(0, 0)] + fock.weyl_labels(source.dim_C, m)
    return build_template(b_ops, measured, source.rho_AC, source.dim_C, c_labels, source.probs, transpose_c)


def quadrature_ops(space: fock.FockSpace, b_ops: Sequence[str]) -> list[np.ndarray]:
    x, p = fock.quadratures(space)
    table = {"1": np.eye(space.dim, dtype=complex), "x": x, "p": p}
    return [table[b] for b in b_ops]


def _hermitian_basis(n: int) -> list[np.ndarray]:
    out = []
    for k in range(n):
        e = np.zeros((n, n), complex)
        e[k, k] = 1
        out.append(e)
    for k in range(n):
        for l in range(k + 1, n):
            e = np.zeros((n, n), complex)
            e[k, l] = e[l, k] = 1 / np.sqrt(2)
            out.append(e)
            e = np.zeros((n, n), complex)
            e[k, l], e[l, k] = -1j / np.sqrt(2), 1j / np.sqrt(2)
            out.append(e)
    return out


def template_qubit(rho_out: Sequence, source: PurifiedSource, use_c: bool = False,
                   transpose_c: bool | None = None) -> EvmTemplate:
    """Direct feasibility problem for tomographically complete qubit data.

    The template is the set of operators ``rho`` on ``A (x) B (x) C`` with
    ``Tr_C <i|rho|i> = p_i rho_i_out`` and ``Tr_B rho = rho_AC`` (or only
    ``Tr_BC rho = rho_A`` when ``use_c`` is off, in which case ``C`` is dropped).

    With ``C`` kept, the positivity test transposes ``A`` and ``C`` together,
    which is the transpose on ``B`` up to a global transpose.  Transposing
    ``A`` alone is not a separability test across ``B | AC`` when the source
    entangles ``A`` with ``C``, so ``transpose_c`` defaults to ``use_c``.
    """
    if transpose_c is None:
        transpose_c = use_c
    outs = [as_array(r) for r in rho_out]
    if any(o.shape != (2, 2) for o in outs):
        raise ContractError("template_qubit needs 2x2 output states")
    probs = source.probs
    if use_c:
        d_c = source.dim_C
        target_ac = source.rho_AC
    else:
        d_c = 1
        target_ac = partial_trace(source.rho_AC, (2, source.dim_C), (0,))
    dims = (2, 2, d_c)
    n = 2 * 2 * d_c
    herm = _hermitian_basis(n)

    def constraints(h):
        vals = []
        for i in range(2):
            blk = h[i * 2 * d_c : (i + 1) * 2 * d_c, i * 2 * d_c : (i + 1) * 2 * d_c]
            vals.append(partial_trace(blk, (2, d_c), (0,)).reshape(-1))
        vals.append(partial_trace(h, dims, (0, 2)).reshape(-1))
        v = np.concatenate(vals)
        return np.concatenate([v.real, v.imag])

    lmat = np.array([constraints(h) for h in herm]).T
    y = np.concatenate(
        [(probs[0] * outs[0]).reshape(-1), (probs[1] * outs[1]).reshape(-1), target_ac.reshape(-1)]
    )
    y = np.concatenate([y.real, y.imag])
    x0, *_ = np.linalg.lstsq(lmat, y, rcond=None)
    if np.max(np.abs(lmat @ x0 - y)) > 1e-9:
        raise ContractError("inconsistent qubit constraints: output traces do not match the source")
    u, sv, vh = np.linalg.svd(lmat)
    rank = int(np.sum(sv > 1e-10 * sv[0]))
    null = vh[rank:].T
    hstack = np.array(herm)
    m0 = np.tensordot(x0, hstack, axes=1)
    basis = np.tensordot(null.T, hstack, axes=1) if null.size else np.zeros((0, n, n), complex)
    labels = [(i, b, c) for i in range(2) for b in range(2) for c in range(d_c)]
    prov = np.full((n, n), "free", dtype=object)
    names = tuple(f"theta{a}" for a in range(basis.shape[0]))
    return EvmTemplate(m0, basis, tuple(labels), pt_permutation(labels, transpose_c), prov, names)
