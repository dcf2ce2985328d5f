"""Dense Hermitian linear algebra for small quantum problems.

Everything here works on plain ``numpy`` arrays. :class:`Operator` and
:class:`DensityMatrix` are thin validated wrappers used where a contract has to
be asserted at a module boundary; the functions accept either wrappers or raw
arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


class ContractError(ValueError):
    """Raised when an input violates a documented precondition."""


@dataclass(frozen=True)
class Tolerances:
    hermitian: float = 1e-12
    unitary: float = 1e-10
    eig_reconstruction: float = 1e-10
    psd_clip: float = 1e-9
    density_min_eig: float = 1e-10
    trace: float = 1e-9
    truncation_deficit: float = 1e-6
    exp_norm_max: float = 1e3


TOL = Tolerances()


def as_array(m) -> np.ndarray:
    if isinstance(m, Operator):
        return m.entries
    if isinstance(m, DensityMatrix):
        return m.op.entries
    return np.asarray(m, dtype=complex)


def _max_abs(m: np.ndarray) -> float:
    return float(np.max(np.abs(m))) if m.size else 0.0


def is_hermitian(m, tol: float = TOL.hermitian) -> bool:
    m = as_array(m)
    scale = max(_max_abs(m), 1.0)
    return _max_abs(m - m.conj().T) <= tol * scale


@dataclass(frozen=True)
class Operator:
    """Square complex matrix with asserted structural flags."""

    entries: np.ndarray
    hermitian: bool = False
    unitary: bool = False
    psd: bool = False

    def __post_init__(self):
        m = np.array(self.entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ContractError(f"operator must be square, got shape {m.shape}")
        if self.hermitian and not is_hermitian(m):
            raise ContractError("operator flagged hermitian is not Hermitian")
        if self.unitary:
            err = _max_abs(m.conj().T @ m - np.eye(m.shape[0]))
            if err > TOL.unitary:
                raise ContractError(f"operator flagged unitary has U^dag U - 1 = {err:.2e}")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian PSD operator with (approximately) unit trace.

    ``trace_tol`` may be widened to the truncation deficit of a Fock-space
    state; the deficit itself is kept in ``deficit`` for reporting.
    """

    op: Operator
    trace_tol: float = TOL.trace
    deficit: float = 0.0
    _eigs: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.op, Operator):
            object.__setattr__(self, "op", Operator(self.op, hermitian=True, psd=True))
        m = self.op.entries
        if not is_hermitian(m, 1e-10):
            raise ContractError("density matrix is not Hermitian")
        lam = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
        if lam[0] < -TOL.density_min_eig:
            raise ContractError(f"density matrix has negative eigenvalue {lam[0]:.3e}")
        tr = float(np.real(np.trace(m)))
        if abs(tr - 1.0) > self.trace_tol:
            raise ContractError(f"density matrix trace {tr:.12f} outside tolerance {self.trace_tol:.1e}")
        object.__setattr__(self, "_eigs", lam)

    @property
    def dim(self) -> int:
        return self.op.dim

    @property
    def matrix(self) -> np.ndarray:
        return self.op.entries

    @classmethod
    def from_array(cls, m, trace_tol: float = TOL.trace, deficit: float = 0.0) -> "DensityMatrix":
        m = np.asarray(m, dtype=complex)
        return cls(Operator(0.5 * (m + m.conj().T), hermitian=True, psd=True), trace_tol, deficit)

    @classmethod
    def from_vector(cls, psi) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        return cls.from_array(np.outer(psi, psi.conj()))


def eig_hermitian(m, tol: float = TOL.hermitian) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a Hermitian matrix, eigenvalues ascending."""
    m = as_array(m)
    if not is_hermitian(m, tol):
        raise ContractError("eig_hermitian requires a Hermitian matrix")
    return scipy.linalg.eigh(0.5 * (m + m.conj().T))


def min_eig(m) -> float:
    m = as_array(m)
    if not is_hermitian(m, 1e-10):
        raise ContractError("min_eig requires a Hermitian matrix")
    return float(scipy.linalg.eigvalsh(0.5 * (m + m.conj().T), subset_by_index=[0, 0])[0])


def mat_sqrt_psd(m, clip: float = TOL.psd_clip) -> np.ndarray:
    """Principal square root of a PSD matrix.

    Eigenvalues in ``[-clip, 0)`` are treated as zero; anything more negative
    is an error.
    """
    lam, v = eig_hermitian(m, 1e-10)
    if lam.size and lam[0] < -clip * max(1.0, abs(lam[-1])):
        raise ContractError(f"matrix is not PSD: eigenvalue {lam[0]:.3e}")
    lam = np.clip(lam, 0.0, None)
    return (v * np.sqrt(lam)) @ v.conj().T


def mat_exp(m) -> np.ndarray:
    m = as_array(m)
    if not np.all(np.isfinite(m)):
        raise ContractError("mat_exp requires finite entries")
    if m.size == 0 or not np.any(m):
        return np.eye(m.shape[0], dtype=complex)
    norm = np.linalg.norm(m, 1)
    if norm > TOL.exp_norm_max:
        raise ContractError(f"mat_exp argument norm {norm:.3g} exceeds {TOL.exp_norm_max:g}")
    return scipy.linalg.expm(m)


def _check_pair(rho0, rho1) -> tuple[np.ndarray, np.ndarray]:
    a, b = as_array(rho0), as_array(rho1)
    if a.shape != b.shape:
        raise ContractError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def fidelity(rho0, rho1) -> float:
    """Root fidelity ``tr sqrt(sqrt(rho0) rho1 sqrt(rho0))``.

    Also accepts unnormalized PSD arguments, where it is homogeneous of degree
    one in each. Computed as the nuclear norm of ``sqrt(rho0) sqrt(rho1)``,
    which is symmetric by construction.
    """
    a, b = _check_pair(rho0, rho1)
    prod = mat_sqrt_psd(a) @ mat_sqrt_psd(b)
    return float(np.sum(scipy.linalg.svdvals(prod)))


def trace_distance(rho0, rho1) -> float:
    a, b = _check_pair(rho0, rho1)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * ((a - b) + (a - b).conj().T)))))


def kron(*ops) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for op in ops:
        out = np.kron(out, as_array(op))
    return out


def dagger(m: np.ndarray) -> np.ndarray:
    return m.conj().T


def partial_trace(rho: np.ndarray, dims: tuple[int, ...], keep: tuple[int, ...]) -> np.ndarray:
    """Partial trace of a density matrix over all subsystems not in ``keep``."""
    rho = as_array(rho)
    n = len(dims)
    t = rho.reshape(dims + dims)
    letters = "abcdefghijklmnop"
    row = list(letters[:n])
    col = list(letters[n : 2 * n])
    for k in range(n):
        if k not in keep:
            col[k] = row[k]
    out_row = "".join(row[k] for k in keep)
    out_col = "".join(col[k] for k in keep)
    expr = "".join(row) + "".join(col) + "->" + out_row + out_col
    d = int(np.prod([dims[k] for k in keep]))
    return np.einsum(expr, t).reshape(d, d)


def partial_transpose(rho: np.ndarray, dims: tuple[int, ...], sys: int = 0) -> np.ndarray:
    rho = as_array(rho)
    n = len(dims)
    t = rho.reshape(dims + dims)
    axes = list(range(2 * n))
    axes[sys], axes[n + sys] = axes[n + sys], axes[sys]
    d = int(np.prod(dims))
    return t.transpose(axes).reshape(d, d)


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random density matrix from a Ginibre ensemble of the given rank."""
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return 0.5 * (g + g.conj().T)
