"""Truncated single-mode Fock space: ladder operators, quadratures and Gaussian states.

Conventions: ``x = (a + a^dag)/sqrt(2)``, ``p = (a - a^dag)/(i sqrt(2))`` so the
vacuum has both variances equal to 1/2 and ``[x, p] = i``. ``squeeze(r)`` with
``r > 0`` reduces the variance of ``p``.

Every state constructor reports a truncation deficit: the weight the exact
(infinite-dimensional) state carries above ``n_max``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special, stats

from .numerics import ContractError, DensityMatrix, TOL, mat_exp


class TruncationError(ContractError):
    """The requested state does not fit into the truncated Fock space."""


@dataclass(frozen=True)
class FockSpace:
    n_max: int = 16
    max_deficit: float = TOL.truncation_deficit

    def __post_init__(self):
        if self.n_max < 1:
            raise ContractError("Fock space needs n_max >= 1")

    @property
    def dim(self) -> int:
        return self.n_max + 1


@dataclass(frozen=True)
class GaussianParams:
    r: float = 0.0
    nbar: float = 0.0
    alpha: complex = 0.0

    def __post_init__(self):
        if self.nbar < 0:
            raise ContractError(f"mean thermal photon number must be >= 0, got {self.nbar}")
        if not (np.isfinite(self.r) and np.isfinite(self.alpha)):
            raise ContractError("Gaussian parameters must be finite")


@lru_cache(maxsize=64)
def _annihilation(dim: int) -> np.ndarray:
    a = np.diag(np.sqrt(np.arange(1, dim)), k=1).astype(complex)
    a.setflags(write=False)
    return a


def annihilation(space: FockSpace) -> np.ndarray:
    return _annihilation(space.dim)


def number(space: FockSpace) -> np.ndarray:
    return np.diag(np.arange(space.dim)).astype(complex)


def quadratures(space: FockSpace) -> tuple[np.ndarray, np.ndarray]:
    a = annihilation(space)
    ad = a.conj().T
    return (a + ad) / np.sqrt(2), (a - ad) / (1j * np.sqrt(2))


def phase_rotation(space: FockSpace, angle: float = np.pi / 2) -> np.ndarray:
    """``exp(-i angle n)``; for ``angle = pi/2`` this maps ``x`` onto ``p`` by ``U^dag x U``."""
    return mat_exp(-1j * angle * number(space))


def squeezed_vacuum_deficit(r: float, n_max: int) -> float:
    t2 = np.tanh(r) ** 2
    k = np.arange(n_max // 2 + 1)
    logw = special.gammaln(2 * k + 1) - 2 * special.gammaln(k + 1) - k * np.log(4.0)
    w = np.exp(logw) * t2**k / np.cosh(r)
    return float(max(0.0, 1.0 - w.sum()))


def coherent_deficit(alpha: complex, n_max: int) -> float:
    return float(stats.poisson.sf(n_max, abs(alpha) ** 2))


def thermal_deficit(nbar: float, n_max: int) -> float:
    if nbar == 0:
        return 0.0
    return float((nbar / (nbar + 1.0)) ** (n_max + 1))


def _guard(deficit: float, space: FockSpace, what: str) -> None:
    if deficit > space.max_deficit:
        raise TruncationError(
            f"{what}: truncation deficit {deficit:.2e} exceeds {space.max_deficit:.1e} at n_max={space.n_max}; "
            "increase n_max"
        )


def squeeze(space: FockSpace, r: float) -> np.ndarray:
    """Squeezing unitary ``exp[(r/2)(a^dag^2 - a^2)]``."""
    _guard(squeezed_vacuum_deficit(r, space.n_max), space, f"squeeze(r={r})")
    a = annihilation(space)
    ad = a.conj().T
    return mat_exp(0.5 * r * (ad @ ad - a @ a))


def displace(space: FockSpace, alpha: complex) -> np.ndarray:
    if abs(alpha) ** 2 > space.n_max / 4:
        raise TruncationError(f"|alpha|^2 = {abs(alpha) ** 2:.3g} exceeds n_max/4 = {space.n_max / 4:.3g}")
    _guard(coherent_deficit(alpha, space.n_max), space, f"displace(alpha={alpha})")
    a = annihilation(space)
    return mat_exp(alpha * a.conj().T - np.conj(alpha) * a)


def vacuum(space: FockSpace) -> np.ndarray:
    v = np.zeros(space.dim, dtype=complex)
    v[0] = 1.0
    return v


def coherent(space: FockSpace, alpha: complex) -> np.ndarray:
    return displace(space, alpha) @ vacuum(space)


def _thermal_diag(nbar: float, dim: int) -> np.ndarray:
    if nbar == 0:
        w = np.zeros(dim)
        w[0] = 1.0
        return w
    q = nbar / (nbar + 1.0)
    return q ** np.arange(dim) / (nbar + 1.0)


def thermal_state(space: FockSpace, nbar: float) -> DensityMatrix:
    """Truncated thermal state, not renormalized."""
    if nbar < 0:
        raise ContractError("nbar must be >= 0")
    deficit = thermal_deficit(nbar, space.n_max)
    _guard(deficit, space, f"thermal_state(nbar={nbar})")
    rho = np.diag(_thermal_diag(nbar, space.dim)).astype(complex)
    return DensityMatrix.from_array(rho, trace_tol=max(TOL.trace, 1.01 * deficit), deficit=deficit)


def _embedded(kind: str, param: complex, nbar: float, n_max: int) -> np.ndarray:
    # exact state built in a much larger space, then projected onto n <= n_max
    big = FockSpace(n_max=max(3 * n_max, n_max + 80), max_deficit=1.0)
    th = np.diag(_thermal_diag(nbar, big.dim)).astype(complex)
    u = squeeze(big, param.real) if kind == "squeeze" else displace(big, param)
    rho = u @ th @ u.conj().T
    return rho[: n_max + 1, : n_max + 1]


def _projected_state(space: FockSpace, kind: str, param, nbar: float, what: str) -> DensityMatrix:
    if nbar < 0:
        raise ContractError("nbar must be >= 0")
    rho = _embedded(kind, complex(param), nbar, space.n_max)
    deficit = float(max(0.0, 1.0 - np.real(np.trace(rho))))
    _guard(deficit, space, what)
    return DensityMatrix.from_array(rho, trace_tol=max(TOL.trace, 1.01 * deficit), deficit=deficit)


def squeezed_thermal(space: FockSpace, r: float, nbar: float) -> DensityMatrix:
    """``S(r) rho_th S(r)^dag`` projected onto the truncated space (not renormalized).

    The state is formed in a larger working space so that the truncated matrix
    is the exact state's compression; the reported deficit is ``1 - trace``.
    """
    if abs(r) > 1.5 and space.n_max <= 16:
        raise TruncationError(f"|r| = {abs(r)} too large for n_max={space.n_max}")
    return _projected_state(space, "squeeze", r, nbar, f"squeezed_thermal(r={r}, nbar={nbar})")


def displaced_thermal(space: FockSpace, alpha: complex, nbar: float) -> DensityMatrix:
    """``D(alpha) rho_th D(alpha)^dag`` projected onto the truncated space (not renormalized)."""
    if abs(alpha) ** 2 > space.n_max / 4:
        raise TruncationError(f"|alpha|^2 = {abs(alpha) ** 2:.3g} exceeds n_max/4 = {space.n_max / 4:.3g}")
    return _projected_state(space, "displace", alpha, nbar, f"displaced_thermal(alpha={alpha}, nbar={nbar})")


def moments(rho, space: FockSpace) -> dict[str, float]:
    """First and second quadrature moments of a state (vacuum variance 1/2)."""
    rho = np.asarray(rho.matrix if isinstance(rho, DensityMatrix) else rho)
    x, p = quadratures(space)
    ex = np.real(np.trace(rho @ x))
    ep = np.real(np.trace(rho @ p))
    xx = np.real(np.trace(rho @ x @ x))
    pp = np.real(np.trace(rho @ p @ p))
    sym = np.real(np.trace(rho @ (x @ p + p @ x))) / 2
    return {
        "mean_x": ex,
        "mean_p": ep,
        "var_x": xx - ex**2,
        "var_p": pp - ep**2,
        "cov_xp": sym - ex * ep,
    }


def weyl_operator(d: int, a: int, b: int) -> np.ndarray:
    """``X^a Z^b`` with ``X|k> = |k+1 mod d>`` and ``Z|k> = w^k |k>``."""
    omega = np.exp(2j * np.pi / d)
    shift = np.roll(np.eye(d, dtype=complex), 1, axis=0)
    clock = np.diag(omega ** np.arange(d))
    return np.linalg.matrix_power(shift, a % d) @ np.linalg.matrix_power(clock, b % d)


def weyl_labels(d: int, m: int) -> list[tuple[int, int]]:
    if not 0 <= m <= d * d - 1:
        raise ContractError(f"need 0 <= m <= d^2 - 1 = {d * d - 1}, got {m}")
    labels = [(a, b) for a in range(d) for b in range(d) if (a, b) != (0, 0)]
    return labels[:m]


def generalized_spin_operators(d: int, m: int) -> list[np.ndarray]:
    """First ``m`` non-identity Weyl-Heisenberg unitaries in row-major ``(a, b)`` order."""
    if m < 1:
        raise ContractError("m must be >= 1")
    return [weyl_operator(d, a, b) for a, b in weyl_labels(d, m)]
