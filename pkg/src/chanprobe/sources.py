"""Test-state ensembles, their purifications and the effective entangled source.

A two-state ensemble ``{p_i, rho_i}`` is replaced by the pure state
``sum_i sqrt(p_i) |i>_A |psi_i>_BC`` where ``|psi_i>`` purifies ``rho_i``.
Purification vectors on ``B (x) C`` are stored as ``dim_B * dim_C`` arrays with
``B`` as the slow index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import fock
from .numerics import ContractError, DensityMatrix, fidelity, partial_trace


@dataclass(frozen=True)
class Ensemble:
    states: tuple[DensityMatrix, ...]
    probs: tuple[float, ...] = (0.5, 0.5)

    def __post_init__(self):
        if len(self.states) != len(self.probs):
            raise ContractError("one probability per state required")
        if len({s.dim for s in self.states}) != 1:
            raise ContractError("ensemble states must share a dimension")
        p = np.asarray(self.probs)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ContractError(f"probabilities must be non-negative and sum to 1, got {self.probs}")

    @property
    def dim(self) -> int:
        return self.states[0].dim

    @property
    def matrices(self) -> list[np.ndarray]:
        return [s.matrix for s in self.states]


@dataclass(frozen=True)
class PurifiedSource:
    purifications: tuple[np.ndarray, ...]
    dim_B: int
    dim_C: int
    probs: tuple[float, ...] = (0.5, 0.5)
    overlap: complex = field(init=False)
    source_state: np.ndarray = field(init=False, repr=False)
    rho_AC: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        psi0, psi1 = self.purifications
        object.__setattr__(self, "overlap", complex(np.vdot(psi1, psi0)))
        src, rho_ac = effective_source(self.purifications, self.probs, self.dim_B, self.dim_C)
        object.__setattr__(self, "source_state", src)
        object.__setattr__(self, "rho_AC", rho_ac)

    def reduced_states(self) -> list[np.ndarray]:
        """``Tr_C |psi_i><psi_i|`` for each purification."""
        out = []
        for psi in self.purifications:
            m = psi.reshape(self.dim_B, self.dim_C)
            out.append(m @ m.conj().T)
        return out


def _fix_phase(psi0: np.ndarray, psi1: np.ndarray) -> np.ndarray:
    # rotate psi1 so that <psi1|psi0> is real and non-negative
    ov = np.vdot(psi1, psi0)
    if abs(ov) < 1e-15:
        return psi1
    return psi1 * (ov / abs(ov))


def canonical_purification(rho, dim_C: int | None = None) -> np.ndarray:
    """``sum_k sqrt(lam_k) |b_k>|k>`` with eigenvalues sorted in descending order."""
    rho = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    d = rho.shape[0]
    dim_C = d if dim_C is None else dim_C
    lam, vec = scipy.linalg.eigh(0.5 * (rho + rho.conj().T))
    lam, vec = lam[::-1], vec[:, ::-1]
    lam = np.clip(lam, 0.0, None)
    if dim_C < d:
        if np.any(lam[dim_C:] > 1e-12):
            raise ContractError(f"dim_C={dim_C} is smaller than the rank of rho")
        lam, vec = lam[:dim_C], vec[:, :dim_C]
    psi = np.zeros((d, dim_C), dtype=complex)
    psi[:, : lam.size] = vec * np.sqrt(lam)
    return psi.reshape(-1)


def optimal_purification_pair(rho0, rho1) -> tuple[np.ndarray, np.ndarray, float]:
    """Purifications of ``rho0``, ``rho1`` whose overlap equals their fidelity.

    Starts from canonical purifications and applies on ``C`` of the second one
    the unitary from the SVD of ``Psi1^dag Psi0``, where ``Psi_i`` is the
    ``dim_B x dim_C`` coefficient matrix of ``|psi_i>``.
    """
    m0 = rho0.matrix if isinstance(rho0, DensityMatrix) else np.asarray(rho0, dtype=complex)
    m1 = rho1.matrix if isinstance(rho1, DensityMatrix) else np.asarray(rho1, dtype=complex)
    if m0.shape != m1.shape:
        raise ContractError("dimension mismatch")
    d = m0.shape[0]
    psi0 = canonical_purification(m0).reshape(d, d)
    psi1 = canonical_purification(m1).reshape(d, d)
    w, _, yh = np.linalg.svd(psi1.conj().T @ psi0)
    # |psi1> -> (1 (x) U)|psi1>  <=>  Psi1 -> Psi1 U^T; U^T = W Y^dag makes Tr(Psi1^dag Psi0) = sum of singular values
    psi1 = psi1 @ (w @ yh)
    v0, v1 = psi0.reshape(-1), psi1.reshape(-1)
    v1 = _fix_phase(v0, v1)
    return v0, v1, float(np.real(np.vdot(v1, v0)))


def effective_source(purifications, probs, dim_B: int, dim_C: int) -> tuple[np.ndarray, np.ndarray]:
    """Source vector on ``A (x) B (x) C`` and the reduced state ``rho_AC``."""
    if len(purifications) != 2:
        raise ContractError("effective_source supports two-state ensembles")
    amps = np.sqrt(np.asarray(probs, dtype=float))
    mats = [np.asarray(p, dtype=complex).reshape(dim_B, dim_C) for p in purifications]
    src = np.concatenate([a * m.reshape(-1) for a, m in zip(amps, mats)])
    rho_ac = np.zeros((2 * dim_C, 2 * dim_C), dtype=complex)
    for i in range(2):
        for k in range(2):
            # Tr_B |psi_i><psi_k|  ->  Psi_i^T Psi_k^*
            rho_ac[i * dim_C : (i + 1) * dim_C, k * dim_C : (k + 1) * dim_C] = (
                amps[i] * amps[k] * mats[i].T @ mats[k].conj()
            )
    return src, rho_ac


def qubit_ensemble(theta: float, phi: float = 0.0) -> tuple[Ensemble, PurifiedSource]:
    """Two qubit states mixed by a controlled phase with an ancilla in ``|+>``.

    The purifications are the joint ``B (x) C`` states after the gate; they are
    generally not the overlap-maximizing ones (see :func:`optimize_source`).
    """
    if not 0 < theta < np.pi:
        raise ContractError("theta must lie in (0, pi)")
    if not 0 <= phi <= np.pi:
        raise ContractError("phi must lie in [0, pi]")
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    plus = np.array([1, 1], dtype=complex) / np.sqrt(2)
    cphase = np.diag([1, 1, 1, np.exp(1j * phi)])
    purs = [cphase @ np.kron(np.array([c, sign * s], dtype=complex), plus) for sign in (1, -1)]
    purs[1] = _fix_phase(purs[0], purs[1])
    states = tuple(
        DensityMatrix.from_array(partial_trace(np.outer(v, v.conj()), (2, 2), (0,))) for v in purs
    )
    return Ensemble(states), PurifiedSource(tuple(purs), 2, 2)


def optimize_source(ensemble: Ensemble) -> PurifiedSource:
    """Purified source built from the overlap-maximizing purification pair."""
    v0, v1, _ = optimal_purification_pair(*ensemble.states)
    d = ensemble.dim
    return PurifiedSource((v0, v1), d, d, ensemble.probs)


def pure_source(ensemble: Ensemble) -> PurifiedSource:
    """Source for pure test states: no purifying system (``dim_C = 1``)."""
    vecs = []
    for st in ensemble.states:
        lam, v = np.linalg.eigh(st.matrix)
        if lam[-1] < 1 - 1e-8:
            raise ContractError("pure_source requires pure test states")
        vecs.append(v[:, -1])
    vecs[1] = _fix_phase(vecs[0], vecs[1])
    return PurifiedSource(tuple(vecs), ensemble.dim, 1, ensemble.probs)


def cv_ensemble(kind: str, params: fock.GaussianParams, space: fock.FockSpace) -> tuple[Ensemble, PurifiedSource]:
    """The +/- pair of squeezed-thermal or displaced-thermal states with optimal purifications."""
    if kind == "squeezed":
        states = (
            fock.squeezed_thermal(space, params.r, params.nbar),
            fock.squeezed_thermal(space, -params.r, params.nbar),
        )
    elif kind == "displaced":
        states = (
            fock.displaced_thermal(space, params.alpha, params.nbar),
            fock.displaced_thermal(space, -params.alpha, params.nbar),
        )
    else:
        raise ContractError(f"unknown ensemble kind {kind!r}")
    ens = Ensemble(states)
    return ens, optimize_source(ens)


def ensemble_fidelity(ensemble: Ensemble) -> float:
    return fidelity(*ensemble.states)


def gaussian_fidelity(cov0, cov1, mean0=(0.0, 0.0), mean1=(0.0, 0.0)) -> float:
    """Root fidelity of two single-mode Gaussian states (vacuum covariance ``I/2``)."""
    s0, s1 = np.asarray(cov0, float), np.asarray(cov1, float)
    d = np.asarray(mean1, float) - np.asarray(mean0, float)
    delta = np.linalg.det(s0 + s1)
    lam = 4.0 * (np.linalg.det(s0) - 0.25) * (np.linalg.det(s1) - 0.25)
    lam = max(lam, 0.0)
    f2 = np.exp(-0.5 * d @ np.linalg.solve(s0 + s1, d)) / (np.sqrt(delta + lam) - np.sqrt(lam))
    return float(np.sqrt(f2))


def squeezed_thermal_cov(r: float, nbar: float) -> np.ndarray:
    v = (2 * nbar + 1) / 2
    return np.diag([v * np.exp(2 * r), v * np.exp(-2 * r)])
