import numpy as np
import pytest

from chanprobe import fock, sources
from chanprobe.numerics import DensityMatrix, fidelity, partial_trace, random_density


def _trace_c(psi, d_b, d_c):
    return partial_trace(np.outer(psi, psi.conj()), (d_b, d_c), (0,))


def test_qubit_ensemble_pure_overlap():
    theta = 1.1
    ens, src = sources.qubit_ensemble(theta, 0.0)
    for rho in ens.matrices:
        assert np.real(np.trace(rho @ rho)) == pytest.approx(1.0)
    assert fidelity(*ens.matrices) == pytest.approx(abs(np.cos(theta)), abs=1e-12)
    _, src = sources.qubit_ensemble(np.pi / 2, 0.0)
    assert abs(src.overlap) < 1e-12


def test_qubit_ensemble_mixing_spectra():
    ens, _ = sources.qubit_ensemble(np.pi / 2, np.pi)
    l0, l1 = (np.linalg.eigvalsh(r) for r in ens.matrices)
    np.testing.assert_allclose(l0, l1, atol=1e-12)
    assert l0[0] > 1e-3


def test_qubit_ensemble_guards():
    with pytest.raises(Exception):
        sources.qubit_ensemble(0.0)
    with pytest.raises(Exception):
        sources.qubit_ensemble(1.0, 4.0)


def test_canonical_purification():
    phi = np.array([0.6, 0.8j])
    psi = sources.canonical_purification(np.outer(phi, phi.conj()))
    rho = _trace_c(psi, 2, 2)
    np.testing.assert_allclose(rho, np.outer(phi, phi.conj()), atol=1e-10)
    th = fock.thermal_state(fock.FockSpace(40), 0.5).matrix
    psi = sources.canonical_purification(th).reshape(41, 41)
    schmidt = np.sort(np.linalg.svd(psi, compute_uv=False))[::-1]
    n = np.arange(41)
    np.testing.assert_allclose(schmidt[:10], np.sqrt(0.5**n / 1.5 ** (n + 1))[:10], atol=1e-10)


def test_optimal_purification_pair():
    rng = np.random.default_rng(7)
    rho = random_density(3, rng)
    _, _, ov = sources.optimal_purification_pair(rho, rho)
    assert ov == pytest.approx(1.0, abs=1e-9)
    a, b = np.array([0.2, 0.3, 0.5]), np.array([0.6, 0.3, 0.1])
    _, _, ov = sources.optimal_purification_pair(np.diag(a), np.diag(b))
    assert ov == pytest.approx(np.sum(np.sqrt(a * b)), abs=1e-9)
    space = fock.FockSpace(30)
    r0, r1 = fock.squeezed_thermal(space, 0.3, 0.2), fock.squeezed_thermal(space, -0.3, 0.2)
    v0, v1, ov = sources.optimal_purification_pair(r0, r1)
    assert ov == pytest.approx(fidelity(r0, r1), abs=1e-6)
    np.testing.assert_allclose(_trace_c(v1, 31, 31), r1.matrix, atol=1e-9)


def test_optimal_beats_canonical():
    rng = np.random.default_rng(8)
    for _ in range(100):
        r0, r1 = random_density(3, rng), random_density(3, rng)
        c0 = sources.canonical_purification(r0)
        c1 = sources.canonical_purification(r1)
        _, _, ov = sources.optimal_purification_pair(r0, r1)
        assert ov >= abs(np.vdot(c1, c0)) - 1e-9
        assert ov == pytest.approx(fidelity(r0, r1), abs=1e-7)


def test_effective_source_pure_gram():
    s = 0.7
    ens, _ = sources.qubit_ensemble(np.arccos(s), 0.0)
    src = sources.pure_source(ens)
    rho_ac = src.rho_AC
    assert rho_ac.shape == (2, 2)
    assert abs(rho_ac[0, 1]) == pytest.approx(s / 2, abs=1e-12)
    rho_b = partial_trace(np.outer(src.source_state, src.source_state.conj()), (2, 2, 1), (1,))
    np.testing.assert_allclose(rho_b, 0.5 * sum(ens.matrices), atol=1e-10)


def test_effective_source_orthogonal():
    ens, src = sources.qubit_ensemble(np.pi / 2, 0.0)
    rho_a = partial_trace(src.rho_AC, (2, 2), (0,))
    np.testing.assert_allclose(rho_a, np.diag([0.5, 0.5]), atol=1e-12)


def test_conditional_preparation():
    ens, src = sources.qubit_ensemble(0.9, np.pi / 3)
    for got, want in zip(src.reduced_states(), ens.matrices):
        np.testing.assert_allclose(got, want, atol=1e-9)


def test_cv_pure_overlaps():
    space = fock.FockSpace(16, max_deficit=2e-3)
    _, src = sources.cv_ensemble("squeezed", fock.GaussianParams(r=0.5), space)
    assert np.real(src.overlap) == pytest.approx(np.cosh(1.0) ** -0.5, abs=1e-6)
    _, src = sources.cv_ensemble("displaced", fock.GaussianParams(alpha=0.5), space)
    assert np.real(src.overlap) == pytest.approx(np.exp(-0.5), abs=1e-6)


def test_cv_purifications_trace_back():
    space = fock.FockSpace(16, max_deficit=5e-3)
    ens, src = sources.cv_ensemble("squeezed", fock.GaussianParams(r=0.3, nbar=0.2), space)
    for psi, rho in zip(src.purifications, ens.matrices):
        np.testing.assert_allclose(_trace_c(psi, 17, 17), rho, atol=1e-8)
    assert abs(src.overlap) <= fidelity(*ens.matrices) + 1e-9


def test_fidelity_invariant_under_quarter_turn():
    space = fock.FockSpace(30)
    ens, _ = sources.cv_ensemble("squeezed", fock.GaussianParams(r=0.4, nbar=0.3), space)
    u = fock.phase_rotation(space)
    r0, r1 = ens.matrices
    f = fidelity(r0, r1)
    assert fidelity(u @ r1 @ u.conj().T, u @ r0 @ u.conj().T) == pytest.approx(f, abs=1e-9)


def test_gaussian_fidelity_oracle_pure():
    f = sources.gaussian_fidelity(sources.squeezed_thermal_cov(0.5, 0), sources.squeezed_thermal_cov(-0.5, 0))
    assert f == pytest.approx(np.cosh(1.0) ** -0.5, abs=1e-12)
    g = sources.gaussian_fidelity(np.eye(2) / 2, np.eye(2) / 2, (1.0, 0.0), (-1.0, 0.0))
    assert g == pytest.approx(np.exp(-1.0), abs=1e-12)


def test_ensemble_validation():
    with pytest.raises(Exception):
        sources.Ensemble((DensityMatrix.from_array(np.eye(2) / 2),), (0.5, 0.5))
    with pytest.raises(Exception):
        sources.Ensemble(
            (DensityMatrix.from_array(np.eye(2) / 2), DensityMatrix.from_array(np.eye(2) / 2)), (0.7, 0.7)
        )
