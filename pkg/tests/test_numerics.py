import numpy as np
import pytest

from chanprobe import fock
from chanprobe.numerics import (
    ContractError,
    DensityMatrix,
    Operator,
    eig_hermitian,
    fidelity,
    kron,
    mat_exp,
    mat_sqrt_psd,
    min_eig,
    partial_trace,
    partial_transpose,
    random_density,
    random_hermitian,
    trace_distance,
)

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SZ = np.diag([1.0, -1.0]).astype(complex)


def test_operator_flags_are_checked():
    Operator(np.eye(3), hermitian=True, unitary=True, psd=True)
    with pytest.raises(ContractError):
        Operator(np.array([[0, 1], [0, 0]]), hermitian=True)
    with pytest.raises(ContractError):
        Operator(2 * np.eye(2), unitary=True)
    with pytest.raises(ContractError):
        Operator(np.ones((2, 3)))


def test_density_matrix_validation():
    DensityMatrix.from_array(np.diag([0.25, 0.75]))
    with pytest.raises(ContractError):
        DensityMatrix.from_array(np.diag([0.5, 0.6]))
    with pytest.raises(ContractError):
        DensityMatrix.from_array(np.diag([1.1, -0.1]))


def test_eig_hermitian_trivial_spectra():
    lam, _ = eig_hermitian(np.eye(2))
    np.testing.assert_allclose(lam, [1, 1])
    lam, _ = eig_hermitian(SX)
    np.testing.assert_allclose(lam, [-1, 1], atol=1e-14)


def test_eig_hermitian_reconstruction():
    rng = np.random.default_rng(1)
    h = random_hermitian(8, rng)
    lam, v = eig_hermitian(h)
    assert np.all(np.diff(lam) >= 0)
    resid = np.max(np.abs(v @ np.diag(lam) @ v.conj().T - h))
    assert resid < 1e-10 * np.max(np.abs(h))


def test_eig_hermitian_rejects_non_hermitian():
    with pytest.raises(ContractError):
        eig_hermitian(np.array([[0, 1], [0, 0]], dtype=complex))


def test_mat_sqrt_psd_cases():
    np.testing.assert_allclose(mat_sqrt_psd(np.eye(3)), np.eye(3), atol=1e-14)
    np.testing.assert_allclose(mat_sqrt_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)
    rho = fock.thermal_state(fock.FockSpace(16, max_deficit=1e-2), 0.5).matrix
    s = mat_sqrt_psd(rho)
    assert np.max(np.abs(s @ s - rho)) < 1e-10


def test_mat_sqrt_psd_rejects_negative():
    with pytest.raises(ContractError, match="eigenvalue -1.000e-01"):
        mat_sqrt_psd(np.diag([1.0, -0.1]))


def test_mat_exp():
    assert np.array_equal(mat_exp(np.zeros((3, 3))), np.eye(3))
    np.testing.assert_allclose(mat_exp(1j * np.pi * SZ / 2), np.diag([1j, -1j]), atol=1e-14)
    with pytest.raises(ContractError):
        mat_exp(1e4 * np.eye(2))


def test_quarter_turn_maps_x_to_p():
    space = fock.FockSpace(20)
    x, p = fock.quadratures(space)
    n = fock.number(space)
    u = mat_exp(-1j * np.pi / 2 * n)
    # away from the truncation edge
    got = (u.conj().T @ x @ u)[:-2, :-2]
    np.testing.assert_allclose(got, p[:-2, :-2], atol=1e-10)


def test_fidelity_basic():
    rng = np.random.default_rng(2)
    rho = random_density(4, rng)
    assert fidelity(rho, rho) == pytest.approx(1.0, abs=1e-9)
    a = np.array([1, 0], complex)
    b = np.array([np.cos(0.3), np.sin(0.3)], complex)
    assert fidelity(np.outer(a, a), np.outer(b, b)) == pytest.approx(np.cos(0.3), abs=1e-9)


def test_fidelity_symmetric_and_dim_check():
    rng = np.random.default_rng(3)
    r0, r1 = random_density(5, rng), random_density(5, rng)
    assert abs(fidelity(r0, r1) - fidelity(r1, r0)) < 1e-9
    with pytest.raises(ContractError):
        fidelity(np.eye(2) / 2, np.eye(3) / 3)


def test_fidelity_squeezed_thermal_gaussian_oracle():
    from chanprobe.sources import gaussian_fidelity, squeezed_thermal_cov

    space = fock.FockSpace(40)
    r, nbar = 0.3, 0.2
    r0 = fock.squeezed_thermal(space, r, nbar)
    r1 = fock.squeezed_thermal(space, -r, nbar)
    exact = gaussian_fidelity(squeezed_thermal_cov(r, nbar), squeezed_thermal_cov(-r, nbar))
    assert fidelity(r0, r1) == pytest.approx(exact, abs=1e-6)


def test_trace_distance():
    rng = np.random.default_rng(4)
    rho = random_density(3, rng)
    assert trace_distance(rho, rho) == pytest.approx(0.0, abs=1e-12)
    assert trace_distance(np.diag([1.0, 0]), np.diag([0, 1.0])) == pytest.approx(1.0)


def test_min_eig():
    assert min_eig(np.eye(3)) == pytest.approx(1.0)
    assert min_eig(SZ) == pytest.approx(-1.0)


def test_kron_examples():
    np.testing.assert_array_equal(kron(np.eye(2), np.eye(3)), np.eye(6))
    lam = np.linalg.eigvalsh(kron(SX, SZ))
    np.testing.assert_allclose(lam, [-1, -1, 1, 1], atol=1e-14)
    rng = np.random.default_rng(5)
    a, b, c, d = (rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)) for _ in range(4))
    np.testing.assert_allclose(kron(a, b) @ kron(c, d), kron(a @ c, b @ d), atol=1e-12)


def test_partial_trace_and_transpose():
    rng = np.random.default_rng(6)
    ra, rb = random_density(2, rng), random_density(3, rng)
    rho = kron(ra, rb)
    np.testing.assert_allclose(partial_trace(rho, (2, 3), (0,)), ra, atol=1e-12)
    np.testing.assert_allclose(partial_trace(rho, (2, 3), (1,)), rb, atol=1e-12)
    np.testing.assert_allclose(partial_transpose(rho, (2, 3), 0), kron(ra.T, rb), atol=1e-12)
    bell = np.zeros(4)
    bell[[0, 3]] = 1 / np.sqrt(2)
    assert min_eig(partial_transpose(np.outer(bell, bell), (2, 2), 0)) == pytest.approx(-0.5)
