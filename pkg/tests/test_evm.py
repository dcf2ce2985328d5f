import json

import numpy as np
import pytest

from chanprobe import evm, fock, sources, verify
from chanprobe.numerics import ContractError, min_eig, partial_transpose, random_density


def _pure_squeezed_source(r, n_max=40):
    space = fock.FockSpace(n_max)
    vac = fock.vacuum(space)
    psi0, psi1 = fock.squeeze(space, r) @ vac, fock.squeeze(space, -r) @ vac
    state = np.concatenate([psi0, psi1]) / np.sqrt(2)
    return space, psi0, psi1, state


def _random_ops(rng, d, n):
    return [rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)) for _ in range(n)]


def test_trivial_evm():
    rho = np.kron(np.diag([1.0, 0]), np.diag([0.3, 0.7]))
    chi = evm.evm_exact(rho, (2, 2, 1), [np.eye(2)], [np.eye(2)])
    np.testing.assert_allclose(chi, [[1.0]])


def test_evm_exact_is_psd_fuzz():
    rng = np.random.default_rng(11)
    for _ in range(100):
        rho = random_density(6, rng)
        chi = evm.evm_exact(rho, (2, 3, 1), _random_ops(rng, 2, 2), _random_ops(rng, 3, 3))
        assert min_eig(chi) >= -1e-9 * max(1.0, np.max(np.abs(chi)))


def test_evm_dimension_mismatch():
    with pytest.raises(ContractError):
        evm.evm_exact(np.eye(5) / 5, (2, 2, 1), [np.eye(2)], [np.eye(2)])


def test_block_transpose_involution_and_trivial():
    rng = np.random.default_rng(12)
    labels = evm.evm_labels(2, 3)
    chi = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    twice = evm.block_partial_transpose(evm.block_partial_transpose(chi, labels), labels)
    np.testing.assert_array_equal(twice, chi)
    one = evm.evm_labels(1, 3)
    np.testing.assert_array_equal(evm.block_partial_transpose(chi[:3, :3], one), chi[:3, :3])


def test_block_transpose_matches_state_transpose():
    rng = np.random.default_rng(13)
    phi = rng.normal(size=2) + 1j * rng.normal(size=2)
    a_ops = evm.alice_ops(2, phi / np.linalg.norm(phi))
    b_ops = _random_ops(rng, 3, 2)
    labels = evm.evm_labels(2, 2)
    for _ in range(10):
        rho = random_density(6, rng)
        lhs = evm.evm_exact(partial_transpose(rho, (2, 3), 0), (2, 3, 1), a_ops, b_ops)
        rhs = evm.block_partial_transpose(evm.evm_exact(rho, (2, 3, 1), a_ops, b_ops), labels)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_separable_block_transpose_psd():
    rng = np.random.default_rng(14)
    for _ in range(20):
        ra, rb = random_density(3, rng), random_density(3, rng)
        rho = 0.5 * (np.kron(np.diag([1.0, 0]), ra) + np.kron(np.diag([0, 1.0]), rb))
        b_ops = _random_ops(rng, 3, 3)
        chi = evm.evm_exact(rho, (2, 3, 1), evm.alice_ops(2), b_ops)
        assert min_eig(evm.block_partial_transpose(chi, evm.evm_labels(2, 3))) >= -1e-9


def test_template_squeezed_layout():
    t = evm.template_squeezed(evm.MeasuredMoments(1.2, 0.4), 0.8)
    assert t.dim == 4
    assert t.n_params == 8
    np.testing.assert_allclose(np.real(np.diag(t.M0)), [1.2, 0.4, 0.4, 1.2])
    assert t.M0[0, 1] == pytest.approx(0.5j)
    assert t.M0[2, 3] == pytest.approx(0.5j)
    assert np.imag(t.M0[0, 3]) == pytest.approx(0.4)
    assert np.imag(t.M0[1, 2]) == pytest.approx(-0.4)
    rng = np.random.default_rng(15)
    m = t.evaluate(rng.normal(size=8))
    np.testing.assert_allclose(m, m.conj().T, atol=1e-14)
    np.testing.assert_array_equal(t.pt(t.pt(m)), m)


def test_template_squeezed_round_trip():
    r = 0.5
    space, psi0, psi1, state = _pure_squeezed_source(r)
    s = float(np.real(np.vdot(psi1, psi0)))
    x, p = fock.quadratures(space)
    labels = evm.evm_labels(2, 2)
    chi = evm.conditional_scaling(evm.evm_exact(state, (2, space.dim, 1), evm.alice_ops(2), [x, p]), labels, (0.5, 0.5))
    mom = fock.moments(np.outer(psi0, psi0.conj()), space)
    t = evm.template_squeezed(evm.MeasuredMoments(mom["var_x"], mom["var_p"]), s)
    np.testing.assert_allclose(np.real(np.diag(chi)), [mom["var_x"], mom["var_p"], mom["var_p"], mom["var_x"]], atol=1e-10)
    _, resid = t.fit(chi)
    assert resid < 1e-9


def test_template_with_c_unitaries_round_trip():
    space = fock.FockSpace(16, max_deficit=5e-3)
    ens, src = sources.cv_ensemble("squeezed", fock.GaussianParams(r=0.3, nbar=0.2), space)
    m = 3
    c_labels = [(0, 0)] + fock.weyl_labels(17, m)
    c_ops = [fock.weyl_operator(17, *lab) for lab in c_labels]
    x, p = fock.quadratures(space)
    chi = evm.evm_exact(src.source_state, (2, 17, 17), evm.alice_ops(2), [np.eye(17), x, p], c_ops)
    t = evm.template_with_c_unitaries(("1", "x", "p"), _conditional(ens, space), src, m)
    chi = evm.conditional_scaling(chi, t.labels, src.probs)
    assert t.dim == chi.shape[0]
    _, resid = t.fit(chi)
    assert resid < 1e-5


def _conditional(ens, space):
    out = {}
    for i, rho in enumerate(ens.matrices):
        x, p = fock.quadratures(space)
        for key, op in (("x", x), ("p", p), ("xx", x @ x), ("pp", p @ p)):
            out[(i, key)] = float(np.real(np.trace(rho @ op)))
    return out


def test_template_c_unitaries_m0_is_base():
    space = fock.FockSpace(16, max_deficit=5e-3)
    _, src = sources.cv_ensemble("squeezed", fock.GaussianParams(r=0.4, nbar=0.0), space)
    mom = evm.MeasuredMoments(1.0, 0.45)
    base = evm.template_squeezed(mom, float(np.real(src.overlap)))
    ext = evm.template_with_c_unitaries(("x", "p"), mom.conditional(), src, 0)
    np.testing.assert_allclose(base.M0, ext.M0, atol=1e-9)
    assert base.n_params == ext.n_params


def test_template_sizes_with_c():
    space = fock.FockSpace(16, max_deficit=5e-3)
    _, src = sources.cv_ensemble("squeezed", fock.GaussianParams(r=0.5, nbar=0.3), space)
    mom = evm.MeasuredMoments(1.0, 0.45).conditional()
    dims = {m: evm.template_with_c_unitaries(("x", "p"), mom, src, m).dim for m in (1, 3, 5)}
    assert dims == {1: 8, 3: 16, 5: 24}


def test_source_entries_match_rho_ac():
    space = fock.FockSpace(16, max_deficit=5e-3)
    _, src = sources.cv_ensemble("squeezed", fock.GaussianParams(r=0.5, nbar=0.3), space)
    t = evm.template_with_c_unitaries(("1", "x", "p"), evm.MeasuredMoments(1.0, 0.45).conditional(), src, 2)
    labels = list(t.labels)
    c_labels = [(0, 0)] + fock.weyl_labels(17, 2)
    rho_ac = src.rho_AC
    for k, w in enumerate(c_labels):
        r = labels.index((0, "1", 0))
        c = labels.index((1, "1", k))
        want = np.trace(rho_ac[17:, :17] @ fock.weyl_operator(17, *w)) / 0.5
        assert t.M0[r, c] == pytest.approx(want, abs=1e-10)
        assert t.provenance[r, c] == "source"


def test_template_displaced_round_trip():
    space = fock.FockSpace(40)
    alpha = 0.5
    psi0, psi1 = fock.coherent(space, alpha), fock.coherent(space, -alpha)
    state = np.concatenate([psi0, psi1]) / np.sqrt(2)
    x, p = fock.quadratures(space)
    labels = evm.evm_labels(2, 3)
    chi = evm.conditional_scaling(
        evm.evm_exact(state, (2, 41, 1), evm.alice_ops(2), [np.eye(41), x, p]), labels, (0.5, 0.5)
    )
    s = float(np.real(np.vdot(psi1, psi0)))
    t = evm.template_displaced(evm.DisplacedMoments(alpha, 0.5), s)
    assert t.dim == 6
    _, resid = t.fit(chi)
    assert resid < 1e-9


def test_loss_channel_detected():
    alpha = 0.5
    s = np.exp(-2 * alpha**2)
    for eta in (0.2, 0.6, 1.0):
        t = evm.template_displaced(evm.DisplacedMoments(np.sqrt(eta) * alpha, 0.5), s)
        assert verify.feasibility(t).verdict == verify.QUANTUM


def test_moment_validation():
    with pytest.raises(ContractError):
        evm.MeasuredMoments(0.3, 0.5)
    with pytest.raises(ContractError):
        evm.MeasuredMoments(-1.0, 0.5)
    with pytest.raises(ContractError):
        evm.DisplacedMoments(0.1, 0.4)


def test_template_json_has_provenance():
    t = evm.template_squeezed(evm.MeasuredMoments(1.0, 0.5), 0.7)
    data = json.loads(t.to_json())
    kinds = {e["provenance"] for e in data["fixed"]}
    assert {"measured", "free"} <= kinds
    assert any("commutator" in k for k in kinds)


def test_qubit_template_examples():
    theta = np.pi / 3
    ens, src = sources.qubit_ensemble(theta, 0.0)
    t = evm.template_qubit(ens.matrices, src)
    assert verify.feasibility(t).verdict == verify.QUANTUM
    t = evm.template_qubit([np.eye(2) / 2, np.eye(2) / 2], src)
    assert verify.feasibility(t).verdict != verify.QUANTUM
    ens, src = sources.qubit_ensemble(np.pi / 2, 0.0)
    outs = [verify.depolarize(r, 0.3) for r in ens.matrices]
    assert verify.feasibility(evm.template_qubit(outs, src)).verdict != verify.QUANTUM
