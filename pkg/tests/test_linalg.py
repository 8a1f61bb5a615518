"""Hybrid operator algebra: vectorization, pairing, exponentials, duals."""

import numpy as np
import pytest

from hybridjump import (
    HybridOperator,
    HybridSuperop,
    apply,
    devectorize,
    dual,
    expm,
    hs_pairing,
    vectorize,
)
from hybridjump.linalg import check_classical_dist, check_state

from conftest import random_hybrid, random_superop


def test_vectorize_identity_single_label():
    h = HybridOperator.identity(1, 2)
    np.testing.assert_array_equal(vectorize(h), np.array([1, 0, 0, 1], dtype=complex))


def test_vectorize_ground_projector_two_labels():
    # |-><-| in the first (d) block, empty u block, column stacking
    blocks = np.zeros((2, 2, 2), dtype=complex)
    blocks[0, 0, 0] = 1.0
    expected = np.array([1, 0, 0, 0, 0, 0, 0, 0], dtype=complex)
    np.testing.assert_array_equal(vectorize(HybridOperator(blocks)), expected)


def test_vectorize_column_stacking_order():
    blocks = np.array([[[1.0, 2.0], [3.0, 4.0]]], dtype=complex)
    np.testing.assert_array_equal(
        vectorize(HybridOperator(blocks)), np.array([1, 3, 2, 4], dtype=complex)
    )


@pytest.mark.parametrize("n_c,d", [(1, 2), (2, 2), (3, 3)])
def test_devectorize_roundtrip(n_c, d):
    rng = np.random.default_rng(10)
    h = random_hybrid(rng, n_c, d)
    back = devectorize(vectorize(h), n_c, d)
    np.testing.assert_array_equal(back.blocks, h.blocks)


def test_devectorize_dimension_mismatch():
    with pytest.raises(ValueError):
        devectorize(np.zeros(7), 2, 2)


def test_apply_zero_superop():
    rng = np.random.default_rng(11)
    h = random_hybrid(rng, 2, 2)
    out = apply(HybridSuperop.zeros(2, 2), h)
    assert np.all(out.blocks == 0)


def test_apply_identity_superop():
    rng = np.random.default_rng(12)
    h = random_hybrid(rng, 2, 2)
    out = apply(HybridSuperop.identity(2, 2), h)
    np.testing.assert_allclose(out.blocks, h.blocks, atol=1e-15)


def test_apply_dimension_mismatch():
    with pytest.raises(ValueError):
        apply(HybridSuperop.identity(2, 2), HybridOperator.identity(1, 2))


def test_apply_observed_channel_on_flat_blocks(hybrid_gens, params):
    # both blocks I/4: the observed channel collects gamma*eta/2 into the
    # ground projector of the d block and empties the u block
    flat = HybridOperator(np.stack([np.eye(2), np.eye(2)]) / 4)
    out = apply(hybrid_gens.J, flat)
    coeff = params.gamma * params.eta / 2
    expected_d = np.array([[coeff, 0], [0, 0]], dtype=complex)
    np.testing.assert_allclose(out.blocks[0], expected_d, atol=1e-14)
    np.testing.assert_allclose(out.blocks[1], 0, atol=1e-14)


def test_expm_zero_time_is_identity():
    rng = np.random.default_rng(13)
    s = random_superop(rng, 2, 2)
    np.testing.assert_array_equal(expm(s, 0.0).matrix, np.eye(8))


def test_expm_negative_time_rejected():
    s = HybridSuperop.zeros(1, 2)
    with pytest.raises(ValueError):
        expm(s, -0.1)


def test_expm_diagonal():
    lam = np.array([-1.0, -0.5 + 2j, 0.3j, 0.0])
    s = HybridSuperop(np.diag(lam), 1, 2)
    out = expm(s, 0.7)
    np.testing.assert_allclose(out.matrix, np.diag(np.exp(lam * 0.7)), atol=1e-14)


def test_expm_matches_taylor_oracle():
    # order-30 truncated Taylor series as the independent reference
    rng = np.random.default_rng(14)
    s = random_superop(rng, 2, 2)
    t = 0.3
    acc = np.eye(8, dtype=complex)
    term = np.eye(8, dtype=complex)
    for k in range(1, 31):
        term = term @ (s.matrix * t) / k
        acc = acc + term
    np.testing.assert_allclose(expm(s, t).matrix, acc, atol=1e-10)


def test_expm_semigroup_property():
    rng = np.random.default_rng(15)
    for _ in range(5):
        s = random_superop(rng, 2, 2)
        t1, t2 = rng.uniform(0, 1, size=2)
        lhs = expm(s, t1 + t2).matrix
        rhs = expm(s, t1).matrix @ expm(s, t2).matrix
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_hs_pairing_self_is_purity_like():
    rng = np.random.default_rng(16)
    h = random_hybrid(rng, 2, 2, state=True)
    val = hs_pairing(h, h)
    assert abs(val.imag) < 1e-12
    assert 0 < val.real <= 1 + 1e-12


def test_hs_pairing_with_identity_gives_total_trace():
    rng = np.random.default_rng(17)
    h = random_hybrid(rng, 2, 2)
    ident = HybridOperator.identity(2, 2)
    np.testing.assert_allclose(
        hs_pairing(h, ident), h.total_trace(), atol=1e-13
    )


def test_hs_pairing_matches_elementwise_sum():
    rng = np.random.default_rng(18)
    a = random_hybrid(rng, 2, 2, hermitian=True)
    b = random_hybrid(rng, 2, 2, hermitian=True)
    brute = 0.0 + 0.0j
    for r in range(2):
        for i in range(2):
            for j in range(2):
                brute += a.blocks[r, i, j] * b.blocks[r, j, i]
    got = hs_pairing(a, b)
    np.testing.assert_allclose(got, brute, atol=1e-13)
    assert abs(got.imag) < 1e-10  # real for Hermitian operands


def test_hs_pairing_dimension_mismatch():
    with pytest.raises(ValueError):
        hs_pairing(HybridOperator.identity(1, 2), HybridOperator.identity(2, 2))


def test_dual_of_identity():
    s = HybridSuperop.identity(2, 2)
    np.testing.assert_array_equal(dual(s).matrix, s.matrix)


def test_dual_is_involution():
    rng = np.random.default_rng(19)
    s = random_superop(rng, 2, 3)
    np.testing.assert_array_equal(dual(dual(s)).matrix, s.matrix)


def test_dual_pairing_identity_random_superops():
    rng = np.random.default_rng(20)
    for _ in range(20):
        s = random_superop(rng, 2, 2)
        a = random_hybrid(rng, 2, 2)
        r = random_hybrid(rng, 2, 2)
        lhs = hs_pairing(a, apply(s, r))
        rhs = hs_pairing(r, apply(dual(s), a))
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_dual_pairing_identity_observed_channel(hybrid_gens):
    rng = np.random.default_rng(21)
    jd = dual(hybrid_gens.J)
    for _ in range(20):
        a = random_hybrid(rng, 2, 2, hermitian=True)
        r = random_hybrid(rng, 2, 2, hermitian=True)
        lhs = hs_pairing(a, apply(hybrid_gens.J, r))
        rhs = hs_pairing(r, apply(jd, a))
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_dual_of_sandwich_superop_conjugates_operator():
    # dual of rho -> A rho A^dag is E -> A^dag E A
    rng = np.random.default_rng(22)
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    s = HybridSuperop(np.kron(a.conj(), a), 1, 2)
    expected = np.kron(a.T, a.conj().T)
    np.testing.assert_allclose(dual(s).matrix, expected, atol=1e-14)


def test_trace_dual_probe_on_trace_preserving_generator(hybrid_gens):
    rng = np.random.default_rng(23)
    ident = HybridOperator.identity(2, 2)
    for _ in range(10):
        r = random_hybrid(rng, 2, 2, hermitian=True)
        assert abs(hs_pairing(ident, apply(hybrid_gens.L, r))) < 1e-12


def test_state_validator_accepts_states_and_rejects_garbage():
    rng = np.random.default_rng(24)
    check_state(random_hybrid(rng, 2, 2, state=True))
    with pytest.raises(ValueError):
        check_state(HybridOperator(2 * np.eye(2, dtype=complex)[np.newaxis]))
    skewed = np.array([[[0.5, 0.3], [-0.3, 0.5]]], dtype=complex)
    with pytest.raises(ValueError):
        check_state(HybridOperator(skewed))


def test_classical_dist_validator():
    check_classical_dist(np.array([0.8, 0.2]))
    with pytest.raises(ValueError):
        check_classical_dist(np.array([0.5, 0.4]))
    with pytest.raises(ValueError):
        check_classical_dist(np.array([1.2, -0.2]))


def test_non_finite_entries_rejected():
    with pytest.raises(ValueError):
        HybridOperator(np.full((1, 2, 2), np.nan))
    with pytest.raises(ValueError):
        HybridSuperop(np.full((4, 4), np.inf), 1, 2)


def test_blocks_are_readonly():
    h = HybridOperator.identity(1, 2)
    with pytest.raises(ValueError):
        h.blocks[0, 0, 0] = 5.0
