"""Generator assembly, measurement map, conditional and master evolution."""

import numpy as np
import pytest
import scipy.linalg as sla
from scipy.integrate import solve_ivp

from hybridjump import (
    FluorParams,
    HybridOperator,
    JumpTerm,
    ModelGenerators,
    ModelSpec,
    apply,
    build,
    build_hybrid,
    conditional_propagate,
    initial_hybrid,
    initial_plain,
    master_solve,
    measurement_map,
    reduce_classical,
    reduce_quantum,
    steady_state_classical,
    steady_state_quantum,
    uniform_grid,
    vectorize,
)
from hybridjump.errors import Extinct, NullJump
from hybridjump.fluorescence import SIGMA, SIGMA_X

from conftest import random_hybrid

ETA = 0.8
GAMMA = 1.0
OMEGA = 1.0


def rhs_hybrid_rate_equation(blocks, omega=OMEGA, gamma=GAMMA, eta=ETA):
    """Hand-coded right-hand side of the hybrid rate equation, written out
    term by term with explicit matrix algebra as an independent oracle."""
    sig = np.array([[0, 1], [0, 0]], dtype=complex)
    sig_dag = sig.conj().T
    num = sig_dag @ sig
    h = 0.5 * omega * np.array([[0, 1], [1, 0]], dtype=complex)
    rates = {0: gamma * eta, 1: gamma * (1 - eta)}  # 0 = d, 1 = u
    out = np.zeros_like(blocks)
    for a, b in ((0, 1), (1, 0)):
        g_a, g_b = rates[a], rates[b]
        rho_a, rho_b = blocks[a], blocks[b]
        out[a] = (
            -1j * (h @ rho_a - rho_a @ h)
            + g_a * (sig @ rho_a @ sig_dag - 0.5 * (num @ rho_a + rho_a @ num))
            - g_b * 0.5 * (num @ rho_a + rho_a @ num)
            + g_a * sig @ rho_b @ sig_dag
        )
    return out


def rhs_plain(rho, omega=OMEGA, gamma=GAMMA):
    sig = np.array([[0, 1], [0, 0]], dtype=complex)
    sig_dag = sig.conj().T
    num = sig_dag @ sig
    h = 0.5 * omega * np.array([[0, 1], [1, 0]], dtype=complex)
    return -1j * (h @ rho - rho @ h) + gamma * (
        sig @ rho @ sig_dag - 0.5 * (num @ rho + rho @ num)
    )


def test_empty_spec_gives_zero_generators():
    spec = ModelSpec(n_classical=2, dim=2)
    g = build(spec)
    assert np.all(g.L.matrix == 0)
    assert np.all(g.D.matrix == 0)
    assert np.all(g.J.matrix == 0)


def test_negative_rate_rejected():
    spec = ModelSpec(
        n_classical=1, dim=2, jumps=(JumpTerm(0, 0, SIGMA, -0.1, True),)
    )
    with pytest.raises(ValueError, match="negative rate"):
        build(spec)


def test_label_out_of_range_rejected():
    spec = ModelSpec(n_classical=1, dim=2, jumps=(JumpTerm(0, 1, SIGMA, 0.5, True),))
    with pytest.raises(ValueError, match="out of range"):
        build(spec)


def test_hybrid_generator_matches_hand_coded_rate_equation(hybrid_gens):
    rng = np.random.default_rng(30)
    for _ in range(10):
        h = random_hybrid(rng, 2, 2, hermitian=True)
        got = apply(hybrid_gens.L, h).blocks
        expected = rhs_hybrid_rate_equation(h.blocks)
        np.testing.assert_allclose(got, expected, atol=1e-12)


def test_plain_observed_channel_is_eta_weighted_gain(plain_gens, params):
    rng = np.random.default_rng(31)
    sig = SIGMA
    for _ in range(5):
        h = random_hybrid(rng, 1, 2, hermitian=True)
        got = apply(plain_gens.J, h).blocks[0]
        expected = params.gamma * params.eta * sig @ h.blocks[0] @ sig.conj().T
        np.testing.assert_allclose(got, expected, atol=1e-13)


def test_plain_generator_matches_hand_coded_lindblad(plain_gens):
    rng = np.random.default_rng(32)
    for _ in range(10):
        h = random_hybrid(rng, 1, 2, hermitian=True)
        got = apply(plain_gens.L, h).blocks[0]
        np.testing.assert_allclose(got, rhs_plain(h.blocks[0]), atol=1e-12)


def test_master_solve_agrees_with_ode_oracle(hybrid_gens, rho0_hybrid):
    times = uniform_grid(5.0, 0.5)

    def rhs_flat(_, y):
        return rhs_hybrid_rate_equation(y.reshape(2, 2, 2)).reshape(-1)

    sol = solve_ivp(
        rhs_flat,
        (0.0, 5.0),
        rho0_hybrid.blocks.reshape(-1),
        t_eval=times,
        rtol=1e-11,
        atol=1e-12,
    )
    ours = master_solve(hybrid_gens, rho0_hybrid, times)
    for k, state in enumerate(ours):
        np.testing.assert_allclose(
            state.blocks.reshape(-1), sol.y[:, k], atol=1e-8
        )


def test_measurement_map_resets_hybrid_pair(hybrid_gens, rho0_hybrid):
    state = master_solve(hybrid_gens, rho0_hybrid, np.array([0.0, 2.7]))[-1]
    reset = measurement_map(hybrid_gens, state)
    expected = np.zeros((2, 2, 2), dtype=complex)
    expected[0, 0, 0] = 1.0
    np.testing.assert_allclose(reset.blocks, expected, atol=1e-12)


def test_measurement_map_plain_resets_to_ground(plain_gens, rho0_plain):
    state = master_solve(plain_gens, rho0_plain, np.array([0.0, 1.9]))[-1]
    reset = measurement_map(plain_gens, state)
    np.testing.assert_allclose(
        reset.blocks[0], np.array([[1, 0], [0, 0]]), atol=1e-12
    )


def test_measurement_map_null_jump_from_ground(hybrid_gens, rho0_hybrid):
    with pytest.raises(NullJump):
        measurement_map(hybrid_gens, rho0_hybrid)


def test_conditional_propagate_zero_time(hybrid_gens, rho0_hybrid):
    out = conditional_propagate(hybrid_gens, rho0_hybrid, 0.0)
    np.testing.assert_array_equal(out.blocks, rho0_hybrid.blocks)


def test_conditional_propagate_matches_expm_oracle(hybrid_gens, rho0_hybrid):
    dt = 1.0
    w = sla.expm(hybrid_gens.D.matrix * dt) @ vectorize(rho0_hybrid)
    w = w.reshape(2, 2, 2).transpose(0, 2, 1)
    w = w / np.einsum("rii->", w).real
    out = conditional_propagate(hybrid_gens, rho0_hybrid, dt)
    np.testing.assert_allclose(out.blocks, w, atol=1e-12)


def test_conditional_propagate_without_monitoring_equals_master():
    spec = ModelSpec(
        n_classical=1,
        dim=2,
        hamiltonians=[0.5 * SIGMA_X],
        jumps=(JumpTerm(0, 0, SIGMA, 0.7, observed=False),),
    )
    g = build(spec)
    assert np.all(g.J.matrix == 0)
    rho0 = initial_plain()
    times = uniform_grid(3.0, 1.5)
    cond = conditional_propagate(g, rho0, 3.0)
    mast = master_solve(g, rho0, times)[-1]
    np.testing.assert_allclose(cond.blocks, mast.blocks, atol=1e-12)


def test_conditional_propagate_extinct(hybrid_gens, rho0_hybrid):
    with pytest.raises(Extinct):
        conditional_propagate(hybrid_gens, rho0_hybrid, 500.0)


def test_master_solve_time_zero(hybrid_gens, rho0_hybrid):
    out = master_solve(hybrid_gens, rho0_hybrid, np.array([0.0]))
    np.testing.assert_array_equal(out[0].blocks, rho0_hybrid.blocks)


def test_master_solve_reaches_closed_form_steady_state(hybrid_gens, rho0_hybrid, params):
    final = master_solve(hybrid_gens, rho0_hybrid, np.array([0.0, 30.0]))[-1]
    np.testing.assert_allclose(
        reduce_quantum(final), steady_state_quantum(params), atol=1e-9
    )
    # the classical label relaxes more slowly; its contract at t = 30 is 1e-6
    np.testing.assert_allclose(
        reduce_classical(final), steady_state_classical(params), atol=1e-6
    )


def test_steady_upper_population_is_one_third(plain_gens, rho0_plain):
    final = master_solve(plain_gens, rho0_plain, np.array([0.0, 30.0]))[-1]
    assert abs(reduce_quantum(final)[1, 1].real - 1 / 3) < 1e-6


def test_reduce_separable_state():
    rng = np.random.default_rng(33)
    rho = random_hybrid(rng, 1, 2, state=True).blocks[0]
    blocks = np.zeros((2, 2, 2), dtype=complex)
    blocks[0] = rho
    h = HybridOperator(blocks)
    np.testing.assert_allclose(reduce_quantum(h), rho, atol=1e-14)
    np.testing.assert_allclose(reduce_classical(h), [1.0, 0.0], atol=1e-14)


def test_reduce_classical_single_label(rho0_plain):
    np.testing.assert_allclose(reduce_classical(rho0_plain), [1.0], atol=1e-15)


def test_trace_conservation_long_window(hybrid_gens, rho0_hybrid):
    times = uniform_grid(30.0, 0.1)
    traces = [s.total_trace().real for s in master_solve(hybrid_gens, rho0_hybrid, times)]
    np.testing.assert_allclose(traces, 1.0, atol=1e-9)


def test_master_positivity(hybrid_gens, rho0_hybrid):
    times = uniform_grid(30.0, 0.25)
    for s in master_solve(hybrid_gens, rho0_hybrid, times):
        for r in range(2):
            assert np.linalg.eigvalsh(s.blocks[r]).min() > -1e-8


def test_split_consistency(hybrid_gens):
    assert np.array_equal(
        hybrid_gens.L.matrix, hybrid_gens.D.matrix + hybrid_gens.J.matrix
    )
    rng = np.random.default_rng(34)
    h = random_hybrid(rng, 2, 2)
    lhs = apply(hybrid_gens.L, h).blocks
    rhs = apply(hybrid_gens.D, h).blocks + apply(hybrid_gens.J, h).blocks
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_hybrid_reduction_matches_plain_master(hybrid_gens, plain_gens):
    times = uniform_grid(20.0, 0.1)
    hyb = master_solve(hybrid_gens, initial_hybrid(), times)
    pla = master_solve(plain_gens, initial_plain(), times)
    for h, p in zip(hyb, pla):
        np.testing.assert_allclose(
            reduce_quantum(h), reduce_quantum(p), atol=1e-9
        )


def test_eta_one_classical_stays_detected():
    p1 = FluorParams(omega=1.0, eta=1.0)
    g = build(build_hybrid(p1))
    times = uniform_grid(10.0, 0.5)
    for s in master_solve(g, initial_hybrid(), times):
        np.testing.assert_allclose(reduce_classical(s), [1.0, 0.0], atol=1e-10)


def test_from_superops_escape_hatch(hybrid_gens):
    rebuilt = ModelGenerators.from_superops(hybrid_gens.L, hybrid_gens.J)
    np.testing.assert_allclose(rebuilt.D.matrix, hybrid_gens.D.matrix, atol=1e-14)
