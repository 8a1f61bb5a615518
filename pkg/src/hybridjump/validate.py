"""Runtime invariant suite behind the `validate` CLI subcommand.

Each check is deterministic (fixed seeds) and sized to finish in seconds;
the statistical checks run at reduced ensemble sizes with tolerances wide
enough that a correct build passes with large margin.  The full-size
statistical criteria live in the acceptance test suite.
"""

from __future__ import annotations

import io
import os
import tempfile
from dataclasses import replace

import numpy as np
import scipy.stats

from . import linalg
from .ensemble import (
    RunConfig,
    emit_csv,
    master_quantities,
    path_quantities,
    run_ensemble,
)
from .fluorescence import (
    FluorParams,
    build_hybrid,
    build_plain,
    initial_hybrid,
    initial_plain,
    steady_state_classical,
    steady_state_quantum,
    waiting_cdf,
    waiting_density,
    waiting_laplace,
)
from .generators import build, master_solve, reduce_classical, reduce_quantum, uniform_grid
from .linalg import HybridOperator, HybridSuperop, apply, dual, hs_pairing
from .smoothing import effect_backward, smooth_path, smoothed_classical
from .trajectories import (
    filter_path,
    sample_trajectory,
    simulate_trajectory,
    trajectory_rng,
)

PARAMS = FluorParams(omega=1.0, eta=0.8)


def _random_superop(rng, n_c, d):
    size = n_c * d * d
    m = rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size))
    return HybridSuperop(m, n_c, d)


def _random_hybrid(rng, n_c, d, hermitian=False):
    b = rng.normal(size=(n_c, d, d)) + 1j * rng.normal(size=(n_c, d, d))
    if hermitian:
        b = 0.5 * (b + b.conj().transpose(0, 2, 1))
    return HybridOperator(b)


def check_vectorize_roundtrip():
    rng = np.random.default_rng(1)
    worst = 0.0
    for n_c, d in ((1, 2), (2, 2), (3, 4)):
        h = _random_hybrid(rng, n_c, d)
        back = linalg.devectorize(linalg.vectorize(h), n_c, d)
        worst = max(worst, np.max(np.abs(back.blocks - h.blocks)))
    assert worst == 0.0, f"round-trip deviation {worst}"
    return "exact on 3 shapes"


def check_expm_semigroup():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(5):
        s = _random_superop(rng, 2, 2)
        t1, t2 = rng.uniform(0, 1, size=2)
        lhs = linalg.expm(s, t1 + t2).matrix
        rhs = linalg.expm(s, t1).matrix @ linalg.expm(s, t2).matrix
        worst = max(worst, np.max(np.abs(lhs - rhs)))
    assert worst < 1e-9, f"semigroup defect {worst:.3e}"
    return f"max defect {worst:.2e}"


def check_dual_pairing():
    rng = np.random.default_rng(3)
    g = build(build_hybrid(PARAMS))
    props = [g.D, g.J, linalg.expm(g.D, 0.37), linalg.expm(g.D, 0.8) @ g.J]
    worst = 0.0
    for s in props:
        for _ in range(10):
            a = _random_hybrid(rng, 2, 2, hermitian=True)
            r = _random_hybrid(rng, 2, 2, hermitian=True)
            lhs = hs_pairing(a, apply(s, r))
            rhs = hs_pairing(r, apply(dual(s), a))
            worst = max(worst, abs(lhs - rhs))
        redual = dual(dual(s))
        worst = max(worst, np.max(np.abs(redual.matrix - s.matrix)))
    assert worst < 1e-10, f"pairing identity defect {worst:.3e}"
    return f"max defect {worst:.2e}"


def check_trace_dual_probe():
    rng = np.random.default_rng(4)
    g = build(build_hybrid(PARAMS))
    ident = HybridOperator.identity(2, 2)
    worst = 0.0
    for _ in range(10):
        r = _random_hybrid(rng, 2, 2, hermitian=True)
        worst = max(worst, abs(hs_pairing(ident, apply(g.L, r))))
    assert worst < 1e-10, f"trace leak {worst:.3e}"
    return f"max |Tr L rho| {worst:.2e}"


def check_trace_conservation():
    g = build(build_hybrid(PARAMS))
    times = uniform_grid(30.0, 0.1)
    states = master_solve(g, initial_hybrid(), times)
    traces = np.array([s.total_trace().real for s in states])
    worst = np.max(np.abs(traces - 1.0))
    assert worst < 1e-9, f"trace drift {worst:.3e}"
    return f"max drift {worst:.2e} over gamma*t in [0, 30]"


def check_positivity():
    g = build(build_hybrid(PARAMS))
    times = uniform_grid(30.0, 0.1)
    eigmin = 0.0
    for s in master_solve(g, initial_hybrid(), times):
        for r in range(2):
            eigmin = min(eigmin, np.linalg.eigvalsh(s.blocks[r]).min())
    fp = simulate_trajectory(g, initial_hybrid(), 30.0, 0.1, trajectory_rng(99, 0))
    for k in range(fp.times.size):
        for r in range(2):
            eigmin = min(eigmin, np.linalg.eigvalsh(fp.states[k, r]).min())
    assert eigmin > -1e-8, f"eigenvalue {eigmin:.3e}"
    return f"min block eigenvalue {eigmin:.2e}"


def check_split_consistency():
    rng = np.random.default_rng(5)
    g = build(build_hybrid(PARAMS))
    assert np.max(np.abs(g.L.matrix - (g.D.matrix + g.J.matrix))) == 0.0
    worst = 0.0
    for _ in range(10):
        r = _random_hybrid(rng, 2, 2)
        lhs = apply(g.L, r).blocks
        rhs = apply(g.D, r).blocks + apply(g.J, r).blocks
        worst = max(worst, np.max(np.abs(lhs - rhs)))
    assert worst < 1e-12, f"split defect {worst:.3e}"
    return f"L = D + J exactly, apply split defect {worst:.2e}"


def check_quantum_reduction():
    gh = build(build_hybrid(PARAMS))
    gp = build(build_plain(PARAMS))
    times = uniform_grid(20.0, 0.1)
    hyb = master_solve(gh, initial_hybrid(), times)
    pla = master_solve(gp, initial_plain(), times)
    worst = max(
        np.max(np.abs(reduce_quantum(h) - reduce_quantum(p)))
        for h, p in zip(hyb, pla)
    )
    assert worst < 1e-9, f"reduction mismatch {worst:.3e}"
    return f"max mismatch {worst:.2e}"


def check_steady_state():
    g = build(build_hybrid(PARAMS))
    times = np.array([0.0, 30.0])
    final = master_solve(g, initial_hybrid(), times)[-1]
    dq = np.max(np.abs(reduce_quantum(final) - steady_state_quantum(PARAMS)))
    dc = np.max(np.abs(reduce_classical(final) - steady_state_classical(PARAMS)))
    # the classical label relaxes more slowly; 1e-6 is its contract at t = 30
    assert dq < 1e-9 and dc < 1e-6, f"steady-state defect {dq:.3e}, {dc:.3e}"
    return f"quantum {dq:.2e}, classical {dc:.2e}"


def check_lag_zero_reduction():
    g = build(build_hybrid(PARAMS))
    fp = simulate_trajectory(g, initial_hybrid(), 20.0, 0.1, trajectory_rng(7, 0))
    records = smooth_path(g, fp, 0.0)
    worst = 0.0
    for i, rec in enumerate(records):
        worst = max(worst, np.max(np.abs(rec.state.blocks - fp.states[i])))
        worst = max(worst, np.max(np.abs(rec.classical_dist - reduce_classical(fp.state(i)))))
    assert worst < 1e-12, f"lag-0 deviation {worst:.3e}"
    return f"max deviation {worst:.2e}"


def check_effect_invariants():
    g = build(build_hybrid(PARAMS))
    rng = trajectory_rng(11, 0)
    traj = sample_trajectory(g, initial_hybrid(), 10.0, rng)
    ep = effect_backward(g, traj, 0.0, 10.0, 0.1)
    last = ep.effects[-1]
    assert np.array_equal(last, np.broadcast_to(np.eye(2), (2, 2, 2)))
    herm = np.max(np.abs(ep.effects - ep.effects.conj().transpose(0, 1, 3, 2)))
    assert herm < 1e-10, f"effect Hermiticity {herm:.3e}"
    fp = filter_path(g, initial_hybrid(), traj, 0.1)
    pairings = [
        hs_pairing(fp.state(i), ep.effect(i)).real for i in range(fp.times.size)
    ]
    assert min(pairings) > 0, f"non-positive pairing {min(pairings):.3e}"
    return f"E(T) = |I), Hermiticity {herm:.2e}, min pairing {min(pairings):.2e}"


def check_filtered_purity():
    g = build(build_hybrid(PARAMS))
    fp = simulate_trajectory(g, initial_hybrid(), 30.0, 0.05, trajectory_rng(13, 0))
    _, purq, _, _ = path_quantities(fp.states)
    assert np.all(purq >= 0.5 - 1e-9) and np.all(purq <= 1.0 + 1e-9)
    p1 = FluorParams(omega=1.0, eta=1.0)
    g1 = build(build_hybrid(p1))
    fp1 = simulate_trajectory(g1, initial_hybrid(), 30.0, 0.05, trajectory_rng(13, 1))
    if fp1.trajectory.times:
        after = fp1.times > fp1.trajectory.times[0] + 1e-12
        _, purq1, _, _ = path_quantities(fp1.states)
        defect = np.max(np.abs(purq1[after] - 1.0))
        assert defect < 1e-9, f"eta=1 purity defect {defect:.3e}"
    return "1/2 <= purity <= 1; eta=1 pure after first jump"


def check_hybrid_plain_equivalence():
    gh = build(build_hybrid(PARAMS))
    gp = build(build_plain(PARAMS))
    worst = 0.0
    for k in range(5):
        traj = sample_trajectory(gh, initial_hybrid(), 15.0, trajectory_rng(17, k))
        fph = filter_path(gh, initial_hybrid(), traj, 0.05)
        fpp = filter_path(gp, initial_plain(), traj, 0.05)
        hyb_q = fph.states.sum(axis=1)
        worst = max(worst, np.max(np.abs(hyb_q - fpp.states[:, 0])))
    assert worst < 1e-9, f"equivalence defect {worst:.3e}"
    return f"max defect {worst:.2e} on 5 shared records"


def check_renewal_intervals():
    g = build(build_hybrid(PARAMS))
    first, third = [], []
    k = 0
    while len(third) < 800 and k < 4000:
        traj = sample_trajectory(g, initial_hybrid(), 25.0, trajectory_rng(23, k))
        t = traj.times
        if len(t) >= 1:
            first.append(t[0])
        if len(t) >= 3:
            third.append(t[2] - t[1])
        k += 1
    stat = scipy.stats.ks_2samp(first[: len(third)], third)
    assert stat.pvalue > 0.01, f"renewal KS p={stat.pvalue:.4f}"
    return f"KS p={stat.pvalue:.3f} (n={len(third)} per position)"


def check_waiting_relations():
    u = np.linspace(0.0, 5.0, 101)
    w_eta = waiting_laplace(PARAMS, u)
    w_one = waiting_laplace(FluorParams(omega=1.0, eta=1.0), u)
    defect = np.max(np.abs(w_eta * (1 - (1 - PARAMS.eta) * w_one) - PARAMS.eta * w_one))
    assert defect < 1e-12, f"w1 relation defect {defect:.3e}"
    ts = np.linspace(0.0, 60.0, 4001)
    dens = waiting_density(PARAMS, ts)
    assert dens.min() > -1e-10, f"negative density {dens.min():.3e}"
    mass = waiting_cdf(PARAMS, 60.0)
    assert abs(mass - 1.0) < 1e-6, f"mass {mass}"
    return f"w1 identity {defect:.2e}, mass over [0,60] = {mass:.8f}"


def check_ensemble_closure():
    cfg = RunConfig(
        model="hybrid", omega_over_gamma=1.0, eta=0.8, t_total=30.0, dt=0.1,
        lag=20.0, n_traj=400, master_seed=31, workers=1,
    )
    gens, rho0 = build(build_hybrid(PARAMS)), initial_hybrid()
    stats = run_ensemble(cfg)
    pop, _, pd, _ = master_quantities(gens, rho0, stats.times)
    err_f = np.max(np.abs(stats.means["pop_f"] - pop))
    n_s = stats.n_smoothed
    err_s = np.max(np.abs(stats.means["pop_s"][:n_s] - pop[:n_s]))
    err_pd = np.max(np.abs(stats.means["pd_s"][:n_s] - pd[:n_s]))
    assert err_f < 0.08 and err_s < 0.08 and err_pd < 0.08, (
        f"closure errors {err_f:.3f}, {err_s:.3f}, {err_pd:.3f}"
    )
    # purity recovered by smoothing, averaged beyond the transient
    t = stats.times[:n_s]
    window = t > 5.0
    gap = stats.means["purq_s"][:n_s][window] - stats.means["purq_f"][:n_s][window]
    se = np.sqrt(stats.ses["purq_s"][:n_s][window] ** 2 + stats.ses["purq_f"][:n_s][window] ** 2)
    dominance = np.all(gap > -se)
    assert dominance, "smoothed purity below filtered beyond the transient"
    return f"filtered {err_f:.3f}, smoothed {err_s:.3f}, pd {err_pd:.3f} (n=400)"


def check_future_averaging():
    g = build(build_hybrid(PARAMS))
    rng = trajectory_rng(37, 0)
    fp = simulate_trajectory(g, initial_hybrid(), 8.0, 0.1, rng)
    rho_t = fp.state(-1)
    filtered = reduce_classical(rho_t)
    m = 400
    lag = 25.0
    samples = np.empty((m, 2))
    for i in range(m):
        fut_rng = trajectory_rng(37, i + 1)
        fut = sample_trajectory(g, rho_t, lag, fut_rng)
        ep = effect_backward(g, fut, 0.0, lag, lag)
        samples[i] = smoothed_classical(rho_t, ep.effect(0))
    mean = samples.mean(axis=0)
    sem = samples.std(axis=0, ddof=1) / np.sqrt(m)
    defect = np.abs(mean - filtered)
    assert np.all(defect <= 4 * sem + 1e-12), f"defect {defect}, sem {sem}"
    return f"|mean - filtered| = {defect.max():.4f} <= 4 SEM (M=400)"


def check_smoothed_state_validity():
    g = build(build_hybrid(PARAMS))
    fp = simulate_trajectory(g, initial_hybrid(), 25.0, 0.1, trajectory_rng(41, 0))
    records = smooth_path(g, fp, 10.0)
    for rec in records:
        linalg.check_state(rec.state, herm_tol=1e-9, eig_tol=1e-8, trace_tol=1e-9)
        linalg.check_classical_dist(rec.classical_dist)
    return f"{len(records)} records Hermitian, PSD, unit trace"


def check_seed_determinism():
    cfg = RunConfig(
        model="hybrid", t_total=5.0, dt=0.1, lag=2.0, n_traj=40, master_seed=53,
    )
    with tempfile.TemporaryDirectory() as tmp:
        paths = [os.path.join(tmp, f"run{i}.csv") for i in range(2)]
        for path in paths:
            emit_csv(run_ensemble(cfg), path)
        with open(paths[0], "rb") as fh:
            first = fh.read()
        with open(paths[1], "rb") as fh:
            second = fh.read()
    assert first == second, "reruns differ"
    cfg2 = replace(cfg, workers=2)
    s1, s2 = run_ensemble(cfg), run_ensemble(cfg2)
    for key in s1.means:
        same = np.array_equal(s1.means[key], s2.means[key], equal_nan=True)
        assert same, f"worker-count dependence in {key}"
    return "byte-identical reruns; 1 vs 2 workers bit-identical"


def check_se_honesty():
    cfg = RunConfig(
        model="hybrid", t_total=10.0, dt=0.1, lag=10.0, n_traj=400, master_seed=59,
    )
    stats = run_ensemble(cfg)
    n_batches = 20
    per = cfg.n_traj // n_batches
    batch_means = []
    for b in range(n_batches):
        # same per-trajectory streams, consumed in disjoint index windows
        batch_means.append(_batch_mean(cfg, b * per, (b + 1) * per))
    batch_means = np.stack(batch_means)
    se_batch = batch_means.std(axis=0, ddof=1) / np.sqrt(n_batches)
    idx = stats.times >= 2.0
    ratio = stats.ses["pop_f"][idx] / np.maximum(se_batch[idx], 1e-12)
    ok = np.all((ratio > 1 / 1.5) & (ratio < 1.5))
    assert ok, f"SE ratio range [{ratio.min():.2f}, {ratio.max():.2f}]"
    return f"SE/batch-means ratio in [{ratio.min():.2f}, {ratio.max():.2f}]"


def _batch_mean(cfg, lo, hi):
    from .ensemble import _run_chunk

    _, parts = _run_chunk((cfg, lo, hi))
    return parts["pop_f"][1]


CHECKS = [
    ("vectorize-roundtrip", check_vectorize_roundtrip),
    ("expm-semigroup", check_expm_semigroup),
    ("dual-pairing-identity", check_dual_pairing),
    ("trace-dual-probe", check_trace_dual_probe),
    ("trace-conservation", check_trace_conservation),
    ("state-positivity", check_positivity),
    ("split-consistency", check_split_consistency),
    ("quantum-reduction", check_quantum_reduction),
    ("steady-state-oracle", check_steady_state),
    ("lag-zero-reduction", check_lag_zero_reduction),
    ("effect-invariants", check_effect_invariants),
    ("filtered-purity-bounds", check_filtered_purity),
    ("hybrid-plain-equivalence", check_hybrid_plain_equivalence),
    ("renewal-intervals", check_renewal_intervals),
    ("waiting-time-relations", check_waiting_relations),
    ("ensemble-closure", check_ensemble_closure),
    ("future-averaging", check_future_averaging),
    ("smoothed-state-validity", check_smoothed_state_validity),
    ("seed-determinism", check_seed_determinism),
    ("se-honesty", check_se_honesty),
]


def run_validation(stream=None) -> bool:
    """Run every check, print one PASS/FAIL line each, return overall result."""
    out = stream if stream is not None else io.StringIO()
    all_ok = True
    for name, fn in CHECKS:
        try:
            detail = fn()
            line = f"PASS {name}: {detail}"
        except AssertionError as exc:
            all_ok = False
            line = f"FAIL {name}: {exc}"
        except Exception as exc:  # noqa: BLE001 - a crash is a failure, report it
            all_ok = False
            line = f"FAIL {name}: {type(exc).__name__}: {exc}"
        print(line, file=out, flush=True)
    if stream is None:
        print(out.getvalue(), end="")
    return all_ok
