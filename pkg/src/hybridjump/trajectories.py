"""Monitored jump trajectories: waiting-time sampling and forward filtering.

Jump times are drawn by inverse-transform sampling of the survival
probability Tr[(1|exp(D tau)|rho)], with bracket doubling followed by
bisection.  The filtered path alternates renormalized no-detection
propagation with the measurement transformation at the sampled times;
jump times are kept exact (never snapped to the grid) and the grid stores
the state immediately after any jump occurring in (t-dt, t].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as sla

from .errors import Extinct, NullJump
from .generators import ModelGenerators, StepCache, uniform_grid
from .linalg import HybridOperator, devectorize, symmetrize, vectorize


@dataclass(frozen=True)
class Trajectory:
    """Strictly increasing detection times inside the window (0, T]."""

    times: Tuple[float, ...]
    window: float

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", times)
        if self.window < 0:
            raise ValueError(f"window must be >= 0, got {self.window}")
        last = 0.0
        for t in times:
            if t <= last:
                raise ValueError(f"jump times must be strictly increasing in (0, T], got {times}")
            last = t
        if times and times[-1] > self.window:
            raise ValueError(f"jump time {times[-1]} outside window (0, {self.window}]")

    def __len__(self):
        return len(self.times)


@dataclass(frozen=True)
class FilteredPath:
    """Normalized filtered states sampled on a uniform grid."""

    times: np.ndarray
    states: np.ndarray  # (n_times, n_classical, d, d)
    trajectory: Trajectory

    def state(self, i: int) -> HybridOperator:
        return HybridOperator(self.states[i])

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0


def trajectory_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent per-trajectory stream; deterministic in (master_seed, index)."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=(index,)))
    )


def _trace_of_vec(vec: np.ndarray, n_c: int, d: int) -> float:
    # total trace of a column-stacked hybrid operator; column stacking puts
    # the diagonal of each block on the reshaped (r, j, j) positions
    return float(np.einsum("rjj->", vec.reshape(n_c, d, d)).real)


def survival(g: ModelGenerators, rho: HybridOperator, tau: float) -> float:
    """No-detection probability over tau starting from normalized rho."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    if tau == 0.0:
        return 1.0
    v = sla.expm(g.D.matrix * tau) @ vectorize(rho)
    return _trace_of_vec(v, g.n_classical, g.dim)


def sample_jump_time(
    g: ModelGenerators,
    rho: HybridOperator,
    t_max: float,
    rng: np.random.Generator,
) -> Optional[float]:
    """Inverse-transform sample of the next detection time, or None for no jump.

    Draws one uniform u, returns tau solving survival(tau) = u by bracket
    doubling and bisection to 1e-10 * t_max; returns None when
    survival(t_max) > u (no detection inside the window).
    """
    if t_max <= 0:
        raise ValueError(f"t_max must be > 0, got {t_max}")
    u = rng.random()
    v0 = vectorize(rho)
    n_c, d = g.n_classical, g.dim
    D = g.D.matrix

    def surv(tau: float) -> float:
        return _trace_of_vec(sla.expm(D * tau) @ v0, n_c, d)

    if surv(t_max) > u:
        return None
    # grow the bracket by doubling until the survival crosses u
    lo = 0.0
    hi = t_max / 1024.0
    while hi < t_max and surv(hi) >= u:
        lo = hi
        hi = min(2.0 * hi, t_max)
    tol = 1e-10 * t_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if surv(mid) >= u:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def sample_trajectory(
    g: ModelGenerators,
    rho0: HybridOperator,
    t_end: float,
    rng: np.random.Generator,
) -> Trajectory:
    """Draw detection times on (0, t_end] by repeated waiting-time sampling."""
    if t_end <= 0:
        raise ValueError(f"t_end must be > 0, got {t_end}")
    times = []
    t_cur = 0.0
    rho = rho0
    n_c, d = g.n_classical, g.dim
    while True:
        remaining = t_end - t_cur
        if remaining <= 0:
            break
        tau = sample_jump_time(g, rho, remaining, rng)
        if tau is None:
            break
        t_cur = t_cur + tau
        times.append(t_cur)
        # conditional propagation to the jump time, then the measurement map
        v = sla.expm(g.D.matrix * tau) @ vectorize(rho)
        s = _trace_of_vec(v, n_c, d)
        if s < 1e-14:
            raise Extinct(f"survival {s:.3e} reaching sampled jump at t={t_cur}")
        w = g.J.matrix @ (v / s)
        sw = _trace_of_vec(w, n_c, d)
        if sw <= 1e-14:
            raise NullJump(f"sampled jump at t={t_cur} has weight {sw:.3e}")
        rho = symmetrize(devectorize(w / sw, n_c, d))
    return Trajectory(times=tuple(times), window=t_end)


def _normalize_record(v: np.ndarray, n_c: int, d: int) -> np.ndarray:
    """Normalized, symmetrized blocks of a column-stacked state vector."""
    s = float(np.einsum("rjj->", v.reshape(n_c, d, d)).real)
    if s < 1e-14:
        raise Extinct(f"survival probability {s:.3e} during replay")
    b = (v / s).reshape(n_c, d, d).transpose(0, 2, 1)
    return 0.5 * (b + b.conj().transpose(0, 2, 1))


def filter_path(
    g: ModelGenerators,
    rho0: HybridOperator,
    traj: Trajectory,
    dt: float,
    cache: Optional[StepCache] = None,
) -> FilteredPath:
    """Deterministic filtered path on a uniform grid for given jump times."""
    times = uniform_grid(traj.window, dt)
    if cache is None or cache.generators is not g or cache.dt != dt:
        cache = StepCache(g, dt)
    n_c, d = g.n_classical, g.dim
    jumps = np.asarray(traj.times, dtype=float)
    states = np.empty((times.size, n_c, d, d), dtype=complex)
    states[0] = rho0.blocks
    v = vectorize(rho0)
    s0 = float(np.einsum("rjj->", v.reshape(n_c, d, d)).real)
    if abs(s0 - 1.0) > 1e-9:
        raise ValueError(f"initial state has total trace {s0}")
    for k in range(times.size - 1):
        t_lo, t_hi = times[k], times[k + 1]
        # jumps inside (t_lo, t_hi]; a jump exactly at a grid time belongs
        # to the cell it closes, so the grid stores the post-jump state
        i0, i1 = np.searchsorted(jumps, (t_lo, t_hi), side="right")
        t_prev = t_lo
        if i0 == i1:
            v = cache.step_D @ v
        else:
            for s_jump in jumps[i0:i1]:
                if s_jump > t_prev:
                    v = sla.expm(cache.D_mat * (s_jump - t_prev)) @ v
                v = _normalize_record(v, n_c, d).transpose(0, 2, 1).reshape(-1)
                w = cache.J_mat @ v
                sw = float(np.einsum("rjj->", w.reshape(n_c, d, d)).real)
                if sw <= 1e-14:
                    raise NullJump(f"replayed jump at t={s_jump} has weight {sw:.3e}")
                v = w
                t_prev = s_jump
            if t_hi > t_prev:
                v = sla.expm(cache.D_mat * (t_hi - t_prev)) @ v
        states[k + 1] = _normalize_record(v, n_c, d)
        v = states[k + 1].transpose(0, 2, 1).reshape(-1)
    states.flags.writeable = False
    return FilteredPath(times=times, states=states, trajectory=traj)


def simulate_trajectory(
    g: ModelGenerators,
    rho0: HybridOperator,
    t_end: float,
    dt: float,
    rng: np.random.Generator,
    cache: Optional[StepCache] = None,
) -> FilteredPath:
    """Sample a monitored trajectory and return its filtered path."""
    traj = sample_trajectory(g, rho0, t_end, rng)
    return filter_path(g, rho0, traj, dt, cache=cache)


def trajectory_log_weight(g: ModelGenerators, traj: Trajectory, rho0: HybridOperator) -> float:
    """Log probability density of the trajectory (propagator trace form).

    Returns -inf for infeasible trajectories, e.g. a jump out of a dark state.
    """
    n_c, d = g.n_classical, g.dim
    v = vectorize(rho0)
    log_w = 0.0
    t_prev = 0.0
    for s_jump in traj.times:
        delta = s_jump - t_prev
        if delta > 0:
            v = sla.expm(g.D.matrix * delta) @ v
            s = float(np.einsum("rjj->", v.reshape(n_c, d, d)).real)
            if s <= 0:
                return -np.inf
            log_w += np.log(s)
            v = v / s
        v = g.J.matrix @ v
        s = float(np.einsum("rjj->", v.reshape(n_c, d, d)).real)
        if s <= 0:
            return -np.inf
        log_w += np.log(s)
        v = v / s
        t_prev = s_jump
    delta = traj.window - t_prev
    if delta > 0:
        v = sla.expm(g.D.matrix * delta) @ v
        s = float(np.einsum("rjj->", v.reshape(n_c, d, d)).real)
        if s <= 0:
            return -np.inf
        log_w += np.log(s)
    return log_w
