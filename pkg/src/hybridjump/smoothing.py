"""Backward effect propagation and Bayesian smoothing of filtered paths.

The effect operator at time t is the dual propagator over the future
window applied to the trace-dual element: stepping backward from t+lag,
between jumps the dual no-detection propagator acts, and at each recorded
jump the dual of the monitored channel acts at the exact jump time.  The
smoothed classical distribution weighs each filtered block by its pairing
with the matching effect block; the smoothed hybrid state reweighs the
normalized filtered blocks with those probabilities.

Fixed-lag smoothing slides a window of lag/dt grid cells along the path.
Each cell carries one dual propagator factor, and the window product is
maintained with a two-stack queue so the whole path costs an amortized
O(1) small-matrix products per grid point instead of one backward pass
per time point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.linalg as sla

from .errors import InconsistentWeight, InfeasibleFuture
from .generators import ModelGenerators, StepCache, reduce_quantum, uniform_grid
from .linalg import HybridOperator
from .trajectories import FilteredPath, Trajectory

ZERO_BLOCK_TRACE = 1e-14  # filtered block below this is treated as empty
ZERO_WEIGHT = 1e-12  # classical weight that an empty block may still carry


@dataclass(frozen=True)
class EffectPath:
    """Grid-sampled effect operators, rescaled per step to unit max entry.

    ``effects[i] * exp(log_scales[i])`` is the raw backward-propagated
    effect; the rescaling keeps long windows away from underflow and drops
    out of every smoothed quantity, which are ratios.
    """

    times: np.ndarray
    effects: np.ndarray  # (n_times, n_classical, d, d)
    log_scales: np.ndarray

    def effect(self, i: int) -> HybridOperator:
        return HybridOperator(self.effects[i])


@dataclass(frozen=True)
class SmoothedRecord:
    """Smoothed quantities at one grid time."""

    time: float
    classical_dist: np.ndarray
    state: HybridOperator
    quantum_partial: np.ndarray
    classical_partial: np.ndarray
    quantum_purity: float
    classical_purity: float


def _vec_identity(n_c: int, d: int) -> np.ndarray:
    blocks = np.broadcast_to(np.eye(d, dtype=complex), (n_c, d, d))
    return blocks.transpose(0, 2, 1).reshape(-1).copy()


def effect_backward(
    g: ModelGenerators,
    traj: Trajectory,
    t_start: float,
    t_end: float,
    dt: float,
    cache: Optional[StepCache] = None,
) -> EffectPath:
    """Backward-propagated effects on the grid of [t_start, t_end].

    The trajectory must contain only jumps inside (t_start, t_end]; the
    effect at t_end is exactly the trace-dual element.
    """
    if t_end < t_start:
        raise ValueError(f"need t_start <= t_end, got {t_start} > {t_end}")
    times = uniform_grid(t_end, dt, t_start=t_start)
    jumps = np.asarray(traj.times, dtype=float)
    if jumps.size and (jumps.min() <= t_start or jumps.max() > t_end):
        raise ValueError(f"jump times must lie in ({t_start}, {t_end}]")
    if cache is None or cache.generators is not g or cache.dt != dt:
        cache = StepCache(g, dt)
    n_c, d = g.n_classical, g.dim
    n = times.size
    effects = np.empty((n, n_c, d, d), dtype=complex)
    log_scales = np.empty(n)
    v = _vec_identity(n_c, d)
    effects[n - 1] = v.reshape(n_c, d, d).transpose(0, 2, 1)
    log_scales[n - 1] = 0.0
    log_scale = 0.0
    for k in range(n - 2, -1, -1):
        t_lo, t_hi = times[k], times[k + 1]
        i0, i1 = np.searchsorted(jumps, (t_lo, t_hi), side="right")
        if i0 == i1:
            v = cache.step_dual_D @ v
        else:
            # walk the cell's jumps in descending time: dual propagate down
            # to each jump, apply the dual channel, continue to the cell floor
            t_prev = t_hi
            for s_jump in jumps[i0:i1][::-1]:
                if t_prev > s_jump:
                    v = sla.expm(cache.dual_D_mat * (t_prev - s_jump)) @ v
                v = cache.dual_J_mat @ v
                t_prev = s_jump
            if t_prev > t_lo:
                v = sla.expm(cache.dual_D_mat * (t_prev - t_lo)) @ v
        scale = np.max(np.abs(v))
        if scale > 0:
            v = v / scale
            log_scale += np.log(scale)
        effects[k] = v.reshape(n_c, d, d).transpose(0, 2, 1)
        log_scales[k] = log_scale
    effects.flags.writeable = False
    log_scales.flags.writeable = False
    return EffectPath(times=times, effects=effects, log_scales=log_scales)


def smoothed_classical(rho_f: HybridOperator, effect: HybridOperator) -> np.ndarray:
    """Classical distribution given past and future records.

    Weighs each label by Tr[rho_R E_R]; the result is scale invariant in
    the effect, and reduces to the filtered marginal when the effect is
    the trace-dual element.
    """
    if rho_f.n_classical != effect.n_classical or rho_f.dim != effect.dim:
        raise ValueError("state and effect live in different hybrid spaces")
    weights = np.einsum("rij,rji->r", rho_f.blocks, effect.blocks).real
    weights = np.maximum(weights, 0.0)
    total = weights.sum()
    if total <= 1e-300:
        raise InfeasibleFuture("all smoothing weights vanished")
    return weights / total


def smoothed_state(rho_f: HybridOperator, probs: np.ndarray) -> HybridOperator:
    """Reweigh the normalized filtered blocks with smoothed probabilities."""
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (rho_f.n_classical,):
        raise ValueError(f"need {rho_f.n_classical} probabilities, got {probs.shape}")
    traces = np.einsum("rii->r", rho_f.blocks).real
    blocks = np.zeros_like(rho_f.blocks)
    for r in range(rho_f.n_classical):
        if traces[r] < ZERO_BLOCK_TRACE:
            if probs[r] >= ZERO_WEIGHT:
                raise InconsistentWeight(
                    f"weight {probs[r]:.3e} on empty filtered block {r}"
                )
            continue
        blocks[r] = probs[r] * rho_f.blocks[r] / traces[r]
    return HybridOperator(blocks)


class _ProductWindow:
    """Sliding-window product of square matrices, oldest factor leftmost.

    Two-stack queue: each push/pop costs an amortized O(1) matrix products.
    """

    def __init__(self):
        self._front = []  # (matrix, product from this element through front bottom)
        self._back = []
        self._back_agg = None

    def push(self, m: np.ndarray):
        self._back.append(m)
        self._back_agg = m if self._back_agg is None else self._back_agg @ m

    def pop(self):
        if not self._front:
            agg = None
            while self._back:
                m = self._back.pop()
                agg = m if agg is None else m @ agg
                self._front.append((m, agg))
            self._back_agg = None
        if not self._front:
            raise IndexError("pop from empty window")
        self._front.pop()

    def product(self) -> Optional[np.ndarray]:
        if self._front and self._back_agg is not None:
            return self._front[-1][1] @ self._back_agg
        if self._front:
            return self._front[-1][1]
        return self._back_agg


def _cell_dual_factor(cache: StepCache, t_lo, t_hi, cell_jumps) -> np.ndarray:
    """Dual propagator factor for one grid cell (t_lo, t_hi]."""
    if cell_jumps.size == 0:
        return cache.step_dual_D
    m = None
    t_prev = t_lo
    # dual factors compose in ascending time, leftmost nearest the cell floor
    for s_jump in cell_jumps:
        if s_jump > t_prev:
            seg = sla.expm(cache.dual_D_mat * (s_jump - t_prev))
            m = seg if m is None else m @ seg
        m = cache.dual_J_mat if m is None else m @ cache.dual_J_mat
        t_prev = s_jump
    if t_hi > t_prev:
        seg = sla.expm(cache.dual_D_mat * (t_hi - t_prev))
        m = seg if m is None else m @ seg
    return m


def _window_width(lag: float, dt: float) -> int:
    if lag < 0:
        raise ValueError(f"lag must be >= 0, got {lag}")
    w = round(lag / dt)
    if abs(w * dt - lag) > 1e-9 * max(1.0, lag):
        raise ValueError(f"dt={dt} does not divide lag={lag} within 1e-9")
    return w


def _smoothed_effects(
    g: ModelGenerators,
    fp: FilteredPath,
    lag: float,
    cache: Optional[StepCache] = None,
):
    """Effect vectors at every grid t with t + lag inside the path.

    Yields (index, effect blocks scaled to unit max entry).
    """
    times = fp.times
    if times.size < 2:
        if lag == 0 and times.size == 1:
            n_c, d = g.n_classical, g.dim
            yield 0, np.broadcast_to(np.eye(d, dtype=complex), (n_c, d, d))
        return
    dt = fp.dt
    width = _window_width(lag, dt)
    n_valid = times.size - width
    if n_valid <= 0:
        return
    n_c, d = g.n_classical, g.dim
    vec_i = _vec_identity(n_c, d)
    if width == 0:
        ident = vec_i.reshape(n_c, d, d).transpose(0, 2, 1)
        for i in range(n_valid):
            yield i, ident
        return
    if cache is None or cache.generators is not g or cache.dt != dt:
        cache = StepCache(g, dt)
    jumps = np.asarray(fp.trajectory.times, dtype=float)
    cell_edges = np.searchsorted(jumps, times, side="right")

    def cell(k: int) -> np.ndarray:
        return _cell_dual_factor(
            cache, times[k], times[k + 1], jumps[cell_edges[k] : cell_edges[k + 1]]
        )

    window = _ProductWindow()
    for k in range(width):
        window.push(cell(k))
    for i in range(n_valid):
        if i > 0:
            window.pop()
            window.push(cell(i + width - 1))
        v = window.product() @ vec_i
        scale = np.max(np.abs(v))
        if scale > 0:
            v = v / scale
        yield i, v.reshape(n_c, d, d).transpose(0, 2, 1)


def smooth_path(
    g: ModelGenerators,
    fp: FilteredPath,
    lag: float,
    cache: Optional[StepCache] = None,
) -> List[SmoothedRecord]:
    """Fixed-lag smoothed records for every grid t with t + lag in the path."""
    records = []
    for i, eff_blocks in _smoothed_effects(g, fp, lag, cache=cache):
        rho_f = fp.state(i)
        probs = smoothed_classical(rho_f, HybridOperator(eff_blocks))
        state = smoothed_state(rho_f, probs)
        rho_q = reduce_quantum(state)
        records.append(
            SmoothedRecord(
                time=float(fp.times[i]),
                classical_dist=probs,
                state=state,
                quantum_partial=rho_q,
                classical_partial=probs.copy(),
                quantum_purity=float(np.einsum("ij,ji->", rho_q, rho_q).real),
                classical_purity=float(np.sum(probs**2)),
            )
        )
    return records


def smoothed_quantities(
    g: ModelGenerators,
    fp: FilteredPath,
    lag: float,
    excited_index: int = -1,
    cache: Optional[StepCache] = None,
):
    """Vectorized smoothed statistics along one path.

    Returns (n_valid, pop, purq, pd, purc) arrays; the record-building
    smooth_path is the reference implementation for the same quantities.
    """
    times = fp.times
    if times.size > 1:
        width = _window_width(lag, fp.dt)
        n_valid = max(times.size - width, 0)
    else:
        n_valid = 1 if (lag == 0 and times.size == 1) else 0
    pop = np.empty(n_valid)
    purq = np.empty(n_valid)
    pd = np.empty(n_valid)
    purc = np.empty(n_valid)
    n_c, d = g.n_classical, g.dim
    for i, eff_blocks in _smoothed_effects(g, fp, lag, cache=cache):
        rho_b = fp.states[i]
        weights = np.einsum("rij,rji->r", rho_b, eff_blocks).real
        weights = np.maximum(weights, 0.0)
        total = weights.sum()
        if total <= 1e-300:
            raise InfeasibleFuture("all smoothing weights vanished")
        probs = weights / total
        traces = np.einsum("rii->r", rho_b).real
        safe = traces > ZERO_BLOCK_TRACE
        coeff = np.zeros(n_c)
        coeff[safe] = probs[safe] / traces[safe]
        rho_q = np.einsum("r,rij->ij", coeff, rho_b)
        pop[i] = rho_q[excited_index, excited_index].real
        purq[i] = np.einsum("ij,ji->", rho_q, rho_q).real
        pd[i] = probs[0]
        purc[i] = np.sum(probs**2)
    return n_valid, pop, purq, pd, purc
