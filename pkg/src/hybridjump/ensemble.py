"""Monte Carlo ensembles: trajectory statistics, CSV output, run configs.

Statistics are accumulated with Welford running moments inside fixed-size
chunks of trajectories and the chunks are merged in index order, so the
result is bit-identical for any worker count.  Every trajectory owns an
independent RNG stream derived from (master_seed, trajectory_index).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from typing import Dict, Tuple

import numpy as np

from .configfile import parse_flat
from .errors import ConfigError
from .fluorescence import FluorParams, build_hybrid, build_plain, initial_hybrid, initial_plain
from .generators import (
    ModelGenerators,
    StepCache,
    build,
    load_model_file,
    master_solve,
    uniform_grid,
)
from .linalg import HybridOperator
from .smoothing import smoothed_quantities
from .trajectories import filter_path, sample_trajectory, trajectory_rng

CSV_HEADER = "t,pop_f,pop_s,purq_f,purq_s,pd_f,pd_s,purc_f,purc_s,se_pop_f,se_pop_s"
FILTERED_KEYS = ("pop_f", "purq_f", "pd_f", "purc_f")
SMOOTHED_KEYS = ("pop_s", "purq_s", "pd_s", "purc_s")
CHUNK_SIZE = 32  # fixed regardless of worker count; part of the determinism contract


@dataclass(frozen=True)
class RunConfig:
    """One ensemble run. Times are in units of 1/gamma."""

    model: str = "hybrid"  # plain | hybrid | custom:<path>
    omega_over_gamma: float = 1.0
    eta: float = 0.8
    t_total: float = 30.0
    dt: float = 0.05
    lag: float = 30.0
    n_traj: int = 5000
    master_seed: int = 12345
    outputs: str = "."
    workers: int = 1

    def validate(self):
        if self.dt <= 0:
            raise ConfigError(f"dt must be > 0, got {self.dt}")
        for name, value in (("t_total", self.t_total), ("lag", self.lag)):
            if value < 0:
                raise ConfigError(f"{name} must be >= 0, got {value}")
            n = round(value / self.dt)
            if abs(n * self.dt - value) > 1e-9 * max(1.0, value):
                raise ConfigError(f"dt={self.dt} does not divide {name}={value} within 1e-9")
        if self.t_total <= 0:
            raise ConfigError(f"t_total must be > 0, got {self.t_total}")
        if self.n_traj < 1:
            raise ConfigError(f"n_traj must be >= 1, got {self.n_traj}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        kind = self.model.split(":", 1)[0]
        if kind not in ("plain", "hybrid", "custom"):
            raise ConfigError(f"unknown model {self.model!r}")
        if kind == "custom" and ":" not in self.model:
            raise ConfigError("custom model needs a path: custom:<path>")
        if kind != "custom":
            if not 0 < self.eta <= 1:
                raise ConfigError(f"eta must be in (0, 1], got {self.eta}")
            if self.omega_over_gamma < 0:
                raise ConfigError(f"omega must be >= 0, got {self.omega_over_gamma}")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "RunConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if key in ("model", "outputs"):
                kwargs[key] = str(raw)
            elif key in ("n_traj", "master_seed", "workers"):
                try:
                    kwargs[key] = int(raw)
                except ValueError:
                    raise ConfigError(f"config key {key} needs an integer, got {raw!r}") from None
            else:
                try:
                    kwargs[key] = float(raw)
                except ValueError:
                    raise ConfigError(f"config key {key} needs a number, got {raw!r}") from None
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_mapping(parse_flat(fh.read()))


def resolve_model(cfg: RunConfig) -> Tuple[ModelGenerators, HybridOperator]:
    """Build generators and the initial state for a run config."""
    kind, _, rest = cfg.model.partition(":")
    if kind == "plain":
        p = FluorParams(omega=cfg.omega_over_gamma, eta=cfg.eta)
        return build(build_plain(p)), initial_plain()
    if kind == "hybrid":
        p = FluorParams(omega=cfg.omega_over_gamma, eta=cfg.eta)
        return build(build_hybrid(p)), initial_hybrid()
    spec, rho0 = load_model_file(rest)
    return build(spec), rho0


@dataclass
class EnsembleStats:
    """Per-grid-time means and standard errors over an ensemble.

    Smoothed entries are NaN for t > t_total - lag, where the fixed-lag
    window no longer fits in the record.
    """

    times: np.ndarray
    n_traj: int
    n_smoothed: int
    means: Dict[str, np.ndarray]
    ses: Dict[str, np.ndarray]


class _Welford:
    """Running vector moments with deterministic chunk merging."""

    def __init__(self, size: int):
        self.n = 0
        self.mean = np.zeros(size)
        self.m2 = np.zeros(size)

    def push(self, x: np.ndarray):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def merge(self, other: "_Welford"):
        if other.n == 0:
            return
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean.copy(), other.m2.copy()
            return
        n = self.n + other.n
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.n / n)
        self.m2 = self.m2 + other.m2 + delta * delta * (self.n * other.n / n)
        self.n = n

    def sem(self) -> np.ndarray:
        if self.n < 2:
            return np.zeros_like(self.mean)
        return np.sqrt(self.m2 / (self.n * (self.n - 1)))


def path_quantities(states: np.ndarray, excited_index: int = -1):
    """(pop, purq, pd, purc) arrays from an (n, n_c, d, d) block stack."""
    pop = states[:, :, excited_index, excited_index].sum(axis=1).real
    rho_q = states.sum(axis=1)
    purq = np.einsum("tij,tji->t", rho_q, rho_q).real
    traces = np.einsum("trii->tr", states).real
    pd = traces[:, 0]
    purc = (traces**2).sum(axis=1)
    return pop, purq, pd, purc


def master_quantities(
    g: ModelGenerators, rho0: HybridOperator, times: np.ndarray, excited_index: int = -1
):
    """Deterministic curves of the tracked quantities."""
    states = np.stack([s.blocks for s in master_solve(g, rho0, times)])
    return path_quantities(states, excited_index)


def _run_chunk(args) -> Tuple[int, Dict[str, Tuple[int, np.ndarray, np.ndarray]]]:
    cfg, lo, hi = args
    gens, rho0 = resolve_model(cfg)
    cache = StepCache(gens, cfg.dt)
    times = uniform_grid(cfg.t_total, cfg.dt)
    n_smoothed = times.size - round(cfg.lag / cfg.dt)
    accs = {key: _Welford(times.size) for key in FILTERED_KEYS}
    accs.update({key: _Welford(max(n_smoothed, 0)) for key in SMOOTHED_KEYS})
    for idx in range(lo, hi):
        rng = trajectory_rng(cfg.master_seed, idx)
        traj = sample_trajectory(gens, rho0, cfg.t_total, rng)
        fp = filter_path(gens, rho0, traj, cfg.dt, cache=cache)
        pop, purq, pd, purc = path_quantities(fp.states)
        for key, arr in zip(FILTERED_KEYS, (pop, purq, pd, purc)):
            accs[key].push(arr)
        if n_smoothed > 0:
            _, pop_s, purq_s, pd_s, purc_s = smoothed_quantities(
                gens, fp, cfg.lag, cache=cache
            )
            for key, arr in zip(SMOOTHED_KEYS, (pop_s, purq_s, pd_s, purc_s)):
                accs[key].push(arr)
    return lo, {k: (a.n, a.mean, a.m2) for k, a in accs.items()}


def run_ensemble(cfg: RunConfig) -> EnsembleStats:
    """Simulate cfg.n_traj monitored trajectories and accumulate statistics.

    Deterministic under a fixed master_seed for any worker count: chunk
    boundaries are fixed and chunk results merge in index order.
    """
    cfg.validate()
    times = uniform_grid(cfg.t_total, cfg.dt)
    n_smoothed = max(times.size - round(cfg.lag / cfg.dt), 0)
    chunks = [
        (cfg, lo, min(lo + CHUNK_SIZE, cfg.n_traj))
        for lo in range(0, cfg.n_traj, CHUNK_SIZE)
    ]
    totals = {key: _Welford(times.size) for key in FILTERED_KEYS}
    totals.update({key: _Welford(n_smoothed) for key in SMOOTHED_KEYS})

    def _absorb(result):
        _, parts = result
        for key, (n, mean, m2) in parts.items():
            part = _Welford(mean.size)
            part.n, part.mean, part.m2 = n, mean, m2
            totals[key].merge(part)

    n_workers = min(cfg.workers, len(chunks))
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            for result in pool.map(_run_chunk, chunks):
                _absorb(result)
    else:
        for chunk in chunks:
            _absorb(_run_chunk(chunk))

    means, ses = {}, {}
    for key in FILTERED_KEYS:
        means[key] = totals[key].mean
        ses[key] = totals[key].sem()
    for key in SMOOTHED_KEYS:
        full = np.full(times.size, np.nan)
        full_se = np.full(times.size, np.nan)
        full[:n_smoothed] = totals[key].mean
        full_se[:n_smoothed] = totals[key].sem()
        means[key] = full
        ses[key] = full_se
    return EnsembleStats(
        times=times, n_traj=cfg.n_traj, n_smoothed=n_smoothed, means=means, ses=ses
    )


def stats_from_curves(times, pop, purq, pd, purc, smoothed=False) -> EnsembleStats:
    """Wrap deterministic curves in the EnsembleStats shape (zero SE)."""
    times = np.asarray(times, dtype=float)
    nan = np.full(times.size, np.nan)
    means = {"pop_f": pop, "purq_f": purq, "pd_f": pd, "purc_f": purc}
    if smoothed:
        means.update({"pop_s": pop.copy(), "purq_s": purq.copy(),
                      "pd_s": pd.copy(), "purc_s": purc.copy()})
    else:
        means.update({k: nan.copy() for k in SMOOTHED_KEYS})
    ses = {k: np.zeros(times.size) for k in FILTERED_KEYS}
    ses.update({
        k: (np.zeros(times.size) if smoothed else nan.copy()) for k in SMOOTHED_KEYS
    })
    return EnsembleStats(
        times=times,
        n_traj=0,
        n_smoothed=times.size if smoothed else 0,
        means=means,
        ses=ses,
    )


def _fmt(value: float) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return f"{value:.12g}"


def emit_csv(stats: EnsembleStats, path: str):
    """Write the ensemble statistics table (12 significant digits, UTF-8)."""
    columns = [
        stats.times,
        stats.means["pop_f"], stats.means["pop_s"],
        stats.means["purq_f"], stats.means["purq_s"],
        stats.means["pd_f"], stats.means["pd_s"],
        stats.means["purc_f"], stats.means["purc_s"],
        stats.ses["pop_f"], stats.ses["pop_s"],
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in zip(*columns):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def parse_csv(path: str) -> Dict[str, np.ndarray]:
    """Read an emit_csv table back into column arrays (empty cells -> NaN)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header!r}")
        names = header.split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    out = {}
    for i, name in enumerate(names):
        out[name] = np.array(
            [float(r[i]) if r[i] != "" else np.nan for r in rows], dtype=float
        )
    return out
