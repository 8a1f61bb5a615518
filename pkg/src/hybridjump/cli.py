"""Command-line interface.

Subcommands: solve (deterministic master curves), trajectory (one monitored
realization with filtered and smoothed path), ensemble (Monte Carlo
statistics), waiting-time (analytic density table plus KS comparison of the
two samplers) and validate (invariant suite).  Exit codes: 0 success,
1 validation failure or runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np
import scipy.stats

from .configfile import parse_flat
from .ensemble import (
    EnsembleStats,
    RunConfig,
    emit_csv,
    master_quantities,
    path_quantities,
    resolve_model,
    run_ensemble,
    stats_from_curves,
)
from .errors import ConfigError
from .fluorescence import (
    FluorParams,
    thinning_sampler,
    inversion_sampler,
    waiting_cdf,
    waiting_density,
)
from .generators import uniform_grid
from .smoothing import smoothed_quantities
from .trajectories import filter_path, sample_trajectory, trajectory_rng
from .validate import run_validation


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", metavar="PATH", help="flat key = value config file")
    parser.add_argument("--model", help="plain | hybrid | custom:<path>")
    parser.add_argument("--omega", type=float, help="Rabi frequency over gamma")
    parser.add_argument("--eta", type=float, help="detector efficiency in (0, 1]")
    parser.add_argument("--t-total", type=float, help="window length in 1/gamma")
    parser.add_argument("--dt", type=float, help="grid step in 1/gamma")
    parser.add_argument("--lag", type=float, help="smoothing lag in 1/gamma")
    parser.add_argument("--n-traj", type=int, help="number of trajectories")
    parser.add_argument("--seed", type=int, help="64-bit master seed")
    parser.add_argument("--out", metavar="DIR", help="output directory")


_OVERRIDES = {
    "model": "model",
    "omega": "omega_over_gamma",
    "eta": "eta",
    "t_total": "t_total",
    "dt": "dt",
    "lag": "lag",
    "n_traj": "n_traj",
    "seed": "master_seed",
    "out": "outputs",
}


def _build_config(args) -> RunConfig:
    mapping = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            mapping.update(parse_flat(fh.read()))
    for arg_name, cfg_name in _OVERRIDES.items():
        value = getattr(args, arg_name)
        if value is not None:
            mapping[cfg_name] = value
    return RunConfig.from_mapping(mapping)


def _out_path(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.outputs, exist_ok=True)
    return os.path.join(cfg.outputs, name)


def _cmd_solve(args) -> int:
    cfg = _build_config(args)
    gens, rho0 = resolve_model(cfg)
    times = uniform_grid(cfg.t_total, cfg.dt)
    pop, purq, pd, purc = master_quantities(gens, rho0, times)
    stats = stats_from_curves(times, pop, purq, pd, purc)
    path = _out_path(cfg, "solve.csv")
    emit_csv(stats, path)
    print(f"solve: wrote {path}; final population {pop[-1]:.9f}, "
          f"final d-population {pd[-1]:.9f}")
    return 0


def _cmd_trajectory(args) -> int:
    cfg = _build_config(args)
    gens, rho0 = resolve_model(cfg)
    rng = trajectory_rng(cfg.master_seed, 0)
    traj = sample_trajectory(gens, rho0, cfg.t_total, rng)
    fp = filter_path(gens, rho0, traj, cfg.dt)
    pop, purq, pd, purc = path_quantities(fp.states)
    n_s, pop_s, purq_s, pd_s, purc_s = smoothed_quantities(gens, fp, cfg.lag)

    def _pad(arr):
        full = np.full(fp.times.size, np.nan)
        full[:n_s] = arr
        return full

    stats = EnsembleStats(
        times=fp.times,
        n_traj=1,
        n_smoothed=n_s,
        means={
            "pop_f": pop, "purq_f": purq, "pd_f": pd, "purc_f": purc,
            "pop_s": _pad(pop_s), "purq_s": _pad(purq_s),
            "pd_s": _pad(pd_s), "purc_s": _pad(purc_s),
        },
        ses={
            "pop_f": np.full(fp.times.size, np.nan),
            "pop_s": np.full(fp.times.size, np.nan),
        },
    )
    path = _out_path(cfg, "trajectory.csv")
    emit_csv(stats, path)
    jumps_path = _out_path(cfg, "trajectory_jumps.csv")
    with open(jumps_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("jump_time\n")
        for t in traj.times:
            fh.write(f"{t:.12g}\n")
    print(f"trajectory: {len(traj.times)} detections on (0, {cfg.t_total}]; "
          f"wrote {path} and {jumps_path}")
    return 0


def _cmd_ensemble(args) -> int:
    cfg = _build_config(args)
    stats = run_ensemble(cfg)
    path = _out_path(cfg, "ensemble.csv")
    emit_csv(stats, path)
    print(f"ensemble: {cfg.n_traj} trajectories; wrote {path}")
    return 0


def _cmd_waiting_time(args) -> int:
    cfg = _build_config(args)
    kind = cfg.model.split(":", 1)[0]
    if kind == "custom":
        raise ConfigError("waiting-time needs the plain or hybrid fluorescence model")
    p = FluorParams(omega=cfg.omega_over_gamma, eta=cfg.eta)
    times = uniform_grid(cfg.t_total, cfg.dt)
    dens = waiting_density(p, times)
    table = _out_path(cfg, "waiting_density.csv")
    with open(table, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,density\n")
        for t, w in zip(times, dens):
            fh.write(f"{t:.12g},{w:.12g}\n")

    n = cfg.n_traj
    rng_inv = trajectory_rng(cfg.master_seed, 0)
    rng_thin = trajectory_rng(cfg.master_seed, 1)
    inv = np.array([inversion_sampler(p, rng_inv, hybrid=(kind == "hybrid")) for _ in range(n)])
    thin = np.array([thinning_sampler(p, rng_thin) for _ in range(n)])
    two = scipy.stats.ks_2samp(inv, thin)
    one = scipy.stats.kstest(inv, lambda t: waiting_cdf(p, t))
    mean = inv.mean()
    sem = inv.std(ddof=1) / np.sqrt(n)
    expected = (p.gamma**2 + 2 * p.omega**2) / (p.gamma * p.eta * p.omega**2)
    lines = [
        f"waiting-time: wrote {table}",
        f"two-sample KS inversion vs thinning: D={two.statistic:.5f} p={two.pvalue:.4f}",
        f"one-sample KS inversion vs density:  D={one.statistic:.5f} p={one.pvalue:.4f}",
        f"sample mean {mean:.4f} (expected {expected:.4f}, SE {sem:.4f})",
    ]
    ok = two.pvalue > 0.01 and one.pvalue > 0.01 and abs(mean - expected) < 3 * sem
    lines.append("waiting-time: PASS" if ok else "waiting-time: FAIL")
    print("\n".join(lines))
    return 0 if ok else 1


def _cmd_validate(args) -> int:
    ok = run_validation(stream=sys.stdout)
    print("validate: all checks green" if ok else "validate: FAILURES above")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridjump",
        description="Filtering and smoothing of monitored hybrid quantum-classical dynamics",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (
        ("solve", _cmd_solve, "deterministic master-equation curves"),
        ("trajectory", _cmd_trajectory, "one monitored realization, filtered + smoothed"),
        ("ensemble", _cmd_ensemble, "Monte Carlo ensemble statistics"),
        ("waiting-time", _cmd_waiting_time, "waiting-time density table and KS report"),
        ("validate", _cmd_validate, "run the invariant suite"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
