"""Command-line entry point: ``homodyne-sim``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiment as ex
from .gaussian_core import CovarianceError


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit integer")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed number {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"{text} must be > 0")
    return v


def _add_config_args(sp: argparse.ArgumentParser, with_run_flags: bool = True):
    sp.add_argument("--config", type=Path, help="key = value scenario file")
    sp.add_argument("--scenario", choices=ex.SCENARIOS,
                    help="scenario whose defaults the file modifies")
    if with_run_flags:
        sp.add_argument("--seed", type=_u64)
        sp.add_argument("--dt", type=_positive_float, help="integration step (s)")
        sp.add_argument("--duration", type=_positive_float, help="simulated time (s)")
        sp.add_argument("--out", help="output CSV path")


def _load(args, keys=("seed", "dt", "duration", "out")) -> ex.ScenarioConfig:
    overrides = {k: getattr(args, k, None) for k in keys}
    scenario = args.scenario
    if args.config is None and scenario is None:
        scenario = "figure2"
    return ex.parse_config(args.config, scenario=scenario, overrides=overrides)


def cmd_simulate(args) -> int:
    cfg = _load(args)
    res = ex.run_scenario(cfg)
    print(f"wrote {cfg.out} ({len(res.trajectory.t)} rows)")
    for k, v in res.summary.items():
        print(f"  {k} = {v:.6g}" if isinstance(v, float) else f"  {k} = {v}")
    return 0


def cmd_ensemble(args) -> int:
    cfg = _load(args)
    res = ex.run_ensemble(cfg, args.n, args.master_seed, out_dir=args.out_dir,
                          write_trajectories=not args.stats_only)
    s = res.stats
    print(f"ran {args.n} trajectories to t = {s['t_s'][-1]:.6g} s; outputs in {args.out_dir}")
    print(f"  final Var(<X>) = {s['var_mean_x'][-1]:.6g}, E[a11] = {s['mean_a11'][-1]:.6g}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args, keys=())
    grid = ex.parse_grid(args.grid)
    rows = ex.run_sweep(cfg, grid, out=args.out, simulate=not args.analytic_only,
                        jobs=args.jobs)
    print(ex.SWEEP_HEADER)
    for r in rows:
        print(f"{r.gamma:.6g},{r.kappa_sq:.6g},{r.eta:.6g},{r.nbar:.6g},{r.a11_exact:.6g},"
              f"{r.a11_reduced:.6g},{r.a11_simulated:.6g},{r.rel_dev_reduced:.3e},"
              f"{r.rel_dev_simulated:.3e},{r.sim_method}")
    return 0


def cmd_verify(args) -> int:
    checks = ex.verify(n=args.n, master_seed=args.master_seed, out_dir=args.out_dir)
    for c in checks:
        print(c.line())
    return 0 if all(c.passed for c in checks) else 1


def cmd_keys(args) -> int:
    for key, (_, doc) in ex.CONFIG_KEYS.items():
        print(f"{key:24s} {doc}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="homodyne-sim",
        description="Conditional Gaussian-state simulation of a homodyne-monitored oscillator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="run one scenario and write its CSV")
    _add_config_args(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("ensemble", help="run N trajectories with independent noise streams")
    _add_config_args(sp)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--master-seed", type=_u64, required=True)
    sp.add_argument("--out-dir", type=Path, default=Path("ensemble"))
    sp.add_argument("--stats-only", action="store_true",
                    help="skip the per-trajectory CSVs")
    sp.set_defaults(func=cmd_ensemble)

    sp = sub.add_parser("sweep", help="steady-state a11 over a parameter grid")
    _add_config_args(sp, with_run_flags=False)
    sp.add_argument("--grid", type=Path, required=True,
                    help="file with lines like 'eta = 0.25, 0.5, 1'")
    sp.add_argument("--out", default="sweep.csv")
    sp.add_argument("--jobs", type=int, default=1, help="worker processes")
    sp.add_argument("--analytic-only", action="store_true",
                    help="skip the long-run integration column")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("verify", help="run the built-in numerical oracles")
    sp.add_argument("--n", type=int, default=1000, help="ensemble size for the variance oracle")
    sp.add_argument("--master-seed", type=_u64, default=2024)
    sp.add_argument("--out-dir", type=Path)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("keys", help="list the config file keys")
    sp.set_defaults(func=cmd_keys)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CovarianceError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
