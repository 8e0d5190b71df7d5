"""Command-line entry point.

Exit status: 0 on success, 1 on a runtime failure, 2 on a usage error
(bad flags, missing or malformed input files).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import emit_curve, success_region_map, write_grid
from .config import ExperimentConfig, load_config_file
from .env import Box, ReacherEnv, Unconstrained, ZHeight, acceptance_rate
from .errors import ConfigError, InfeasibleRegionError
from .harness import aggregate_runs, load_agent, read_record, run_test_session, run_training

log = logging.getLogger("reacherbench")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        return load_config_file(p)
    except ConfigError as exc:
        raise UsageError(f"{p}: {exc}") from exc


def _checkpoint(path, config: ExperimentConfig):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"checkpoint not found: {p}")
    agent = load_agent(p)
    if agent.obs_dim != config.env.obs_dim:
        raise UsageError(
            f"{p} holds a policy for {agent.obs_dim}-entry observations; "
            f"config expects {config.env.obs_dim} (n_active={config.env.n_active})"
        )
    return agent


def cmd_train(args) -> int:
    config = _config(args.config)
    out = Path(args.out) if args.out else Path("runs") / config.name
    seeds = [args.seed] if args.seed is not None else list(config.seeds)
    for seed in seeds:
        record = run_training(config, seed, out, resume=not args.fresh)
        print(f"seed {seed}: {len(record.sessions)} sessions, best {record.best}/{config.test_episodes} "
              f"-> {out / f'run_seed{seed}.jsonl'}")
    return EXIT_OK


def cmd_test(args) -> int:
    config = _config(args.config)
    agent = _checkpoint(args.checkpoint, config)
    rng = np.random.default_rng(args.seed)
    n = args.episodes if args.episodes is not None else config.test_episodes
    session = run_test_session(agent, config.env, n, rng, config.load_arm())
    print(f"successes {session.successes}/{n}  mean return {session.mean_return:.3f}")
    return EXIT_OK


def cmd_aggregate(args) -> int:
    run_dir = Path(args.dir)
    if not run_dir.is_dir():
        raise UsageError(f"not a directory: {run_dir}")
    paths = sorted(run_dir.glob("run_seed*.jsonl"))
    if not paths:
        log.warning("no run_seed*.jsonl files in %s", run_dir)
    try:
        records = [read_record(p) for p in paths]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    curve = aggregate_runs(records)
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    target = out / "curve.csv"
    emit_curve(curve, target)
    print(f"{len(records)} runs, {len(curve)} sessions -> {target}")
    return EXIT_OK


def cmd_map(args) -> int:
    config = _config(args.config)
    agent = _checkpoint(args.checkpoint, config)
    lo, hi = args.slice
    if not lo < hi:
        raise UsageError(f"--slice needs lo < hi, got {lo} {hi}")
    if args.cell <= 0 or args.samples < 1:
        raise UsageError("--cell must be positive and --samples at least 1")
    grid = success_region_map(
        agent, config.load_arm(), config.env, args.samples, args.cell, (lo, hi), np.random.default_rng(args.seed)
    )
    out = Path(args.out) if args.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    target = out / "success_map.csv"
    write_grid(grid, target)
    print(f"{grid.attempts} of {args.samples} goals in slice [{lo}, {hi}], "
          f"{grid.successes} reached, {len(grid.cells)} cells -> {target}")
    return EXIT_OK


def _describe(region) -> str:
    if isinstance(region, Unconstrained):
        return "unconstrained (any reachable point)"
    if isinstance(region, ZHeight):
        return f"z-height: 0 <= z <= {region.z_max}"
    if isinstance(region, Box):
        axes = zip("xyz", region.lo, region.hi)
        return "box: " + ", ".join(f"{a} in [{lo}, {hi}]" for a, lo, hi in axes)
    return repr(region)


def cmd_region_report(args) -> int:
    config = _config(args.config)
    env = ReacherEnv(config.load_arm(), config.env)
    cfg = config.env
    rate = acceptance_rate(env.model, cfg.region, np.random.default_rng(args.seed), env.start, cfg.floor, args.samples)
    print(f"region         {_describe(cfg.region)}")
    print(f"active joints  {cfg.n_active} of {env.model.n_joints}")
    print(f"start pose     {np.array2string(env.start, precision=4)}")
    print(f"floor          {'none' if cfg.floor is None else cfg.floor}")
    print(f"acceptance     {rate:.4f} ({args.samples} candidates)")
    if rate == 0.0:
        print("warning: no candidate landed in the region; goal sampling will fail")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reacherbench", description="Goal-reaching DDPG benchmark on a UR5 arm model.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one seed (or every configured seed)")
    t.add_argument("config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory (default runs/<name>)")
    t.add_argument("--fresh", action="store_true", help="ignore an existing checkpoint instead of resuming")
    t.set_defaults(func=cmd_train)

    t = sub.add_parser("test", help="run one deterministic test session from a checkpoint")
    t.add_argument("checkpoint")
    t.add_argument("config")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--episodes", type=int)
    t.set_defaults(func=cmd_test)

    t = sub.add_parser("aggregate", help="combine run records in a directory into curve.csv")
    t.add_argument("dir")
    t.add_argument("--out")
    t.set_defaults(func=cmd_aggregate)

    t = sub.add_parser("map", help="success map of a policy over a z slice")
    t.add_argument("checkpoint")
    t.add_argument("config")
    t.add_argument("--samples", type=int, default=10_000)
    t.add_argument("--slice", type=float, nargs=2, default=(0.7, 0.8), metavar=("Z_LO", "Z_HI"))
    t.add_argument("--cell", type=float, default=0.1)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out")
    t.set_defaults(func=cmd_map)

    t = sub.add_parser("region-report", help="print region bounds and a sampling acceptance estimate")
    t.add_argument("config")
    t.add_argument("--samples", type=int, default=20_000)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_region_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"reacherbench {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InfeasibleRegionError, ConfigError, OSError, FloatingPointError, RuntimeError, ValueError) as exc:
        print(f"reacherbench {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
