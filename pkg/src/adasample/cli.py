"""Command line entry point: ``adasample run|tune|verify``."""

from __future__ import annotations

import argparse
import secrets
import sys

from .checks import SUITES, verify
from .data import LibSVMFormatError
from .experiment import (OUT_ENV, ConfigError, ExperimentError, build_problem, default_output,
                         final_table, load_config, run_experiment, tune_learning_rate)
from .problems import ConvergenceError


def _parser():
    p = argparse.ArgumentParser(prog="adasample", description="Sampling experiments for variance-reduced SGD.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run every arm and repeat of a config")
    r.add_argument("config")
    r.add_argument("--out", help=f"output directory (default: config, then ${OUT_ENV}, then ./results)")
    r.add_argument("--threads", type=int, default=1)

    t = sub.add_parser("tune", help="grid-search the step size of each arm")
    t.add_argument("config")
    t.add_argument("--grid", help="comma list or lo:hi:count; overrides tune.grid")
    t.add_argument("--threads", type=int, default=1)

    v = sub.add_parser("verify", help="randomised property checks")
    v.add_argument("suite", nargs="?", default="all", help=f"one of {', '.join(SUITES)} or all")
    v.add_argument("--seed", type=int, help="seed to replay (default: fresh)")
    return p


def _cmd_run(args):
    cfg = load_config(args.config)
    out = default_output(cfg, args.out)
    summary = run_experiment(cfg, out, threads=max(1, args.threads))
    print(f"wrote {out}/summary.csv and {sum(cfg.repeats for _ in cfg.arms)} traces")
    print(f"{'arm':<24} {'final mean':>14} {'final sd':>14}")
    for name, mean, sd in final_table(summary):
        print(f"{name:<24} {mean:>14.6e} {sd:>14.6e}")
    return 0


def _cmd_tune(args):
    cfg = load_config(args.config)
    grid = cfg.tune_grid
    if args.grid:
        from .experiment import _tune_grid, parse_config_text
        grid = _tune_grid(parse_config_text(f"tune.grid = {args.grid}")["tune.grid"])
    problem = build_problem(cfg.problem)
    arms = cfg.tune_arms or list(cfg.arms)
    for arm in arms:
        best, scores = tune_learning_rate(cfg, grid, arm=arm, threads=max(1, args.threads),
                                          problem=problem)
        print(f"{arm}: best eta = {best!r}")
        for eta, s in scores.items():
            print(f"  eta={eta!r} mean final loss={s!r}")
    return 0


def _cmd_verify(args):
    if args.suite != "all" and args.suite not in SUITES:
        print(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)} or all", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else secrets.randbits(32)
    print(f"seed {seed}")
    failed = 0
    for name, ok, msg in verify(args.suite, seed):
        print(f"{'PASS' if ok else 'FAIL'} {name}: {msg}")
        failed += not ok
    if failed:
        print(f"{failed} suite(s) failed; replay with --seed {seed}", file=sys.stderr)
    return 1 if failed else 0


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "tune":
            return _cmd_tune(args)
        return _cmd_verify(args)
    except (ConfigError, LibSVMFormatError, ExperimentError, ConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
