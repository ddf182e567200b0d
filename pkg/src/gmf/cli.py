"""Command-line entry point: ``gmf run``, ``gmf selftest`` and ``gmf info``."""

from __future__ import annotations

import argparse
import json
import sys

from .experiments import ConfigError, ExperimentConfig, ot_selftest, run_and_write
from .graphon import GRAPHONS
from .model import PRESETS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_SELFTEST = 4


def _cmd_run(args) -> int:
    try:
        cfg = ExperimentConfig.load(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    result, out = run_and_write(cfg, workers=args.workers, out_dir=args.out)
    for row in result.rows:
        if row.replication == "all":
            se = "" if row.std_error == "" else f" +- {row.std_error:.3g}"
            print(f"N={row.N or '-'} k={row.k or '-'} {row.metric} = {row.value:.6g}{se}")
    print(f"wrote {out / 'result.csv'}")
    if result.all_diverged:
        print("every cell diverged", file=sys.stderr)
        return EXIT_DIVERGED
    if cfg.experiment == "ot_selftest" and result.find("failures") and result.value("failures") > 0:
        return EXIT_SELFTEST
    return EXIT_OK


def _cmd_selftest(args) -> int:
    stats = ot_selftest(args.instances, args.pairs, args.seed)
    for key, value in stats.items():
        print(f"{key}: {value:g}")
    ok = stats["failures"] == 0
    print("selftest " + ("passed" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_SELFTEST


def _cmd_info(args) -> int:
    name = args.preset
    if name is None:
        print("model presets: " + ", ".join(sorted(PRESETS)))
        print("graphons: " + ", ".join(sorted(GRAPHONS)))
        return EXIT_OK
    if name in PRESETS:
        _, description, defaults = PRESETS[name]
        print(f"{name}: {description}")
        print("default params: " + json.dumps(defaults, sort_keys=True))
        return EXIT_OK
    if name in GRAPHONS:
        print(f"graphon {name}")
        return EXIT_OK
    print(f"unknown preset {name!r}; choose from {sorted(PRESETS) + sorted(GRAPHONS)}", file=sys.stderr)
    return EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmf", description="Graphon mean-field particle experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("config")
    run.add_argument("--workers", type=int, default=1, help="thread pool size for sweep cells")
    run.add_argument("--out", default=None, help="override out_dir from the config")
    run.set_defaults(func=_cmd_run)

    selftest = sub.add_parser("selftest", help="optimal transport oracle and metric-axiom checks")
    selftest.add_argument("--instances", type=int, default=200)
    selftest.add_argument("--pairs", type=int, default=100)
    selftest.add_argument("--seed", type=int, default=0)
    selftest.set_defaults(func=_cmd_selftest)

    info = sub.add_parser("info", help="describe a model preset or graphon")
    info.add_argument("preset", nargs="?")
    info.set_defaults(func=_cmd_info)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
