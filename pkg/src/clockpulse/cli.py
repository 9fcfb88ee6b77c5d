"""Command-line entry point.

Subcommands mirror the run algorithms (``grape``, ``homotopic``, ``bgrape``,
``composite``, ``estimate``, ``test``, ``sweep``) plus ``replicate``, which
runs the full bundled two-qubit CNOT study. Exit codes: 0 success, 2 config
error, 3 optimizer non-convergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .runner import (
    EXIT_CONFIG,
    EXIT_IO,
    study_config_path,
    replicate_study,
    run_experiment,
)

ALGORITHM_COMMANDS = ("grape", "homotopic", "bgrape", "composite", "estimate", "test", "sweep")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clockpulse",
        description="Synthesize and evaluate control pulses robust to clock noise.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ALGORITHM_COMMANDS:
        p = sub.add_parser(name, help=f"run the '{name}' algorithm from a config file")
        p.add_argument("--config", required=True, help="experiment config file (YAML)")
        p.add_argument("--out", required=True, help="output directory for artifacts")
        p.add_argument("--seed", type=int, default=None,
                       help="override the initial-guess and optimizer seeds")
    rep = sub.add_parser("replicate", help="run the full bundled CNOT study")
    rep.add_argument("--config", default=None,
                     help="config file (defaults to the shipped cnot_study.cfg)")
    rep.add_argument("--out", required=True, help="output directory for the bundle")
    rep.add_argument("--seed", type=int, default=None,
                     help="override the initial-guess seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replicate":
            cfg = load_config(args.config) if args.config else load_config(study_config_path())
            result = replicate_study(args.out, cfg=cfg, seed=args.seed)
        else:
            cfg = load_config(args.config)
            result = run_experiment(cfg, args.out, seed=args.seed, algorithm=args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    if result.message:
        print(f"{result.status}: {result.message}")
    else:
        print(result.status)
    if result.out_dir is not None:
        print(f"artifacts in {result.out_dir}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
