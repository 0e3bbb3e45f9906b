"""
synrdp command line
===================
    python synrdp_cli.py <subcommand> <config.json> [--seed N] [--out-dir DIR]
                         [--format csv|json] [--jobs N] [-v | -q]

Exit status: 0 when every assertion passed, 1 when any failed, 2 for config
or validation errors.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
from services.experiment_runner import COMMANDS, ExperimentConfig, ExperimentRunner
from utils.config_loader import ConfigError
from utils.prob_core import SupportError, ValidationError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synrdp",
        description="Synonymous rate-distortion-perception toolkit",
    )
    parser.add_argument("command", choices=sorted(COMMANDS), help="what to compute")
    parser.add_argument("config", nargs="?", help="experiment JSON file")
    parser.add_argument("--config", dest="config_flag", metavar="PATH", help="experiment JSON file")
    parser.add_argument("--seed", type=int, help="override solver and codec seeds")
    parser.add_argument("--out-dir", help="override output.dir")
    parser.add_argument("--format", choices=("csv", "json"), default="csv", help="sweep artifact format")
    parser.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)

    path = args.config_flag or args.config
    if not path:
        print("error: a config file is required", file=sys.stderr)
        return EXIT_CONFIG
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG

    try:
        cfg = ExperimentConfig.load(path).with_overrides(seed=args.seed, out_dir=args.out_dir)
    except ConfigError as e:
        print(f"config error at {e.field_path or '<root>'}: {e}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        result = ExperimentRunner.run(args.command, cfg, fmt=args.format, jobs=args.jobs)
    except (ValidationError, SupportError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    failed = [a for a in result.assertions if not a["passed"]]
    for a in failed:
        print(f"FAILED {a['name']}: residual {a['residual']:.3e} (tolerance {a['tolerance']:g})", file=sys.stderr)
    return EXIT_ASSERTION if failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
