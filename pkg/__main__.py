"""
Entry point for CaviLab.
Command-line interface to run CAVI experiments, bound generalized correlations, sweep
parameter grids and check the closed forms against brute-force oracles.

Exit codes: 0 converged (or check passed), 1 usage, configuration or I/O error,
2 diverged (or oracle mismatch), 3 inconclusive.
"""

import argparse
import logging
import sys
from typing import List, Optional

from CaviLab.config import Config
from CaviLab.core.exceptions import CaviLabError
from CaviLab.core.logging import auto_configure, get_logger, get_logging_manager
from CaviLab.harness import (
    ExitCode,
    cmd_gcorr,
    cmd_oracle_check,
    cmd_run,
    cmd_sweep,
    load_config,
    load_oracle_options,
)

logger = get_logger(__name__)


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1; 2 means a diverged run."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(int(ExitCode.ERROR), f"{self.prog}: error: {message}\n")


def parse(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command line arguments."""
    parser = _Parser(
        prog='CaviLab',
        description='CaviLab - contraction analysis of coordinate-ascent variational inference'
    )

    # Global options
    parser.add_argument(
        '--env', '-e',
        choices=['development', 'production', 'testing', 'dev', 'prod', 'test'],
        default=None,
        help='Environment configuration (default: CAVI_LAB_ENV or development)'
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('--verbose', '-v', action='store_true', help='Enable debug logging')
    verbosity.add_argument('--quiet', '-q', action='store_true', help='Only log warnings and errors')

    subparsers = parser.add_subparsers(dest='command', required=True, help='Available commands')

    for name, help_text in (
        ('run', 'Run one experiment; writes the trajectory CSV and the report JSON'),
        ('gcorr', 'Print analytic and empirical generalized-correlation bounds as JSON'),
        ('sweep', 'Run an experiment over a parameter grid; writes one CSV row per point'),
    ):
        command = subparsers.add_parser(name, help=help_text)
        command.add_argument('--config', '-c', required=True, help='Experiment JSON file')
        command.add_argument('--out', '-o', default=None, help='Output directory (overrides output.dir)')
        command.add_argument('--seed', type=_seed, default=None, help='Seed override')
        command.add_argument(
            '--quiet', '-q', action='store_true', default=argparse.SUPPRESS, help='Only log warnings and errors'
        )

    oracle = subparsers.add_parser('oracle-check', help='Compare closed forms with brute-force oracles')
    oracle.add_argument('--config', '-c', default=None, help='Optional JSON file with an "oracle" object')
    oracle.add_argument('--seed', type=_seed, default=None, help='Seed of the random corpus')
    oracle.add_argument(
        '--quiet', '-q', action='store_true', default=argparse.SUPPRESS, help='Only log warnings and errors'
    )

    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the exit code."""
    args = parse(argv)

    # Initialize logging system
    try:
        auto_configure(env=args.env)
        if args.quiet:
            get_logging_manager().set_level(logging.WARNING)
        elif args.verbose:
            get_logging_manager().set_level(logging.DEBUG)
        logger.debug("Command: %s", args.command)
        logger.debug("Defaults: %s", Config.get_config())
    except Exception as e:
        print(f"Failed to initialize logging: {e}", file=sys.stderr)
        return int(ExitCode.ERROR)

    try:
        if args.command == 'oracle-check':
            options, seed = load_oracle_options(args.config, args.seed)
            return cmd_oracle_check(options, seed)
        config = load_config(args.config, seed_override=args.seed, output_dir=args.out)
        if args.command == 'run':
            return cmd_run(config)
        if args.command == 'gcorr':
            return cmd_gcorr(config)
        if args.command == 'sweep':
            return cmd_sweep(config)
        raise ValueError(f'Unknown command: {args.command}')
    except CaviLabError as e:
        logger.error("%s", e)
        return int(ExitCode.ERROR)
    except OSError as e:
        logger.error("I/O error: %s", e)
        return int(ExitCode.ERROR)
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return int(ExitCode.ERROR)


if __name__ == '__main__':
    sys.exit(main())
