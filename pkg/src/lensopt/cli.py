"""Command-line surface: ``lensopt {solve,adjoint,gradient,verify,optimize}``.

Every subcommand takes ``--config`` and optionally ``--output`` and
``--threads``; everything else comes from the configuration file so the
manifest alone reproduces a run. A one-line JSON summary goes to stdout,
failures go to stderr as a JSON error record.
"""

import argparse
import json
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any, cast

import structlog

from .config import get_settings
from .errors import LensOptError
from .runconfig import parse_config
from .service import COMMANDS, Command, LensOptService

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CHECKS_FAILED = 3


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lensopt",
        description="Shape optimisation of an acoustic lens under Westervelt dynamics.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "solve the state problem and export the pressure field",
        "adjoint": "solve the state and adjoint problems",
        "gradient": "evaluate shape derivatives and the finite-difference oracle",
        "verify": "run the oracle and invariant suite",
        "optimize": "run steepest descent on the lens shape",
    }
    for name in COMMANDS:
        sub = commands.add_parser(name, help=helps[name])
        sub.add_argument("--config", type=Path, required=True, help="run configuration (TOML)")
        sub.add_argument("--output", type=Path, default=None, help="output directory")
        sub.add_argument(
            "--threads",
            type=_positive_int,
            default=None,
            help="worker threads for independent perturbed solves",
        )
    return parser


def _emit_error(record: dict[str, Any]) -> None:
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand and return the process exit status."""
    args = build_parser().parse_args(argv)
    command = cast(Command, args.command)
    try:
        config = parse_config(args.config)
        service = LensOptService(config, get_settings(), threads=args.threads)
        result = service.run(command, output=args.output)
    except LensOptError as exc:
        _emit_error(exc.to_record())
        return EXIT_ERROR
    except OSError as exc:
        _emit_error(
            {
                "error": type(exc).__name__,
                "component": "cli",
                "message": str(exc),
                "context": {"path": str(getattr(exc, "filename", "") or "")},
            }
        )
        return EXIT_ERROR

    print(
        json.dumps(
            {
                "command": result.command,
                "output": str(result.directory),
                "passed": result.passed,
                "artifacts": result.artifacts,
            },
            sort_keys=True,
        )
    )
    return EXIT_OK if result.passed else EXIT_CHECKS_FAILED


def entry_point() -> None:
    """Console script entry point."""
    sys.exit(main())
