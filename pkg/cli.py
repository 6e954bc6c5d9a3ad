"""
Command-line front end.

dispatch(argv) parses the arguments, runs the command and maps every error
category to its exit code:

    0 success            3 configuration     5 schema validation
    1 verification fail  4 I/O               6 shape / integrity
    2 usage (argparse)
"""

import argparse
from typing import Optional, Sequence

from commands import COMMAND_MODULES
from event_logger import log_event
from models.errors import ConfigurationError, IntegrityError, SchemaValidationError, ShapeError

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_SCHEMA = 5
EXIT_INTEGRITY = 6


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="focused-kv",
        description="Training-free KV-cache compression engine for chunked autoregressive generation.",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.required = True
    for module in COMMAND_MODULES:
        module.setup(subparsers)
    return parser


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    try:
        return args.handler(args)
    except SchemaValidationError as exc:
        return _fail(args.command, "schema", exc, EXIT_SCHEMA)
    except ConfigurationError as exc:
        return _fail(args.command, "configuration", exc, EXIT_CONFIG)
    except (ShapeError, IntegrityError) as exc:
        return _fail(args.command, "integrity", exc, EXIT_INTEGRITY)
    except OSError as exc:
        return _fail(args.command, "I/O", exc, EXIT_IO)


def _fail(command: str, category: str, exc: Exception, code: int) -> int:
    print(f"✗ {category} error: {exc}")
    log_event("command_failed", command=command, category=category, error=str(exc), exit_code=code)
    return code
