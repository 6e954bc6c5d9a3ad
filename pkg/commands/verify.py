"""
verify: randomized equivalence, RoPE, standardization and budget suites.
"""

import argparse

from commands.common import add_common_args
from config.settings import DEFAULT_SEED, DEFAULT_VERIFY_INSTANCES
from services.reports import format_suite
from services.verification import SUITES, run_verification

NAME = "verify"


def setup(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="run the verification suites")
    add_common_args(parser, config=False)
    parser.add_argument("--instances", type=int, default=DEFAULT_VERIFY_INSTANCES)
    parser.add_argument("--suite", nargs="+", choices=tuple(SUITES), default=None, help="subset of suites")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    seed = DEFAULT_SEED if args.seed is None else args.seed
    results = run_verification(seed, max(1, args.instances), suites=args.suite)
    for result in results:
        print(format_suite(result))
        if result.name == "equivalence":
            print(f"📊 max relative error: {result.worst_error:.3e} (≤ {result.tolerance:.0e})")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"✗ Verification failed: {', '.join(failed)}")
        return 1
    print(f"✓ All {len(results)} suites passed")
    return 0
