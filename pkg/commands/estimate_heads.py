"""
estimate-heads: offline head importance and budget table.

    estimate-heads --config run.json --out budgets.json [--prompts a b ...]
"""

import argparse

from commands.common import add_common_args, load_config, print_lines
from services.head_importance import (
    estimate_importance,
    importance_histogram,
    map_budgets,
    normalize_importance,
)
from services.reports import format_budget_summary, histogram_marker_lines, write_histogram

NAME = "estimate-heads"


def setup(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="estimate per-head importance and map it to KV budgets")
    add_common_args(parser)
    parser.add_argument("--out", required=True, help="budget table JSON to write")
    parser.add_argument("--prompts", nargs="+", default=["synthetic"], help="prompt identifiers")
    parser.add_argument("--chunks", type=int, default=None, help="rollout length per masked head")
    parser.add_argument("--workers", type=int, default=1, help="threads for the masked rollouts")
    parser.add_argument("--b-min", type=int, default=None)
    parser.add_argument("--b-max", type=int, default=None)
    parser.add_argument("--gamma", type=float, default=None)
    parser.add_argument("--hist", default=None, help="also write the importance histogram CSV")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    config = load_config(args)
    b_min = config.b_min if args.b_min is None else args.b_min
    b_max = config.b_max if args.b_max is None else args.b_max
    gamma = config.gamma if args.gamma is None else args.gamma

    shape = config.shape
    print(f"ℹ️ Masking {shape.num_layers * shape.heads_per_layer} heads over {len(args.prompts)} prompt(s)...")
    importance = estimate_importance(
        args.prompts, config, num_chunks=args.chunks, workers=max(1, args.workers)
    )
    normalized = normalize_importance(importance, config.epsilon)
    table = map_budgets(normalized, b_min, b_max, gamma, importance=importance)
    path = table.save(args.out)

    print_lines(format_budget_summary(table))
    if args.hist:
        histogram = importance_histogram(importance.scores)
        write_histogram(args.hist, histogram)
        print_lines(histogram_marker_lines(histogram))
    print(f"💾 Budget table written to {path}")
    return 0
