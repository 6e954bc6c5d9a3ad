"""
report: summaries of artifacts written by other commands.

    report --hist budgets.json [--bins 20] [--out hist.csv]
    report --masks masks.json [--trace trace.csv]
"""

import argparse
import csv
from pathlib import Path
from typing import Dict, List, Tuple

from commands.common import add_common_args, print_lines
from config.settings import DEFAULT_HIST_BINS
from models.budgets import HeadBudgetTable
from models.errors import ConfigurationError, IntegrityError, SchemaValidationError
from models.scores import masks_from_records
from services.cost_model import mask_frame_cost
from services.head_importance import importance_histogram
from services.reports import format_histogram, load_mask_records, write_histogram

NAME = "report"


def setup(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="histogram of head importance, or mask frame-cost check")
    add_common_args(parser, config=False)
    parser.add_argument("--hist", default=None, help="budget table JSON whose importance to histogram")
    parser.add_argument("--bins", type=int, default=DEFAULT_HIST_BINS)
    parser.add_argument("--out", default=None, help="histogram CSV to write")
    parser.add_argument("--masks", default=None, help="mask dump from rollout --dump-masks")
    parser.add_argument("--trace", default=None, help="trace CSV to check the mask frame cost against")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    if not args.hist and not args.masks:
        raise ConfigurationError("report needs --hist or --masks")
    if args.hist:
        _histogram(args)
    if args.masks:
        _mask_costs(args)
    return 0


def _histogram(args: argparse.Namespace) -> None:
    table = HeadBudgetTable.load(args.hist)
    if table.importance is None:
        raise SchemaValidationError(f"{args.hist}: budget table carries no importance scores")
    histogram = importance_histogram(table.importance, args.bins)
    print_lines(format_histogram(histogram))
    if args.out:
        path = write_histogram(args.out, histogram)
        print(f"💾 Histogram written to {path}")


ChunkKey = Tuple[str, int]


def _chunk_costs(records: List[dict]) -> Dict[ChunkKey, int]:
    by_chunk: Dict[ChunkKey, List[dict]] = {}
    for record in records:
        if not isinstance(record, dict):
            raise SchemaValidationError("mask record must be a JSON object")
        key = (str(record.get("policy", "")), int(record.get("chunk", 0)))
        by_chunk.setdefault(key, []).append(record)
    return {key: mask_frame_cost(masks_from_records(rows)) for key, rows in sorted(by_chunk.items())}


def _trace_costs(path: str) -> Dict[ChunkKey, int]:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        try:
            return {(row["policy"], int(row["chunk"])): int(row["frame_cost"]) for row in csv.DictReader(fh)}
        except (KeyError, ValueError) as exc:
            raise SchemaValidationError(f"{path}: not a rollout trace ({exc})") from exc


def _mask_costs(args: argparse.Namespace) -> None:
    costs = _chunk_costs(load_mask_records(args.masks))
    print("📊 Frame cost recomputed from masks")
    for (policy, chunk), cost in costs.items():
        print(f"   {policy} chunk {chunk}: {cost}")
    if args.trace:
        traced = _trace_costs(args.trace)
        mismatched = [key for key in costs if traced.get(key) != costs[key]]
        extra = sorted(set(traced) - set(costs))
        if mismatched or extra:
            raise IntegrityError(f"trace frame cost differs from the masks on (policy, chunk) {mismatched + extra}")
        print("✓ Trace frame cost matches the masks")
