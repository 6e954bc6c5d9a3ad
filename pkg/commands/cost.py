"""
cost: analytical frame-level cost and packing memory of a budget table.

    cost --budgets budgets.json [--shape shape.json] [--out report.json]
"""

import argparse
import json

from commands.common import add_common_args, load_shape, print_lines
from config.settings import BYTES_PER_ELEMENT
from models.budgets import HeadBudgetTable
from models.frames import ModelShape
from services.cost_model import cost_report, format_cost_table
from services.reports import write_json

NAME = "cost"


def setup(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="print the frame-level cost report of a budget table")
    add_common_args(parser, config=False)
    parser.add_argument("--budgets", required=True, help="budget table JSON")
    parser.add_argument("--shape", default=None, help="shape JSON (default: the 30x12 reference stack)")
    parser.add_argument("--bytes-per-element", type=int, default=BYTES_PER_ELEMENT)
    parser.add_argument("--out", default=None, help="also write the report JSON here")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    table = HeadBudgetTable.load(args.budgets)
    shape = load_shape(args.shape) or ModelShape.reference()
    report = cost_report(table, shape, args.bytes_per_element)
    data = report.to_dict()
    print(json.dumps(data, indent=2))
    print_lines(format_cost_table(report))
    if args.out:
        path = write_json(args.out, data)
        print(f"💾 Cost report written to {path}")
    return 0
