"""
ablate: budget-range, lambda and allocation sweeps.

    ablate --kind budget --config run.json --budgets budgets.json --out sweep.csv [--b-min 2 4 6]
    ablate --kind lambda --config run.json --budgets budgets.json --out sweep.csv [--lambdas 0 0.5 1]
    ablate --kind allocation --config run.json --budgets budgets.json --out sweep.csv [--shuffle-seed 3]
"""

import argparse

from commands.common import add_common_args, load_config, print_lines
from config.settings import ABLATION_LAMBDA_GRID
from models.budgets import HeadBudgetTable
from services.ablation import SWEEP_COLUMNS, allocation_sweep, budget_sweep, format_sweep, lambda_sweep
from services.reports import write_csv

NAME = "ablate"


def setup(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="sweep budget ranges, the attention weight or the budget allocation")
    add_common_args(parser)
    parser.add_argument("--kind", choices=("budget", "lambda", "allocation"), required=True)
    parser.add_argument("--budgets", required=True, help="budget table JSON")
    parser.add_argument("--chunks", type=int, default=3)
    parser.add_argument("--b-min", type=int, nargs="+", default=None, help="b_min values (budget sweep)")
    parser.add_argument("--lambdas", type=float, nargs="+", default=list(ABLATION_LAMBDA_GRID))
    parser.add_argument(
        "--shuffle-seed", type=int, default=None, help="seed of random_budget (allocation sweep; default: config seed)"
    )
    parser.add_argument("--out", required=True, help="sweep CSV to write")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    config = load_config(args)
    table = HeadBudgetTable.load(args.budgets)
    if args.kind == "budget":
        b_mins = args.b_min or [table.b_min]
        points = budget_sweep(config, table, args.chunks, b_mins=b_mins)
    elif args.kind == "lambda":
        points = lambda_sweep(config, table, args.chunks, grid=args.lambdas)
    else:
        points = allocation_sweep(config, table, args.chunks, seed=args.shuffle_seed)
    print_lines(format_sweep(points))
    path = write_csv(args.out, SWEEP_COLUMNS, [p.to_csv_row() for p in points])
    print(f"💾 Sweep written to {path}")
    return 0
