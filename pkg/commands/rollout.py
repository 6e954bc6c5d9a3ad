"""
rollout: run the synthetic chunked rollout under one policy.

    rollout --config run.json --policy focused --budgets budgets.json --chunks N
            --trace out.csv [--dump-masks masks.json] [--compare dense_window ...]
"""

import argparse

from commands.common import add_common_args, load_config, load_frozen_budgets, print_lines
from services.cache_policies import POLICY_VARIANTS, make_policy
from services.reports import format_comparison, format_rollout_summary, write_masks, write_trace
from services.rollout_sim import compare_policies, dense_trajectory, run_rollout
from services.synthetic_model import SyntheticAttentionModel

NAME = "rollout"


def setup(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="run the chunked rollout simulator")
    add_common_args(parser)
    parser.add_argument("--policy", choices=POLICY_VARIANTS, default="focused")
    parser.add_argument("--budgets", default=None, help="budget table JSON (budgeted policies)")
    parser.add_argument("--chunks", type=int, default=3)
    parser.add_argument("--trace", required=True, help="trace CSV to write")
    parser.add_argument("--dump-masks", default=None, help="selection masks JSON to write")
    parser.add_argument(
        "--window", type=int, default=None, help="window for dense_window / attention_sink (also applied to --compare)"
    )
    parser.add_argument(
        "--lambda", dest="lam", type=float, default=None, help="override the configured lambda (also applied to --compare)"
    )
    parser.add_argument(
        "--compare", nargs="+", choices=POLICY_VARIANTS, default=None, help="also compare against these policies"
    )
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    config = load_config(args)
    if args.budgets:
        load_frozen_budgets(args.budgets)
    policy = make_policy(args.policy, window=args.window, lam=args.lam)
    model = SyntheticAttentionModel(config.shape, seed=config.seed)
    record_masks = args.dump_masks is not None

    if args.compare:
        others = [
            make_policy(variant, window=args.window, lam=args.lam)
            for variant in dict.fromkeys(args.compare)
            if variant != args.policy
        ]
        summaries = compare_policies(config, [policy, *others], args.chunks, model=model, record_masks=record_masks)
        print_lines(format_comparison(summaries))
        traces = [s.trace for s in summaries]
    else:
        baseline = dense_trajectory(config, args.chunks, model)
        _, trace = run_rollout(config, policy, args.chunks, model=model, baseline=baseline, record_masks=record_masks)
        print_lines(format_rollout_summary(trace))
        traces = [trace]

    path = write_trace(args.trace, traces)
    print(f"💾 Trace written to {path}")
    if record_masks:
        mask_path = write_masks(args.dump_masks, traces)
        print(f"💾 Masks written to {mask_path}")
    return 0
