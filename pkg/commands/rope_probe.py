"""
rope-probe: temporal logit over relative distance for a random (q, k).

With several temporal frequencies the curve shows how blocks can cancel at
some distances while the logit stays non-constant over a full period.
"""

import argparse
from typing import List, Optional

import torch

from commands.common import add_common_args, load_config, print_lines
from config.settings import DEFAULT_ROPE_BASE, DEFAULT_SEED
from models.errors import ConfigurationError
from services.reports import write_rope_probe
from services.rope_temporal import (
    RopeSpec,
    active_blocks,
    default_rope_spec,
    logit_profile,
    longest_period,
    rope_spec_from_settings,
)

NAME = "rope-probe"


def setup(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="emit the temporal logit profile as CSV")
    add_common_args(parser)
    parser.add_argument("--out", required=True, help="CSV of (delta_t, logit)")
    parser.add_argument("--head-dim", type=int, default=8)
    parser.add_argument("--blocks", type=int, nargs="+", default=None, help="temporal blocks (1-based)")
    parser.add_argument("--frequencies", type=float, nargs="+", default=None, help="one per temporal block")
    parser.add_argument("--base", type=float, default=DEFAULT_ROPE_BASE)
    parser.add_argument("--periods", type=int, default=1, help="periods of the slowest frequency to cover")
    parser.add_argument("--max-delta", type=int, default=None, help="cap on |delta_t|")
    parser.set_defaults(handler=run)


def resolve_spec(args: argparse.Namespace) -> RopeSpec:
    if args.config:
        config = load_config(args)
        return rope_spec_from_settings(config.shape.head_dim, config.rope)
    return default_rope_spec(args.head_dim, temporal_blocks=args.blocks, base=args.base, frequencies=args.frequencies)


def probe_range(spec: RopeSpec, periods: int, max_delta: Optional[int]) -> List[int]:
    if periods < 1:
        raise ConfigurationError(f"periods must be >= 1, got {periods}")
    span = periods * longest_period(spec)
    if max_delta is not None:
        span = min(span, max_delta)
    return list(range(-span, span + 1))


def run(args: argparse.Namespace) -> int:
    spec = resolve_spec(args)
    seed = DEFAULT_SEED if args.seed is None else args.seed
    generator = torch.Generator().manual_seed(seed)
    q = torch.randn(spec.head_dim, generator=generator, dtype=torch.float64)
    k = torch.randn(spec.head_dim, generator=generator, dtype=torch.float64)

    profile = logit_profile(q, k, spec, probe_range(spec, args.periods, args.max_delta))
    path = write_rope_probe(args.out, profile)
    values = [logit for _, logit in profile]
    print_lines([
        f"📊 {len(spec.temporal_blocks)} temporal block(s), active {len(active_blocks(q, k, spec))}",
        f"   delta_t in [{profile[0][0]}, {profile[-1][0]}], logit min={min(values):.6f} max={max(values):.6f}",
        f"💾 Probe written to {path}",
    ])
    return 0
