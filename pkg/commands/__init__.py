"""
Commands module for the focused KV-cache compression engine.

Each command module exposes NAME, setup(subparsers) and run(args).
"""

from commands import ablate, cost, estimate_heads, report, rollout, rope_probe, verify

COMMAND_MODULES = (estimate_heads, rollout, verify, cost, rope_probe, report, ablate)

__all__ = [
    "COMMAND_MODULES",
]
