"""
Flags and helpers shared by every command.
"""

import argparse
import json
from pathlib import Path
from typing import List, Optional

from config.run_config import RunConfig, load_run_config
from event_logger import log_event
from models.budgets import HeadBudgetTable
from models.errors import SchemaValidationError
from models.frames import ModelShape
from runtime import freeze_budget_table


def add_common_args(parser: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        parser.add_argument("--config", help="RunConfig JSON (default: $FOCUSED_KV_CONFIG)")
    parser.add_argument("--seed", type=int, default=None, help="override the configured seed")


def load_config(args: argparse.Namespace) -> RunConfig:
    return load_run_config(args.config, seed=args.seed)


def load_frozen_budgets(path: str) -> HeadBudgetTable:
    """Load a budget table and freeze it for the rest of the run."""
    table = HeadBudgetTable.load(path)
    freeze_budget_table(table)
    log_event("budgets_frozen", path=str(path), layers=table.num_layers, heads=table.heads, total=table.total())
    print(f"✓ Budget table frozen: {table.num_layers}x{table.heads}, total {table.total()}")
    return table


def load_shape(path: Optional[str]) -> Optional[ModelShape]:
    """ModelShape from a JSON file holding either the shape or a full RunConfig."""
    if path is None:
        return None
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaValidationError(f"{path}: not valid JSON ({exc})") from exc
    if isinstance(raw, dict) and "shape" in raw:
        raw = raw["shape"]
    return ModelShape.from_dict(raw)


def print_lines(lines: List[str]) -> None:
    for line in lines:
        print(line)
