"""Small shapes, configs and tables shared by the test modules."""

import json
from pathlib import Path
from typing import List

from config.run_config import RunConfig, run_config_from_dict
from models.budgets import HeadBudgetTable
from models.frames import ModelShape

SMALL_SHAPE = {
    "num_layers": 2,
    "heads_per_layer": 2,
    "head_dim": 4,
    "tokens_per_frame": 4,
    "chunk_frames": 2,
    "dense_window": 6,
}


def small_config_dict(**overrides) -> dict:
    raw = {
        "shape": dict(SMALL_SHAPE),
        "lambda": 0.5,
        "groups": 2,
        "b_min": 1,
        "b_max": 3,
        "gamma": 2.0,
        "seed": 7,
        "score_model": {"kind": "reference", "window_length": 2, "num_windows": 2},
    }
    raw.update(overrides)
    return raw


def small_config(**overrides) -> RunConfig:
    return run_config_from_dict(small_config_dict(**overrides))


def small_shape() -> ModelShape:
    return ModelShape.from_dict(SMALL_SHAPE)


def write_config(directory: str, **overrides) -> Path:
    path = Path(directory) / "run.json"
    path.write_text(json.dumps(small_config_dict(**overrides)), encoding="utf-8")
    return path


def _row(total: int, heads: int) -> List[int]:
    base, extra = divmod(total, heads)
    return [base + 1 if h < extra else base for h in range(heads)]


def reference_layer_sums() -> List[int]:
    """30 layer sums totalling 1958 with minimum 61 and maximum 72."""
    return [61, 72] + [66] * 5 + [65] * 23


def reference_budget_table() -> HeadBudgetTable:
    return HeadBudgetTable.fixed([_row(s, 12) for s in reference_layer_sums()])
