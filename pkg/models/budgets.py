"""
Head importance and KV-budget tables.

The budget table is produced offline by the head-importance harness and then
frozen for inference. It is stored as JSON:

{layers, heads, b_min, b_max, gamma, importance: [[...]], normalized: [[...]],
 budgets: [[...]], seeds, prompts}

importance and normalized may be null for hand-written fixed tables.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import torch

from models.errors import ConfigurationError, SchemaValidationError
from models.schema import expect_float, expect_int, expect_list, expect_str

BUDGET_TABLE_KEYS = ("layers", "heads", "b_min", "b_max", "gamma", "importance", "normalized", "budgets", "seeds", "prompts")


def round_half_away(value: float) -> int:
    """round() with ties going away from zero."""
    return int(math.copysign(math.floor(abs(value) + 0.5), value))


def budget_curve(normalized: float, b_min: int, b_max: int, gamma: float) -> int:
    """Map one normalized importance in [0, 1] to an integer budget."""
    return round_half_away(b_min + (normalized ** gamma) * (b_max - b_min))


def validate_budget_params(b_min: int, b_max: int, gamma: float) -> None:
    """
    Validate budget mapping parameters.

    Raises:
        ConfigurationError: on any out-of-range parameter
    """
    if b_min < 0:
        raise ConfigurationError(f"b_min must be >= 0, got {b_min}")
    if b_min > b_max:
        raise ConfigurationError(f"b_min ({b_min}) must be <= b_max ({b_max})")
    if not gamma > 0:
        raise ConfigurationError(f"gamma must be > 0, got {gamma}")


@dataclass(frozen=True, eq=False)
class ImportanceTable:
    """Mean DM loss per (layer, head); higher means masking the head hurts more."""

    scores: torch.Tensor
    prompts: Tuple[str, ...] = ()
    num_windows: int = 0
    seeds: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.scores.dim() != 2 or self.scores.numel() == 0:
            raise ConfigurationError(f"importance scores must be a non-empty [L, H] table, got {tuple(self.scores.shape)}")
        if not torch.isfinite(self.scores).all():
            raise ConfigurationError("importance scores must be finite")
        if (self.scores < 0).any():
            raise ConfigurationError("importance scores must be non-negative")

    @property
    def num_layers(self) -> int:
        return int(self.scores.shape[0])

    @property
    def heads(self) -> int:
        return int(self.scores.shape[1])


@dataclass(frozen=True, eq=False)
class HeadBudgetTable:
    """
    Integer KV budget per (layer, head): how many non-reserved historical
    frames each query frame of that head may retain.
    """

    budgets: torch.Tensor
    b_min: int
    b_max: int
    gamma: float
    normalized: Optional[torch.Tensor] = None
    importance: Optional[torch.Tensor] = None
    seeds: Tuple[int, ...] = ()
    prompts: Tuple[str, ...] = ()
    _rows: List[List[int]] = field(default_factory=list, init=False, repr=False)

    def __post_init__(self):
        validate_budget_params(self.b_min, self.b_max, self.gamma)
        if self.budgets.dim() != 2 or self.budgets.numel() == 0:
            raise ConfigurationError(f"budgets must be a non-empty [L, H] table, got {tuple(self.budgets.shape)}")
        if self.budgets.is_floating_point():
            raise ConfigurationError("budgets must be integers")
        rows = self.budgets.tolist()
        if any(b < self.b_min or b > self.b_max for row in rows for b in row):
            raise ConfigurationError(f"budgets must lie in [{self.b_min}, {self.b_max}]")
        if self.normalized is not None:
            if tuple(self.normalized.shape) != tuple(self.budgets.shape):
                raise ConfigurationError("normalized importance shape differs from budgets")
            expected = [
                [budget_curve(v, self.b_min, self.b_max, self.gamma) for v in row]
                for row in self.normalized.tolist()
            ]
            if expected != rows:
                raise ConfigurationError("budgets do not match the mapping of the normalized importance")
        self._rows.extend(rows)

    @property
    def num_layers(self) -> int:
        return int(self.budgets.shape[0])

    @property
    def heads(self) -> int:
        return int(self.budgets.shape[1])

    def budget(self, layer: int, head: int) -> int:
        if not 0 <= layer < self.num_layers:
            raise ConfigurationError(f"budget table has no layer {layer} (layers: {self.num_layers})")
        if not 0 <= head < self.heads:
            raise ConfigurationError(f"budget table has no head {head} (heads: {self.heads})")
        return self._rows[layer][head]

    def layer_sums(self) -> List[int]:
        return [sum(row) for row in self._rows]

    def total(self) -> int:
        return sum(self.layer_sums())

    def mean_budget(self) -> float:
        return self.total() / (self.num_layers * self.heads)

    @classmethod
    def fixed(cls, budgets: Union[Sequence[Sequence[int]], torch.Tensor]) -> "HeadBudgetTable":
        """A hand-written table; bounds are taken from its own extremes."""
        tensor = torch.as_tensor(budgets, dtype=torch.int64)
        return cls(
            budgets=tensor,
            b_min=int(tensor.min()),
            b_max=int(tensor.max()),
            gamma=1.0,
        )

    @classmethod
    def uniform(cls, num_layers: int, heads: int, budget: int) -> "HeadBudgetTable":
        return cls.fixed(torch.full((num_layers, heads), int(budget), dtype=torch.int64))

    def reversed(self) -> "HeadBudgetTable":
        """
        The same mapping applied to mirrored importance: the most important
        head gets what the least important one had under the curve.

        Raises:
            ConfigurationError: the table carries no normalized importance
        """
        if self.normalized is None:
            raise ConfigurationError("reverse allocation needs a budget table with normalized importance")
        return self._remapped(_mirror(self.normalized), None if self.importance is None else _mirror(self.importance))

    def shuffled(self, seed: int) -> "HeadBudgetTable":
        """Budgets (and importance) moved across heads by a seeded permutation."""
        generator = torch.Generator().manual_seed(int(seed))
        order = torch.randperm(self.budgets.numel(), generator=generator)

        def permute(grid: Optional[torch.Tensor]) -> Optional[torch.Tensor]:
            return None if grid is None else grid.reshape(-1)[order].reshape(grid.shape)

        if self.normalized is not None:
            return self._remapped(permute(self.normalized), permute(self.importance))
        return HeadBudgetTable(
            budgets=permute(self.budgets),
            b_min=self.b_min,
            b_max=self.b_max,
            gamma=self.gamma,
            seeds=self.seeds,
            prompts=self.prompts,
        )

    def _remapped(self, normalized: torch.Tensor, importance: Optional[torch.Tensor]) -> "HeadBudgetTable":
        budgets = torch.tensor(
            [[budget_curve(v, self.b_min, self.b_max, self.gamma) for v in row] for row in normalized.tolist()],
            dtype=torch.int64,
        )
        return HeadBudgetTable(
            budgets=budgets,
            b_min=self.b_min,
            b_max=self.b_max,
            gamma=self.gamma,
            normalized=normalized,
            importance=importance,
            seeds=self.seeds,
            prompts=self.prompts,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "layers": self.num_layers,
            "heads": self.heads,
            "b_min": self.b_min,
            "b_max": self.b_max,
            "gamma": self.gamma,
            "importance": None if self.importance is None else self.importance.tolist(),
            "normalized": None if self.normalized is None else self.normalized.tolist(),
            "budgets": [list(row) for row in self._rows],
            "seeds": list(self.seeds),
            "prompts": list(self.prompts),
        }

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "HeadBudgetTable":
        """
        Parse the budget-table JSON object.

        Raises:
            SchemaValidationError: unknown/missing keys or inconsistent sizes
        """
        if not isinstance(raw, dict):
            raise SchemaValidationError("budget table must be a JSON object")
        unknown = sorted(set(raw) - set(BUDGET_TABLE_KEYS))
        if unknown:
            raise SchemaValidationError(f"unknown budget table keys: {', '.join(unknown)}")
        if "budgets" not in raw:
            raise SchemaValidationError("budget table is missing 'budgets'")
        budgets = _int_grid(raw["budgets"], "budgets")
        layers = expect_int(raw.get("layers", len(budgets)), "layers")
        heads = expect_int(raw.get("heads", len(budgets[0])), "heads")
        if len(budgets) != layers or any(len(row) != heads for row in budgets):
            raise SchemaValidationError(f"budgets must be a {layers}x{heads} grid")
        b_min = expect_int(raw.get("b_min", min(min(row) for row in budgets)), "b_min")
        b_max = expect_int(raw.get("b_max", max(max(row) for row in budgets)), "b_max")
        gamma = expect_float(raw.get("gamma", 1.0), "gamma")
        normalized = _float_grid(raw.get("normalized"), "normalized", layers, heads)
        importance = _float_grid(raw.get("importance"), "importance", layers, heads)
        seeds = expect_list(raw.get("seeds") or [], expect_int, "seeds")
        prompts = expect_list(raw.get("prompts") or [], expect_str, "prompts")
        try:
            return cls(
                budgets=torch.tensor(budgets, dtype=torch.int64),
                b_min=b_min,
                b_max=b_max,
                gamma=gamma,
                normalized=normalized,
                importance=importance,
                seeds=tuple(seeds),
                prompts=tuple(prompts),
            )
        except ConfigurationError as exc:
            raise SchemaValidationError(f"invalid budget table: {exc}") from exc

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "HeadBudgetTable":
        text = Path(path).read_text(encoding="utf-8")
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaValidationError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(raw)


def _int_grid(value: Any, name: str) -> List[List[int]]:
    if not isinstance(value, list) or not value or not all(isinstance(row, list) and row for row in value):
        raise SchemaValidationError(f"{name} must be a non-empty list of non-empty lists")
    grid = []
    for row in value:
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in row):
            raise SchemaValidationError(f"{name} entries must be integers")
        grid.append([int(v) for v in row])
    return grid


def _float_grid(value: Any, name: str, layers: int, heads: int) -> Optional[torch.Tensor]:
    if value is None:
        return None
    if not isinstance(value, list) or len(value) != layers or any(
        not isinstance(row, list) or len(row) != heads for row in value
    ):
        raise SchemaValidationError(f"{name} must be a {layers}x{heads} grid")
    try:
        return torch.tensor(value, dtype=torch.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaValidationError(f"{name} entries must be numbers") from exc


def _mirror(grid: torch.Tensor) -> torch.Tensor:
    """Reflect values inside their own range: min <-> max."""
    return grid.min() + grid.max() - grid
