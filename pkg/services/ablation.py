"""
Ablation sweeps over the budget range, the attention weight and the way
budgets are allocated across heads.

budget sweep: for each b_min, b_max walks down from 15 in steps of 3 while
it stays >= b_min; the same normalized importance is re-mapped at every
point.
lambda sweep: the budget table is fixed and lambda moves over a grid.
allocation sweep: one table, four allocations side by side: importance
order (focused), mirrored importance (reverse_budget), a seeded shuffle
(random_budget) and the rounded mean for every head (uniform_budget).

Every point reports the analytical frame cost of its budget table plus the
rollout's frame cost and divergence from the dense-window trajectory.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import torch

from config.run_config import RunConfig
from config.settings import ABLATION_B_MAX_START, ABLATION_B_MAX_STEP, ABLATION_LAMBDA_GRID
from event_logger import log_event
from models.budgets import HeadBudgetTable
from models.errors import ConfigurationError
from services.cache_policies import ALLOCATION_VARIANTS, FOCUSED, Policy, make_policy
from services.cost_model import frame_cost
from services.head_importance import map_budgets
from services.rollout_sim import dense_trajectory, run_rollout
from services.synthetic_model import SyntheticAttentionModel

SWEEP_COLUMNS = (
    "kind",
    "allocation",
    "b_min",
    "b_max",
    "lambda",
    "c_pack",
    "c_dense",
    "ratio",
    "theoretical_speedup",
    "rollout_frame_cost",
    "divergence_vs_dense",
)


@dataclass(frozen=True)
class SweepPoint:
    kind: str
    allocation: str
    b_min: int
    b_max: int
    lam: float
    c_pack: int
    c_dense: int
    ratio: float
    speedup: float
    rollout_frame_cost: int
    divergence: float

    def to_csv_row(self) -> Dict[str, object]:
        return {
            "kind": self.kind,
            "allocation": self.allocation,
            "b_min": self.b_min,
            "b_max": self.b_max,
            "lambda": self.lam,
            "c_pack": self.c_pack,
            "c_dense": self.c_dense,
            "ratio": f"{self.ratio:.3f}",
            "theoretical_speedup": f"{self.speedup:.2f}",
            "rollout_frame_cost": self.rollout_frame_cost,
            "divergence_vs_dense": f"{self.divergence:.9e}",
        }


def b_max_schedule(b_min: int, start: int = ABLATION_B_MAX_START, step: int = ABLATION_B_MAX_STEP) -> List[int]:
    """
    b_max values for one b_min.

    Examples:
        b_min=4 -> [15, 12, 9, 6]
        b_min=12 -> [15, 12]
    """
    if step < 1:
        raise ConfigurationError(f"sweep step must be >= 1, got {step}")
    return list(range(start, b_min - 1, -step))


def _point(
    kind: str,
    config: RunConfig,
    policy: Policy,
    num_chunks: int,
    model: SyntheticAttentionModel,
    baseline: torch.Tensor,
) -> SweepPoint:
    table = policy.resolve_budgets(config)
    cost = frame_cost(table, config.shape)
    trajectory, trace = run_rollout(config, policy, num_chunks, model=model, log=False)
    divergence = float(((trajectory.to(torch.float64) - baseline.to(torch.float64)) ** 2).mean())
    point = SweepPoint(
        kind=kind,
        allocation=policy.name,
        b_min=table.b_min,
        b_max=table.b_max,
        lam=policy.lambda_for(config),
        c_pack=cost.c_pack,
        c_dense=cost.c_dense,
        ratio=cost.ratio,
        speedup=cost.speedup,
        rollout_frame_cost=trace.total_frame_cost,
        divergence=divergence,
    )
    log_event("ablation_point", **point.to_csv_row())
    return point


def budget_sweep(
    config: RunConfig,
    table: HeadBudgetTable,
    num_chunks: int,
    b_mins: Sequence[int] = (4,),
    model: Optional[SyntheticAttentionModel] = None,
) -> List[SweepPoint]:
    """
    Re-map the table's normalized importance over the b_max schedule.

    Raises:
        ConfigurationError: the table carries no normalized importance
    """
    if table.normalized is None:
        raise ConfigurationError("budget sweep needs a budget table with normalized importance")
    model = model or SyntheticAttentionModel(config.shape, seed=config.seed)
    baseline = dense_trajectory(config, num_chunks, model)
    points = []
    for b_min in b_mins:
        for b_max in b_max_schedule(b_min):
            mapped = map_budgets(table.normalized, b_min, b_max, table.gamma)
            points.append(_point("budget", config, make_policy(FOCUSED, budgets=mapped), num_chunks, model, baseline))
    return points


def lambda_sweep(
    config: RunConfig,
    table: HeadBudgetTable,
    num_chunks: int,
    grid: Sequence[float] = ABLATION_LAMBDA_GRID,
    model: Optional[SyntheticAttentionModel] = None,
) -> List[SweepPoint]:
    """Fixed budgets, lambda over the grid."""
    if not grid:
        raise ConfigurationError("lambda grid is empty")
    model = model or SyntheticAttentionModel(config.shape, seed=config.seed)
    baseline = dense_trajectory(config, num_chunks, model)
    return [
        _point("lambda", config, make_policy(FOCUSED, budgets=table, lam=float(lam)), num_chunks, model, baseline)
        for lam in grid
    ]


def allocation_sweep(
    config: RunConfig,
    table: HeadBudgetTable,
    num_chunks: int,
    seed: Optional[int] = None,
    model: Optional[SyntheticAttentionModel] = None,
) -> List[SweepPoint]:
    """
    The same importance table under each allocation strategy.

    Raises:
        ConfigurationError: the table carries no normalized importance
    """
    if table.normalized is None:
        raise ConfigurationError("allocation sweep needs a budget table with normalized importance")
    model = model or SyntheticAttentionModel(config.shape, seed=config.seed)
    baseline = dense_trajectory(config, num_chunks, model)
    return [
        _point("allocation", config, make_policy(variant, budgets=table, seed=seed), num_chunks, model, baseline)
        for variant in ALLOCATION_VARIANTS
    ]


def format_sweep(points: Sequence[SweepPoint]) -> List[str]:
    lines = ["📊 Ablation sweep", "   allocation      b_min  b_max  lambda  ratio  speedup  divergence"]
    for p in points:
        lines.append(
            f"   {p.allocation:<14}  {p.b_min:>5}  {p.b_max:>5}  {p.lam:>6.2f}  {p.ratio:.3f}"
            f"  {p.speedup:>6.2f}x  {p.divergence:.4e}"
        )
    return lines
