"""
KV-cache selection policies for the rollout simulator.

Every policy produces a SelectionMask per layer; all of them are executed
by the same packed attention path.

Variants:
- dense_window: the last `window` historical frames, no anchors
- attention_sink: sink frames plus the last (window - |sinks|) frames, so the
  sinks count against the window and the history never exceeds it
- attention_only / diversity_only: budgeted selection with lambda 1 / 0
- focused: budgeted selection with the configured lambda
- uniform_budget: focused scoring, every head gets the rounded mean budget
- reverse_budget: focused scoring, budgets mapped from mirrored importance
- random_budget: focused scoring, budgets moved across heads by a seeded shuffle
- chunk_shared: one selection per chunk from the query-frame-averaged score
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import torch

from config.run_config import RunConfig
from models.budgets import HeadBudgetTable, round_half_away
from models.errors import ConfigurationError
from models.kv_cache import KvCache
from models.scores import FrameSelection, SelectionMask
from runtime import get_frozen_budget_table
from services.history_scoring import score_history, select_from_values

DENSE_WINDOW = "dense_window"
ATTENTION_SINK = "attention_sink"
ATTENTION_ONLY = "attention_only"
DIVERSITY_ONLY = "diversity_only"
FOCUSED = "focused"
UNIFORM_BUDGET = "uniform_budget"
CHUNK_SHARED = "chunk_shared"
REVERSE_BUDGET = "reverse_budget"
RANDOM_BUDGET = "random_budget"

WINDOW_VARIANTS = (DENSE_WINDOW, ATTENTION_SINK)
BUDGETED_VARIANTS = (
    ATTENTION_ONLY, DIVERSITY_ONLY, FOCUSED, UNIFORM_BUDGET, CHUNK_SHARED, REVERSE_BUDGET, RANDOM_BUDGET,
)
ALLOCATION_VARIANTS = (FOCUSED, REVERSE_BUDGET, RANDOM_BUDGET, UNIFORM_BUDGET)
POLICY_VARIANTS = WINDOW_VARIANTS + BUDGETED_VARIANTS


@dataclass(frozen=True)
class Policy:
    """
    A selection strategy plus its parameters.

    window defaults to the model's dense_window; budgets default to the
    frozen runtime table; lam overrides the configured lambda; seed drives
    random_budget and defaults to the configured seed.

    attention_sink keeps its sinks inside the window: with window w and
    sinks S it holds S plus the most recent w - |S| frames.
    """

    variant: str
    window: Optional[int] = None
    sinks: Tuple[int, ...] = (0,)
    lam: Optional[float] = None
    budgets: Optional[HeadBudgetTable] = None
    label: Optional[str] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.variant not in POLICY_VARIANTS:
            raise ConfigurationError(f"unknown policy {self.variant!r}; choose from {', '.join(POLICY_VARIANTS)}")
        if self.window is not None and self.window < 0:
            raise ConfigurationError(f"policy window must be >= 0, got {self.window}")
        if self.lam is not None and not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError(f"policy lambda must be in [0, 1], got {self.lam}")
        if self.variant == ATTENTION_SINK:
            if self.window is not None and self.window < len(self.sinks):
                raise ConfigurationError("attention_sink window must cover its sink frames")

    @property
    def name(self) -> str:
        return self.label or self.variant

    @property
    def budgeted(self) -> bool:
        return self.variant in BUDGETED_VARIANTS

    # ------------------------------------------------------------------
    # Configuration
    # ------------------------------------------------------------------

    def window_size(self, config: RunConfig) -> int:
        return config.shape.dense_window if self.window is None else self.window

    def anchor_indices(self, config: RunConfig) -> Tuple[int, ...]:
        if self.variant == DENSE_WINDOW:
            return ()
        if self.variant == ATTENTION_SINK:
            return tuple(self.sinks)
        return tuple(config.anchors)

    def lambda_for(self, config: RunConfig) -> float:
        if self.variant == ATTENTION_ONLY:
            return 1.0
        if self.variant == DIVERSITY_ONLY:
            return 0.0
        return config.lam if self.lam is None else self.lam

    def resolve_budgets(self, config: RunConfig) -> Optional[HeadBudgetTable]:
        """
        Budget table the policy selects with (None for window policies).

        Raises:
            ConfigurationError: budgeted policy without a table, or a table
                that does not match the model
        """
        if not self.budgeted:
            return None
        table = self.budgets if self.budgets is not None else get_frozen_budget_table()
        if table is None:
            raise ConfigurationError(f"policy {self.variant} needs a budget table (--budgets)")
        shape = config.shape
        if (table.num_layers, table.heads) != (shape.num_layers, shape.heads_per_layer):
            raise ConfigurationError(
                f"budget table is {table.num_layers}x{table.heads}, model is "
                f"{shape.num_layers}x{shape.heads_per_layer}"
            )
        if self.variant == UNIFORM_BUDGET:
            return HeadBudgetTable.uniform(table.num_layers, table.heads, round_half_away(table.mean_budget()))
        if self.variant == REVERSE_BUDGET:
            return table.reversed()
        if self.variant == RANDOM_BUDGET:
            return table.shuffled(config.seed if self.seed is None else self.seed)
        return table

    def capacity(self, config: RunConfig, budgets: Optional[HeadBudgetTable], layer: int, head: int) -> int:
        """How many non-reserved frames a (layer, head) may hold."""
        if budgets is not None:
            return budgets.budget(layer, head)
        if self.variant == ATTENTION_SINK:
            return self.window_size(config) - len(self.sinks)
        return self.window_size(config)

    # ------------------------------------------------------------------
    # Cache maintenance and selection
    # ------------------------------------------------------------------

    def evict(self, cache: KvCache, config: RunConfig) -> list:
        """Trim the cache before a chunk; only window policies evict."""
        if self.variant not in WINDOW_VARIANTS:
            return []
        history = cache.historical_indices(0)
        anchors = set(self.anchor_indices(config))
        recent = [f for f in history if f not in anchors]
        keep_recent = self.capacity(config, None, 0, 0)
        keep = recent[len(recent) - keep_recent:] if keep_recent > 0 else []
        return cache.evict(keep)

    def select(
        self,
        cache: KvCache,
        layer: int,
        q_rotated: torch.Tensor,
        q_raw: torch.Tensor,
        config: RunConfig,
        budgets: Optional[HeadBudgetTable] = None,
    ) -> SelectionMask:
        """
        Selection for one layer of the current chunk.

        q_rotated / q_raw are the chunk queries [1, QF, N, H, D] with and
        without RoPE; scoring uses whichever config.score_on_rotated asks for.
        """
        history = cache.historical_indices(layer)
        reserved = sorted(cache.reserved_indices(layer))
        generated = sorted(cache.generated_indices)
        batch, query_frames, _, heads, _ = q_rotated.shape

        if not self.budgeted:
            values = torch.zeros((batch, query_frames, heads, len(history)), dtype=torch.float64)
            return select_from_values(values, history, reserved, generated, lambda _layer, _head: len(history), layer)

        if budgets is None:
            budgets = self.resolve_budgets(config)
        q = q_rotated if config.score_on_rotated else q_raw
        fused = score_history(
            q,
            cache,
            layer,
            lam=self.lambda_for(config),
            groups=config.groups,
            epsilon=config.epsilon,
            rotated=config.score_on_rotated,
        )
        if self.variant != CHUNK_SHARED:
            return select_from_values(fused.values, history, reserved, generated, budgets.budget, layer)

        shared = select_from_values(
            fused.values.mean(dim=1, keepdim=True), history, reserved, generated, budgets.budget, layer
        )
        entries = [
            FrameSelection(batch=e.batch, query_frame=qf, head=e.head, retained=e.retained, reserved=e.reserved)
            for qf in range(query_frames)
            for e in shared.entries
        ]
        return SelectionMask(layer=layer, entries=tuple(entries), generated=shared.generated)


def make_policy(
    variant: str,
    budgets: Optional[HeadBudgetTable] = None,
    window: Optional[int] = None,
    lam: Optional[float] = None,
    sinks: Optional[Tuple[int, ...]] = None,
    label: Optional[str] = None,
    seed: Optional[int] = None,
) -> Policy:
    return Policy(
        variant=variant,
        window=window,
        sinks=tuple(sinks) if sinks is not None else (0,),
        lam=lam,
        budgets=budgets,
        label=label,
        seed=seed,
    )
