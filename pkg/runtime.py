"""
Process-wide runtime references shared across commands.

Holds the frozen KV-budget table and the active-rollout guard: budgets are
computed offline, frozen, and may not be recomputed while a rollout runs.
"""

import threading
from contextlib import contextmanager
from typing import Iterator, Optional

from models.budgets import HeadBudgetTable
from models.errors import ConfigurationError

_frozen_budgets: Optional[HeadBudgetTable] = None
_active_rollouts = 0
_lock = threading.Lock()


def freeze_budget_table(table: HeadBudgetTable) -> None:
    global _frozen_budgets
    if rollout_active():
        raise ConfigurationError("cannot replace the budget table while a rollout is running")
    _frozen_budgets = table


def get_frozen_budget_table() -> Optional[HeadBudgetTable]:
    return _frozen_budgets


def clear_frozen_budget_table() -> None:
    global _frozen_budgets
    _frozen_budgets = None


def rollout_active() -> bool:
    return _active_rollouts > 0


def ensure_budgets_mutable() -> None:
    """Raise if a rollout is in progress."""
    if rollout_active():
        raise ConfigurationError("budget tables are frozen during a rollout; recompute them offline")


@contextmanager
def rollout_guard() -> Iterator[None]:
    """Mark a rollout as running for the duration of the block."""
    global _active_rollouts
    with _lock:
        _active_rollouts += 1
    try:
        yield
    finally:
        with _lock:
            _active_rollouts -= 1
