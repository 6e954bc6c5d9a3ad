"""
Models module for the focused KV-cache compression engine.

This module contains the data structures: shapes, frames, the KV cache,
score/selection types, budget tables and the packed attention batch.
"""

from models.errors import (
    FocusedKVError,
    ConfigurationError,
    ShapeError,
    IntegrityError,
    SchemaValidationError,
)
from models.frames import ModelShape, FrameTensor, LatentWindow
from models.kv_cache import KvCache
from models.scores import ScoreTensor, FrameSelection, SelectionMask, masks_from_records
from models.budgets import ImportanceTable, HeadBudgetTable
from models.packed import SegmentMeta, PackedBatch

__all__ = [
    # Errors
    "FocusedKVError",
    "ConfigurationError",
    "ShapeError",
    "IntegrityError",
    "SchemaValidationError",
    # Frames
    "ModelShape",
    "FrameTensor",
    "LatentWindow",
    # Cache
    "KvCache",
    # Scoring
    "ScoreTensor",
    "FrameSelection",
    "SelectionMask",
    "masks_from_records",
    # Budgets
    "ImportanceTable",
    "HeadBudgetTable",
    # Packing
    "SegmentMeta",
    "PackedBatch",
]
