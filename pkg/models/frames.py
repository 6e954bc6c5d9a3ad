"""
Frame-level domain types.

ModelShape describes the attention stack, FrameTensor holds one frame's
per-head token activations, and LatentWindow is a slice of a generated
trajectory handed to the score models.
"""

from dataclasses import dataclass, field
from typing import Any, Dict

import torch

from config.settings import (
    REFERENCE_CHUNK_FRAMES,
    REFERENCE_DENSE_WINDOW,
    REFERENCE_HEAD_DIM,
    REFERENCE_HEADS_PER_LAYER,
    REFERENCE_NUM_LAYERS,
    REFERENCE_TOKENS_PER_FRAME,
)
from models.errors import ConfigurationError, SchemaValidationError, ShapeError

SHAPE_FIELDS = (
    "num_layers",
    "heads_per_layer",
    "head_dim",
    "tokens_per_frame",
    "chunk_frames",
    "dense_window",
)


@dataclass(frozen=True)
class ModelShape:
    """
    Dimensions of the attention stack.

    tokens_per_frame is the per-frame token count N; chunk_frames is the
    number of query frames generated per autoregressive step; dense_window is
    how many historical frames the dense baseline attends to.
    """

    num_layers: int
    heads_per_layer: int
    head_dim: int
    tokens_per_frame: int
    chunk_frames: int
    dense_window: int

    def __post_init__(self):
        for name in SHAPE_FIELDS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigurationError(f"shape.{name} must be an integer, got {value!r}")
            if value < 1:
                raise ConfigurationError(f"shape.{name} must be >= 1, got {value}")
        if self.head_dim % 2 != 0:
            raise ConfigurationError(f"shape.head_dim must be even for rotary pairing, got {self.head_dim}")

    @property
    def frame_shape(self) -> tuple:
        return (self.tokens_per_frame, self.heads_per_layer, self.head_dim)

    @property
    def latent_dim(self) -> int:
        """Flattened size of one frame."""
        return self.tokens_per_frame * self.heads_per_layer * self.head_dim

    def to_dict(self) -> Dict[str, int]:
        return {name: getattr(self, name) for name in SHAPE_FIELDS}

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "ModelShape":
        """
        Build a shape from its JSON form.

        Raises:
            SchemaValidationError: unknown or missing keys
            ConfigurationError: out-of-range values
        """
        if not isinstance(raw, dict):
            raise SchemaValidationError("shape must be a JSON object")
        unknown = sorted(set(raw) - set(SHAPE_FIELDS))
        if unknown:
            raise SchemaValidationError(f"unknown shape keys: {', '.join(unknown)}")
        missing = [name for name in SHAPE_FIELDS if name not in raw]
        if missing:
            raise SchemaValidationError(f"missing shape keys: {', '.join(missing)}")
        return cls(**{name: raw[name] for name in SHAPE_FIELDS})

    @classmethod
    def reference(cls) -> "ModelShape":
        """The 30-layer, 12-head stack used for the packed-attention cost analysis."""
        return cls(
            num_layers=REFERENCE_NUM_LAYERS,
            heads_per_layer=REFERENCE_HEADS_PER_LAYER,
            head_dim=REFERENCE_HEAD_DIM,
            tokens_per_frame=REFERENCE_TOKENS_PER_FRAME,
            chunk_frames=REFERENCE_CHUNK_FRAMES,
            dense_window=REFERENCE_DENSE_WINDOW,
        )


@dataclass(frozen=True, eq=False)
class FrameTensor:
    """One frame of activations, laid out [tokens_per_frame, heads, head_dim]."""

    frame_index: int
    data: torch.Tensor

    def __post_init__(self):
        if self.data.dim() != 3:
            raise ShapeError(f"frame {self.frame_index}: expected a 3-D tensor, got shape {tuple(self.data.shape)}")
        if not torch.isfinite(self.data).all():
            raise ShapeError(f"frame {self.frame_index}: non-finite activations")

    def check_shape(self, shape: ModelShape) -> None:
        """Raise ShapeError unless the data matches the model's frame layout."""
        if tuple(self.data.shape) != shape.frame_shape:
            raise ShapeError(
                f"frame {self.frame_index}: shape {tuple(self.data.shape)} does not match {shape.frame_shape}"
            )

    def equals(self, other: "FrameTensor") -> bool:
        return self.frame_index == other.frame_index and torch.equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class LatentWindow:
    """A run of consecutive trajectory frames, each flattened to latent_dim."""

    frames: torch.Tensor
    prompt_id: str
    window_index: int
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.frames.dim() != 2 or self.frames.shape[0] < 1:
            raise ShapeError(f"window frames must be [K >= 1, latent_dim], got {tuple(self.frames.shape)}")
        if not torch.isfinite(self.frames).all():
            raise ShapeError(f"window {self.window_index} of prompt {self.prompt_id!r} has non-finite entries")

    @property
    def length(self) -> int:
        return int(self.frames.shape[0])

    def with_frames(self, frames: torch.Tensor) -> "LatentWindow":
        """Same window identity, different content (e.g. after adding noise)."""
        return LatentWindow(frames=frames, prompt_id=self.prompt_id, window_index=self.window_index, metadata=dict(self.metadata))
