"""
Seeded synthetic attention stack used by the rollout simulator.

Each layer holds per-head linear Q/K/V maps [H, D, D] and an output
projection [H, D, H*D] that writes the attention output back into the
residual hidden state. A head whose four blocks are zero is "dead":
masking it cannot change anything.
"""

import math
from typing import Iterable, Optional, Tuple

import torch

from models.errors import ConfigurationError, ShapeError
from models.frames import ModelShape

_MODEL_SEED_OFFSET = 0x5EED
_SEED_MASK = (1 << 63) - 1

Head = Tuple[int, int]


class SyntheticAttentionModel:
    """Fixed random per-head projections for every layer."""

    def __init__(
        self,
        shape: ModelShape,
        seed: int = 0,
        dead_heads: Iterable[Head] = (),
        residual_scale: float = 0.5,
    ):
        self.shape = shape
        self.seed = seed
        layers, heads, dim = shape.num_layers, shape.heads_per_layer, shape.head_dim
        generator = torch.Generator().manual_seed((seed * 7919 + _MODEL_SEED_OFFSET) & _SEED_MASK)

        def draw(*size):
            return torch.randn(size, generator=generator, dtype=torch.float32)

        proj_scale = 1.0 / math.sqrt(dim)
        self.w_q = draw(layers, heads, dim, dim) * proj_scale
        self.w_k = draw(layers, heads, dim, dim) * proj_scale
        self.w_v = draw(layers, heads, dim, dim) * proj_scale
        self.w_o = draw(layers, heads, dim, heads * dim) * (residual_scale / math.sqrt(heads * dim))

        self.dead_heads = tuple(sorted(set(dead_heads)))
        for layer, head in self.dead_heads:
            self.check_head((layer, head))
            for weights in (self.w_q, self.w_k, self.w_v, self.w_o):
                weights[layer, head].zero_()

    @classmethod
    def one_signal_head(cls, shape: ModelShape, signal: Head, seed: int = 0) -> "SyntheticAttentionModel":
        """Every head except signal is dead."""
        dead = [
            (layer, head)
            for layer in range(shape.num_layers)
            for head in range(shape.heads_per_layer)
            if (layer, head) != tuple(signal)
        ]
        return cls(shape, seed=seed, dead_heads=dead)

    def check_head(self, head: Optional[Head]) -> None:
        """Raise ConfigurationError unless head names an existing (layer, head)."""
        if head is None:
            return
        layer, index = head
        if not 0 <= layer < self.shape.num_layers or not 0 <= index < self.shape.heads_per_layer:
            raise ConfigurationError(
                f"invalid head index {(layer, index)} for {self.shape.num_layers} layers x "
                f"{self.shape.heads_per_layer} heads"
            )

    def project(self, layer: int, hidden: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Per-head Q, K, V of hidden [F, N, H, D]; RoPE is applied by the caller."""
        if tuple(hidden.shape[1:]) != self.shape.frame_shape:
            raise ShapeError(f"hidden state {tuple(hidden.shape)} does not match {self.shape.frame_shape}")
        q = torch.einsum("fnhd,hde->fnhe", hidden, self.w_q[layer])
        k = torch.einsum("fnhd,hde->fnhe", hidden, self.w_k[layer])
        v = torch.einsum("fnhd,hde->fnhe", hidden, self.w_v[layer])
        return q, k, v

    def output(self, layer: int, attended: torch.Tensor) -> torch.Tensor:
        """Residual update [F, N, H, D] from the per-head attention output."""
        frames, tokens, heads, dim = attended.shape
        mixed = torch.einsum("fnhd,hdk->fnk", attended, self.w_o[layer])
        return mixed.reshape(frames, tokens, heads, dim)
