"""
Packed variable-length attention batch.

Segments are concatenated along the token axis; cu_q / cu_k hold the
cumulative boundaries so that segment s owns rows cu[s]:cu[s + 1].
"""

from dataclasses import dataclass
from typing import List, Tuple

import torch

from models.errors import IntegrityError


@dataclass(frozen=True)
class SegmentMeta:
    """Where one (batch, query frame, head) segment came from."""

    batch: int
    query_frame: int
    layer: int
    head: int
    retained: Tuple[int, ...]


@dataclass(frozen=True, eq=False)
class PackedBatch:
    q_pack: torch.Tensor
    k_pack: torch.Tensor
    v_pack: torch.Tensor
    cu_q: torch.Tensor
    cu_k: torch.Tensor
    segment_meta: Tuple[SegmentMeta, ...]
    tokens_per_frame: int

    @property
    def num_segments(self) -> int:
        return len(self.segment_meta)

    @property
    def head_dim(self) -> int:
        return int(self.q_pack.shape[-1])

    def q_bounds(self, segment: int) -> Tuple[int, int]:
        return int(self.cu_q[segment]), int(self.cu_q[segment + 1])

    def k_bounds(self, segment: int) -> Tuple[int, int]:
        return int(self.cu_k[segment]), int(self.cu_k[segment + 1])

    def q_lengths(self) -> List[int]:
        return torch.diff(self.cu_q).tolist()

    def k_lengths(self) -> List[int]:
        return torch.diff(self.cu_k).tolist()

    def check(self) -> None:
        """
        Verify the packing invariants.

        Raises:
            IntegrityError: boundaries or per-segment lengths are inconsistent
        """
        for name, cu, rows in (("cu_q", self.cu_q, self.q_pack), ("cu_k", self.cu_k, self.k_pack)):
            if cu.dim() != 1 or cu.numel() != self.num_segments + 1:
                raise IntegrityError(f"{name} must have {self.num_segments + 1} entries, got {cu.numel()}")
            if int(cu[0]) != 0:
                raise IntegrityError(f"{name} must start at 0")
            if (torch.diff(cu) < 0).any():
                raise IntegrityError(f"{name} must be non-decreasing")
            if int(cu[-1]) != rows.shape[0]:
                raise IntegrityError(f"{name} ends at {int(cu[-1])} but the pack holds {rows.shape[0]} rows")
        if self.v_pack.shape != self.k_pack.shape:
            raise IntegrityError("k_pack and v_pack differ in shape")
        for segment, meta in enumerate(self.segment_meta):
            q_len = self.q_bounds(segment)[1] - self.q_bounds(segment)[0]
            k_len = self.k_bounds(segment)[1] - self.k_bounds(segment)[0]
            if q_len != self.tokens_per_frame:
                raise IntegrityError(f"segment {segment}: {q_len} query rows, expected {self.tokens_per_frame}")
            if k_len != len(meta.retained) * self.tokens_per_frame:
                raise IntegrityError(
                    f"segment {segment}: {k_len} key rows for {len(meta.retained)} retained frames"
                )
