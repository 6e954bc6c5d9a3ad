"""
Causal temporal RoPE.

A head of dimension d = 2m is split into m two-dimensional blocks; the
temporal blocks (1-based indices) are rotated by omega_j * t for a token at
frame t. The temporal part of the attention logit then depends only on the
relative distance dt = t_k - t_q:

    l_T(dt) = 1/sqrt(d) * sum_j [A_j cos(omega_j dt) + B_j sin(omega_j dt)]
    A_j = q_{2j-1} k_{2j-1} + q_{2j} k_{2j}
    B_j = q_{2j} k_{2j-1} - q_{2j-1} k_{2j}
"""

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import torch

from config.settings import DEFAULT_ROPE_BASE
from models.errors import ConfigurationError, ShapeError

FrameIndex = Union[int, float, torch.Tensor]


@dataclass(frozen=True)
class RopeSpec:
    """Head dimension, temporal block set and per-block frequency (rad/frame)."""

    head_dim: int
    temporal_blocks: Tuple[int, ...]
    frequencies: Mapping[int, float]

    def __post_init__(self):
        if self.head_dim < 2 or self.head_dim % 2 != 0:
            raise ConfigurationError(f"RoPE head_dim must be even and >= 2, got {self.head_dim}")
        half = self.head_dim // 2
        if any(not 1 <= j <= half for j in self.temporal_blocks):
            raise ConfigurationError(f"temporal blocks must lie in [1, {half}], got {list(self.temporal_blocks)}")
        if len(set(self.temporal_blocks)) != len(self.temporal_blocks):
            raise ConfigurationError("temporal blocks must be distinct")
        if set(self.frequencies) != set(self.temporal_blocks):
            raise ConfigurationError("every temporal block needs exactly one frequency")
        if any(not math.isfinite(w) for w in self.frequencies.values()):
            raise ConfigurationError("RoPE frequencies must be finite")

    @property
    def num_blocks(self) -> int:
        return self.head_dim // 2

    def omega_vector(self, dtype: torch.dtype = torch.float64) -> torch.Tensor:
        """Per-block angular speed, 0 for non-temporal blocks."""
        omega = torch.zeros(self.num_blocks, dtype=dtype)
        for j in self.temporal_blocks:
            omega[j - 1] = self.frequencies[j]
        return omega

    def temporal_dims(self) -> List[int]:
        """0-based feature indices covered by temporal blocks."""
        dims = []
        for j in sorted(self.temporal_blocks):
            dims.extend((2 * j - 2, 2 * j - 1))
        return dims


def default_rope_spec(
    head_dim: int,
    temporal_blocks: Optional[Iterable[int]] = None,
    base: float = DEFAULT_ROPE_BASE,
    frequencies: Optional[Sequence[float]] = None,
) -> RopeSpec:
    """
    Build a spec with the standard rotary schedule over the temporal blocks.

    The i-th temporal block (0-based, ascending) gets base ** (-2i / d_T)
    with d_T = 2 * |T|, unless explicit frequencies are given.
    """
    if head_dim < 2 or head_dim % 2 != 0:
        raise ConfigurationError(f"RoPE head_dim must be even and >= 2, got {head_dim}")
    blocks = tuple(sorted(temporal_blocks)) if temporal_blocks is not None else tuple(range(1, head_dim // 2 + 1))
    if frequencies is not None:
        if len(frequencies) != len(blocks):
            raise ConfigurationError("need one frequency per temporal block")
        freq = {j: float(w) for j, w in zip(blocks, frequencies)}
    else:
        d_t = 2 * len(blocks)
        freq = {j: float(base ** (-2.0 * i / d_t)) for i, j in enumerate(blocks)}
    return RopeSpec(head_dim=head_dim, temporal_blocks=blocks, frequencies=freq)


def rope_spec_from_settings(head_dim: int, settings) -> RopeSpec:
    """RopeSpec for a RunConfig's rope section."""
    return default_rope_spec(
        head_dim,
        temporal_blocks=settings.temporal_blocks,
        base=settings.base,
        frequencies=settings.frequencies,
    )


def apply_rope(vector: torch.Tensor, frame_index: FrameIndex, spec: RopeSpec) -> torch.Tensor:
    """
    Rotate every temporal block of vector by omega_j * frame_index.

    vector may carry leading axes ([..., d]); frame_index is a scalar or a
    tensor broadcastable to vector.shape[:-1]. Non-temporal blocks pass
    through unchanged.

    Raises:
        ShapeError: last axis is not the head dimension
    """
    if vector.shape[-1] != spec.head_dim:
        raise ShapeError(f"expected last dimension {spec.head_dim}, got {vector.shape[-1]}")
    omega = spec.omega_vector(torch.float64)
    t = torch.as_tensor(frame_index, dtype=torch.float64)
    angles = t.unsqueeze(-1) * omega
    cos = torch.cos(angles).to(vector.dtype)
    sin = torch.sin(angles).to(vector.dtype)
    even = vector[..., 0::2]
    odd = vector[..., 1::2]
    rotated = torch.stack((even * cos - odd * sin, even * sin + odd * cos), dim=-1)
    return rotated.flatten(-2)


def _check_pair(q: torch.Tensor, k: torch.Tensor, spec: RopeSpec) -> Tuple[torch.Tensor, torch.Tensor]:
    q = torch.as_tensor(q, dtype=torch.float64)
    k = torch.as_tensor(k, dtype=torch.float64)
    if q.shape != (spec.head_dim,) or k.shape != (spec.head_dim,):
        raise ShapeError(f"q and k must be vectors of length {spec.head_dim}, got {tuple(q.shape)} and {tuple(k.shape)}")
    return q, k


def block_coefficients(q: torch.Tensor, k: torch.Tensor, spec: RopeSpec) -> Dict[int, Tuple[float, float]]:
    """(A_j, B_j) for every temporal block j."""
    q, k = _check_pair(q, k, spec)
    coeffs = {}
    for j in spec.temporal_blocks:
        q1, q2 = q[2 * j - 2], q[2 * j - 1]
        k1, k2 = k[2 * j - 2], k[2 * j - 1]
        coeffs[j] = (float(q1 * k1 + q2 * k2), float(q2 * k1 - q1 * k2))
    return coeffs


def temporal_logit_closed_form(q: torch.Tensor, k: torch.Tensor, delta_t: FrameIndex, spec: RopeSpec) -> float:
    """l_T(dt) from the block coefficients, in double precision."""
    total = 0.0
    for j, (a, b) in block_coefficients(q, k, spec).items():
        phase = spec.frequencies[j] * float(delta_t)
        total += a * math.cos(phase) + b * math.sin(phase)
    return total / math.sqrt(spec.head_dim)


def temporal_logit_numeric(q: torch.Tensor, k: torch.Tensor, t_q: FrameIndex, t_k: FrameIndex, spec: RopeSpec) -> float:
    """Rotate q at t_q and k at t_k, then take the scaled temporal inner product."""
    q, k = _check_pair(q, k, spec)
    q_rot = apply_rope(q, t_q, spec)
    k_rot = apply_rope(k, t_k, spec)
    dims = torch.tensor(spec.temporal_dims(), dtype=torch.long)
    return float(torch.dot(q_rot[dims], k_rot[dims])) / math.sqrt(spec.head_dim)


def logit_profile(q: torch.Tensor, k: torch.Tensor, spec: RopeSpec, delta_ts: Iterable[int]) -> List[Tuple[int, float]]:
    """(dt, l_T(dt)) pairs, e.g. to show frequency cancellation."""
    return [(int(dt), temporal_logit_closed_form(q, k, dt, spec)) for dt in delta_ts]


def active_blocks(q: torch.Tensor, k: torch.Tensor, spec: RopeSpec) -> List[int]:
    """Temporal blocks where both q_j and k_j are non-zero."""
    q, k = _check_pair(q, k, spec)
    return [
        j for j in spec.temporal_blocks
        if bool(q[2 * j - 2 : 2 * j].any()) and bool(k[2 * j - 2 : 2 * j].any())
    ]


def longest_period(spec: RopeSpec) -> int:
    """Frames needed to cover one full turn of the slowest non-zero frequency."""
    speeds = [abs(w) for w in spec.frequencies.values() if w != 0]
    if not speeds:
        return 1
    return int(math.ceil(2 * math.pi / min(speeds)))
