"""
Deterministic synthetic latent stream.

Stands in for the per-chunk latents a video backbone would produce. Every
frame draws from its own generator seeded by (run seed, frame index), so a
shorter stream is always a prefix of a longer one.

Redundancy modes:
- "iid": every frame independent standard normal
- "duplicate": frame f repeats frame period * (f // period)
- "static-region": the first half of every frame's tokens is a shared
  background; only the second half varies per frame
"""

from typing import List

import torch

from config.run_config import RunConfig
from event_logger import log_event
from models.errors import ConfigurationError
from models.frames import FrameTensor

_SEED_STRIDE = 1_000_003
_SEED_MASK = (1 << 63) - 1


def frame_seed(seed: int, frame_index: int) -> int:
    return (seed * _SEED_STRIDE + frame_index) & _SEED_MASK


def _draw(seed: int, shape) -> torch.Tensor:
    generator = torch.Generator().manual_seed(seed)
    return torch.randn(shape, generator=generator, dtype=torch.float32)


def synthetic_frame(config: RunConfig, frame_index: int) -> FrameTensor:
    """One frame of the stream; a pure function of (config, frame_index)."""
    shape = config.shape.frame_shape
    mode = config.redundancy.mode
    source = frame_index
    if mode == "duplicate":
        period = config.redundancy.period
        source = period * (frame_index // period)
    data = _draw(frame_seed(config.seed, source), shape)
    if mode == "static-region":
        static_tokens = config.shape.tokens_per_frame // 2
        background = _draw(frame_seed(config.seed, -1), shape)
        data[:static_tokens] = background[:static_tokens]
    return FrameTensor(frame_index=frame_index, data=data)


def make_synthetic_stream(config: RunConfig, num_chunks: int) -> List[List[FrameTensor]]:
    """
    Generate num_chunks chunks of chunk_frames frames each.

    Args:
        config: run configuration (shape, seed, redundancy)
        num_chunks: number of chunks, >= 1

    Returns:
        One list of FrameTensors per chunk, frame indices running 0..num_chunks*QF-1

    Raises:
        ConfigurationError: num_chunks < 1
    """
    if num_chunks < 1:
        raise ConfigurationError(f"num_chunks must be >= 1, got {num_chunks}")
    qf = config.shape.chunk_frames
    chunks = [
        [synthetic_frame(config, c * qf + i) for i in range(qf)]
        for c in range(num_chunks)
    ]
    log_event(
        "stream_generated",
        seed=config.seed,
        num_chunks=num_chunks,
        frames=num_chunks * qf,
        redundancy=config.redundancy.mode,
    )
    return chunks


def flatten_stream(chunks: List[List[FrameTensor]]) -> List[FrameTensor]:
    return [frame for chunk in chunks for frame in chunk]
