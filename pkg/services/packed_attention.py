"""
Packed variable-length attention.

Each (batch, query frame, head) of a SelectionMask becomes one segment:
the query frame's tokens for that head against the tokens of its retained
frames. Segments are concatenated along the token axis and delimited by
cumulative boundaries (cu_q, cu_k); attention never crosses a segment.
The dense oracle computes the same result by masking the full logits.
"""

import math
from typing import Dict, Iterable, List, Optional, Sequence

import torch

from models.errors import IntegrityError, ShapeError
from models.kv_cache import KvCache
from models.packed import PackedBatch, SegmentMeta
from models.scores import SelectionMask


def build_cu(lengths: Sequence[int]) -> torch.Tensor:
    """
    Cumulative boundaries [0, l0, l0 + l1, ...].

    Examples:
        [3, 2] -> [0, 3, 5]; [] -> [0]; [0, 4] -> [0, 0, 4]
    """
    if any(int(n) < 0 for n in lengths):
        raise IntegrityError(f"segment lengths must be >= 0, got {list(lengths)}")
    cu = torch.zeros(len(lengths) + 1, dtype=torch.int64)
    if lengths:
        cu[1:] = torch.cumsum(torch.as_tensor([int(n) for n in lengths], dtype=torch.int64), dim=0)
    return cu


def _check_chunk(chunk_q: torch.Tensor) -> None:
    if chunk_q.dim() != 5:
        raise ShapeError(f"chunk queries must be [B, QF, N, H, D], got {tuple(chunk_q.shape)}")
    if chunk_q.shape[0] != 1:
        raise ShapeError(f"the KV cache holds a single sequence; got batch size {chunk_q.shape[0]}")


def _ordered_entries(mask: SelectionMask):
    return sorted(mask.entries, key=lambda e: (e.batch, e.query_frame, e.head))


def pack(mask: SelectionMask, chunk_q: torch.Tensor, cache: KvCache, layer: Optional[int] = None) -> PackedBatch:
    """
    Gather the QKV rows of every segment into flat buffers.

    Args:
        mask: per (batch, query frame, head) retained frames
        chunk_q: [1, QF, N, H, D] queries as attention sees them (rotated)
        cache: KV cache; keys are read through cache.rotated_key
        layer: defaults to mask.layer

    Segments are ordered batch-major, then query frame, then head; retained
    frames are concatenated in ascending frame order.

    Raises:
        IntegrityError: a retained frame is not in the cache
        ShapeError: queries and cache disagree
    """
    _check_chunk(chunk_q)
    layer = mask.layer if layer is None else layer
    tokens = chunk_q.shape[2]

    keys: Dict[int, torch.Tensor] = {}
    values: Dict[int, torch.Tensor] = {}
    q_rows, k_rows, v_rows, metas = [], [], [], []
    q_lengths, k_lengths = [], []
    for entry in _ordered_entries(mask):
        if entry.query_frame >= chunk_q.shape[1] or entry.head >= chunk_q.shape[3]:
            raise IntegrityError(f"segment {(entry.batch, entry.query_frame, entry.head)} is outside the chunk")
        for frame in entry.retained:
            if frame not in keys:
                keys[frame] = cache.rotated_key(layer, frame)
                values[frame] = cache.value(layer, frame).data
                if keys[frame].shape[0] != tokens:
                    raise ShapeError(f"frame {frame} has {keys[frame].shape[0]} tokens, queries have {tokens}")
        h = entry.head
        q_rows.append(chunk_q[entry.batch, entry.query_frame, :, h, :])
        if entry.retained:
            k_rows.append(torch.cat([keys[f][:, h, :] for f in entry.retained], dim=0))
            v_rows.append(torch.cat([values[f][:, h, :] for f in entry.retained], dim=0))
        q_lengths.append(tokens)
        k_lengths.append(len(entry.retained) * tokens)
        metas.append(SegmentMeta(entry.batch, entry.query_frame, layer, h, tuple(entry.retained)))

    dim = chunk_q.shape[-1]
    empty = chunk_q.new_zeros((0, dim))
    batch = PackedBatch(
        q_pack=torch.cat(q_rows, dim=0) if q_rows else empty,
        k_pack=torch.cat(k_rows, dim=0) if k_rows else empty,
        v_pack=torch.cat(v_rows, dim=0) if v_rows else empty,
        cu_q=build_cu(q_lengths),
        cu_k=build_cu(k_lengths),
        segment_meta=tuple(metas),
        tokens_per_frame=tokens,
    )
    batch.check()
    return batch


def _stable_softmax(logits: torch.Tensor) -> torch.Tensor:
    shifted = logits - logits.amax(dim=-1, keepdim=True)
    weights = torch.exp(shifted)
    return weights / weights.sum(dim=-1, keepdim=True)


def varlen_attention(batch: PackedBatch, head_dim: Optional[int] = None) -> torch.Tensor:
    """
    Softmax attention of every segment against its own keys.

    Returns:
        O_pack [total query rows, D]; segments with no keys produce zeros
    """
    dim = batch.head_dim if head_dim is None else head_dim
    scale = 1.0 / math.sqrt(dim)
    out = torch.zeros_like(batch.q_pack)
    for segment in range(batch.num_segments):
        q_lo, q_hi = batch.q_bounds(segment)
        k_lo, k_hi = batch.k_bounds(segment)
        if k_hi == k_lo or q_hi == q_lo:
            continue
        q = batch.q_pack[q_lo:q_hi]
        k = batch.k_pack[k_lo:k_hi]
        v = batch.v_pack[k_lo:k_hi]
        out[q_lo:q_hi] = _stable_softmax((q @ k.transpose(0, 1)) * scale) @ v
    return out


def dense_oracle(chunk_q: torch.Tensor, cache: KvCache, mask: SelectionMask) -> torch.Tensor:
    """
    Masked dense attention over the whole cache.

    Logits against every stored frame are computed, non-retained frames are
    set to -inf per (query frame, head), then a max-subtracted softmax
    weights the values.

    Returns:
        [1, QF, N, H, D]
    """
    _check_chunk(chunk_q)
    layer = mask.layer
    _, query_frames, tokens, heads, dim = chunk_q.shape
    stored = cache.frame_indices(layer)
    out = torch.zeros_like(chunk_q)
    if not stored:
        return out
    keys = torch.stack([cache.rotated_key(layer, f) for f in stored], dim=0)  # [F, N, H, D]
    values = cache.values(layer, stored)
    frame_of_row = torch.as_tensor(stored, dtype=torch.int64).repeat_interleave(tokens)
    scale = 1.0 / math.sqrt(dim)

    for entry in mask.entries:
        missing = set(entry.retained) - set(stored)
        if missing:
            raise IntegrityError(f"layer {layer}: retained frames {sorted(missing)} are not in the cache")
        if not entry.retained:
            continue
        h = entry.head
        q = chunk_q[entry.batch, entry.query_frame, :, h, :]
        k = keys[:, :, h, :].reshape(-1, dim)
        v = values[:, :, h, :].reshape(-1, dim)
        logits = (q @ k.transpose(0, 1)) * scale
        keep = torch.isin(frame_of_row, torch.as_tensor(entry.retained, dtype=torch.int64))
        logits = logits.masked_fill(~keep, float("-inf"))
        out[entry.batch, entry.query_frame, :, h, :] = _stable_softmax(logits) @ v
    return out


def scatter(o_pack: torch.Tensor, segment_meta: Sequence[SegmentMeta], cu_q: torch.Tensor) -> torch.Tensor:
    """
    Place every segment's output rows back at [batch, query frame, :, head, :].

    The layout is sized from the metadata, so the order of segments does not
    matter.

    Raises:
        IntegrityError: two segments target the same slot, boundaries do
            not match O_pack, or a slot is left unwritten
    """
    if cu_q.numel() != len(segment_meta) + 1 or int(cu_q[-1]) != o_pack.shape[0]:
        raise IntegrityError("cu_q does not describe O_pack")
    lengths = torch.diff(cu_q).tolist()
    if len(set(lengths)) > 1:
        raise IntegrityError(f"query segments have unequal lengths {sorted(set(lengths))}")
    tokens = lengths[0] if lengths else 0
    batch = 1 + max((m.batch for m in segment_meta), default=-1)
    frames = 1 + max((m.query_frame for m in segment_meta), default=-1)
    heads = 1 + max((m.head for m in segment_meta), default=-1)
    out = o_pack.new_zeros((batch, frames, tokens, heads, o_pack.shape[-1]))
    written = torch.zeros((batch, frames, heads), dtype=torch.bool)
    for segment, meta in enumerate(segment_meta):
        slot = (meta.batch, meta.query_frame, meta.head)
        if written[slot]:
            raise IntegrityError(f"two segments write output slot {slot}")
        written[slot] = True
        lo, hi = int(cu_q[segment]), int(cu_q[segment + 1])
        out[meta.batch, meta.query_frame, :, meta.head, :] = o_pack[lo:hi]
    if not bool(written.all()):
        raise IntegrityError("scatter left output slots unwritten")
    return out


def repack(output: torch.Tensor, segment_meta: Iterable[SegmentMeta]) -> torch.Tensor:
    """Inverse of scatter: rows of each segment in metadata order."""
    rows: List[torch.Tensor] = [output[m.batch, m.query_frame, :, m.head, :] for m in segment_meta]
    if not rows:
        return output.new_zeros((0, output.shape[-1]))
    return torch.cat(rows, dim=0)


def packed_forward(mask: SelectionMask, chunk_q: torch.Tensor, cache: KvCache) -> torch.Tensor:
    """pack -> varlen_attention -> scatter; returns [1, QF, N, H, D]."""
    batch = pack(mask, chunk_q, cache)
    o_pack = varlen_attention(batch)
    return scatter(o_pack, batch.segment_meta, batch.cu_q)


def relative_error(actual: torch.Tensor, expected: torch.Tensor) -> float:
    """max |actual - expected| / max |expected| (absolute when expected is all zeros)."""
    diff = float((actual.to(torch.float64) - expected.to(torch.float64)).abs().max()) if actual.numel() else 0.0
    scale = float(expected.abs().max()) if expected.numel() else 0.0
    return diff / scale if scale > 0 else diff
