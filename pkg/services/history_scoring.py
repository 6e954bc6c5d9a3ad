"""
Query-frame-wise scoring and selection of historical frames.

For every (batch, query frame, head) the historical frames in the KV cache
are scored by a grouped attention score and by a key diversity score; both
are standardized along the historical-frame axis, fused with weight lambda
and cut to the head's budget by Top-K. Anchors and the frames of the chunk
being generated are reserved: always retained, outside the budget.
"""

import math
from typing import Callable, List, Optional, Sequence, Union

import torch

from models.budgets import HeadBudgetTable
from models.errors import ConfigurationError, ShapeError
from models.frames import FrameTensor
from models.kv_cache import KvCache
from models.scores import (
    ATTENTION_RAW,
    DIVERSITY_RAW,
    DIVERSITY_STD,
    FUSED,
    STANDARDIZED_OF,
    FrameSelection,
    ScoreTensor,
    SelectionMask,
)

BudgetLookup = Callable[[int, int], int]


# =============================================================================
# POOLING AND RAW SCORES
# =============================================================================


def group_bounds(num_tokens: int, groups: int) -> List[tuple]:
    """Contiguous [start, stop) token range of every group."""
    return [((g * num_tokens) // groups, ((g + 1) * num_tokens) // groups) for g in range(groups)]


def group_pool_tensor(tokens: torch.Tensor, groups: int) -> torch.Tensor:
    """
    Mean-pool the token axis (dim -3) of [..., N, H, D] into [..., P, H, D].

    Raises:
        ConfigurationError: P outside [1, N]
    """
    num_tokens = tokens.shape[-3]
    if not 1 <= groups <= num_tokens:
        raise ConfigurationError(f"groups must be in [1, {num_tokens}], got {groups}")
    pooled = [tokens[..., start:stop, :, :].mean(dim=-3) for start, stop in group_bounds(num_tokens, groups)]
    return torch.stack(pooled, dim=-3)


def group_pool(frame: Union[FrameTensor, torch.Tensor], groups: int) -> torch.Tensor:
    """
    Pool one frame [N, H, D] into P contiguous token groups.

    Examples:
        N=4, P=2, scalar tokens [1, 3, 5, 7] -> groups [2, 6]
    """
    data = frame.data if isinstance(frame, FrameTensor) else frame
    if data.dim() != 3:
        raise ShapeError(f"expected one frame [N, H, D], got shape {tuple(data.shape)}")
    return group_pool_tensor(data, groups)


def attention_score(q_pooled: torch.Tensor, k_pooled: torch.Tensor, head_dim: int) -> ScoreTensor:
    """
    Frame-level attention score from pooled features.

    Args:
        q_pooled: [B, QF, P, H, D]
        k_pooled: [B, F_h, P, H, D]
        head_dim: D used for the 1/sqrt(D) scale

    Returns:
        attention_raw ScoreTensor [B, QF, H, F_h]: mean over all (u, v) group
        pairs of <Q_u, K_v> / sqrt(D)
    """
    if q_pooled.dim() != 5 or k_pooled.dim() != 5:
        raise ShapeError("pooled Q and K must be [B, frames, P, H, D]")
    if q_pooled.shape[0] != k_pooled.shape[0] or q_pooled.shape[2:] != k_pooled.shape[2:]:
        raise ShapeError(
            f"pooled Q {tuple(q_pooled.shape)} and K {tuple(k_pooled.shape)} disagree on B, P, H or D"
        )
    groups = q_pooled.shape[2]
    q64 = q_pooled.to(torch.float64)
    k64 = k_pooled.to(torch.float64)
    logits = torch.einsum("bquhd,bkvhd->bqhk", q64, k64)
    return ScoreTensor(values=logits / (groups * groups * math.sqrt(head_dim)), kind=ATTENTION_RAW)


def standardize(scores: ScoreTensor, epsilon: float) -> ScoreTensor:
    """
    Zero-mean, unit-variance rescaling along the historical-frame axis.

    Uses the population standard deviation: (x - mean) / (std + eps).
    Constant slices and slices with a single candidate map to all zeros.
    """
    kind = STANDARDIZED_OF.get(scores.kind)
    if kind is None:
        raise ShapeError(f"cannot standardize {scores.kind} scores")
    values = scores.values.to(torch.float64)
    if values.shape[-1] == 0:
        return ScoreTensor(values=values.clone(), kind=kind)
    mean = values.mean(dim=-1, keepdim=True)
    std = values.std(dim=-1, correction=0, keepdim=True)
    out = (values - mean) / (std + epsilon)
    flat = (values.amax(dim=-1, keepdim=True) == values.amin(dim=-1, keepdim=True)).expand_as(out)
    out = torch.where(flat, torch.zeros_like(out), out)
    return ScoreTensor(values=out, kind=kind)


def key_redundancy(keys: torch.Tensor, epsilon: float) -> torch.Tensor:
    """
    Token-averaged cosine similarity of every key frame to the mean key.

    Args:
        keys: [B, F_h, N, H, D], F_h >= 1

    Returns:
        [B, H, F_h] float64

    Examples:
        two frames with orthonormal keys e1, e2 -> 1/sqrt(2) for both
    """
    k64 = keys.to(torch.float64)
    mean_key = k64.mean(dim=1, keepdim=True)
    k_unit = k64 / (k64.norm(dim=-1, keepdim=True) + epsilon)
    m_unit = mean_key / (mean_key.norm(dim=-1, keepdim=True) + epsilon)
    cosine = (k_unit * m_unit).sum(dim=-1)            # [B, F_h, N, H]
    return cosine.mean(dim=2).transpose(1, 2)         # [B, H, F_h]


def diversity_score(keys: Union[Sequence[FrameTensor], torch.Tensor], epsilon: float) -> ScoreTensor:
    """
    Diversity of each historical frame as negative redundancy.

    Redundancy is the token-averaged cosine similarity between a frame's key
    and the mean historical key; both vectors are normalized with an
    eps-guarded norm. The result is standardized over frames and has a
    query-frame axis of size 1.

    Args:
        keys: historical key frames, either FrameTensors or a stacked
            [F_h, N, H, D] (or batched [B, F_h, N, H, D]) tensor
        epsilon: norm and standardization guard

    Returns:
        diversity_std ScoreTensor [B, 1, H, F_h]; F_h = 0 gives an empty tensor
    """
    if isinstance(keys, torch.Tensor):
        stacked = keys
    elif len(keys) == 0:
        return ScoreTensor(values=torch.zeros((1, 1, 0, 0), dtype=torch.float64), kind=DIVERSITY_STD)
    else:
        stacked = torch.stack([k.data for k in keys], dim=0)
    if stacked.dim() == 4:
        stacked = stacked.unsqueeze(0)
    if stacked.dim() != 5:
        raise ShapeError(f"keys must be [F_h, N, H, D] or [B, F_h, N, H, D], got {tuple(stacked.shape)}")
    batch, num_frames, _, heads, _ = stacked.shape
    if num_frames == 0:
        return ScoreTensor(values=torch.zeros((batch, 1, heads, 0), dtype=torch.float64), kind=DIVERSITY_STD)

    raw = ScoreTensor(values=(-key_redundancy(stacked, epsilon)).unsqueeze(1), kind=DIVERSITY_RAW)
    return standardize(raw, epsilon)


def broadcast(scores: ScoreTensor, query_frames: int) -> ScoreTensor:
    """Repeat a [B, 1, H, F_h] score over query_frames query frames."""
    if scores.query_frames == query_frames:
        return scores
    if scores.query_frames != 1:
        raise ShapeError(f"cannot broadcast {scores.query_frames} query frames to {query_frames}")
    values = scores.values.expand(-1, query_frames, -1, -1).clone()
    return ScoreTensor(values=values, kind=scores.kind)


def fuse_scores(attn_std: ScoreTensor, div_std: ScoreTensor, lam: float) -> ScoreTensor:
    """
    S = lam * A + (1 - lam) * D, elementwise.

    Diversity with a single query frame is broadcast to the attention layout.
    """
    if not 0.0 <= lam <= 1.0:
        raise ConfigurationError(f"lambda must be in [0, 1], got {lam}")
    div = broadcast(div_std, attn_std.query_frames) if div_std.query_frames == 1 else div_std
    if attn_std.values.shape != div.values.shape:
        raise ShapeError(
            f"attention scores {tuple(attn_std.values.shape)} and diversity scores "
            f"{tuple(div.values.shape)} differ in shape"
        )
    a = attn_std.values.to(torch.float64)
    d = div.values.to(torch.float64)
    if lam == 1.0:
        fused = a.clone()
    elif lam == 0.0:
        fused = d.clone()
    else:
        fused = lam * a + (1.0 - lam) * d
    return ScoreTensor(values=fused, kind=FUSED)


# =============================================================================
# SELECTION
# =============================================================================


def top_k_frames(scores: Sequence[float], frames: Sequence[int], k: int) -> List[int]:
    """
    The k best frames by score; ties go to the larger (more recent) frame.

    Returns every frame when there are at most k of them.
    """
    if k <= 0:
        return []
    ranked = sorted(zip(scores, frames), key=lambda pair: (-pair[0], -pair[1]))
    return [frame for _, frame in ranked[:k]]


def select_from_values(
    values: torch.Tensor,
    history: Sequence[int],
    reserved: Sequence[int],
    generated: Sequence[int],
    budget_of: BudgetLookup,
    layer: int,
) -> SelectionMask:
    """
    Top-K selection over a [B, QF, H, F_h] score array aligned with history.

    budget_of(layer, head) gives the number of non-reserved frames to keep.
    """
    if values.dim() != 4 or values.shape[-1] != len(history):
        raise ShapeError(
            f"scores {tuple(values.shape)} do not cover the {len(history)} historical frames"
        )
    reserved_set = set(reserved)
    candidate_pos = [pos for pos, frame in enumerate(history) if frame not in reserved_set]
    candidates = [history[pos] for pos in candidate_pos]
    reserved_sorted = tuple(sorted(reserved_set))
    rows = values[..., candidate_pos].tolist() if candidate_pos else None

    batch, query_frames, heads, _ = values.shape
    budgets = [budget_of(layer, h) for h in range(heads)]
    entries = []
    for b in range(batch):
        for q in range(query_frames):
            for h in range(heads):
                chosen = top_k_frames(rows[b][q][h], candidates, budgets[h]) if rows else []
                entries.append(
                    FrameSelection(
                        batch=b,
                        query_frame=q,
                        head=h,
                        retained=tuple(sorted(reserved_set.union(chosen))),
                        reserved=reserved_sorted,
                    )
                )
    return SelectionMask(layer=layer, entries=tuple(entries), generated=tuple(sorted(generated)))


def select_history(fused: ScoreTensor, budgets: HeadBudgetTable, cache: KvCache, layer: int) -> SelectionMask:
    """
    Budget-constrained Top-K selection for one layer.

    The score's last axis follows cache.historical_indices(layer). Reserved
    frames (stored anchors plus the generated chunk) are retained without
    consuming budget; with an empty history the mask holds reserved frames only.

    Raises:
        ConfigurationError: the budget table has no entry for this layer
        ShapeError: scores do not line up with the cache
    """
    budgets.budget(layer, 0)
    if fused.heads > budgets.heads:
        raise ConfigurationError(f"budget table covers {budgets.heads} heads, scores have {fused.heads}")
    return select_from_values(
        fused.values,
        history=cache.historical_indices(layer),
        reserved=sorted(cache.reserved_indices(layer)),
        generated=sorted(cache.generated_indices),
        budget_of=budgets.budget,
        layer=layer,
    )


# =============================================================================
# FULL SCORING PIPELINE
# =============================================================================


def score_history(
    chunk_q: torch.Tensor,
    cache: KvCache,
    layer: int,
    lam: float,
    groups: int,
    epsilon: float,
    rotated: bool = True,
    diversity: Optional[ScoreTensor] = None,
) -> ScoreTensor:
    """
    Fused score of every historical frame for every query frame and head.

    Args:
        chunk_q: [B, QF, N, H, D] queries, rotated iff rotated is True
        cache: KV cache holding the history of this layer
        rotated: score against RoPE-rotated keys (what attention sees)
            instead of the stored pre-RoPE keys
        diversity: precomputed diversity score to reuse

    Diversity is always computed on the stored pre-RoPE keys.
    """
    if chunk_q.dim() != 5:
        raise ShapeError(f"chunk queries must be [B, QF, N, H, D], got {tuple(chunk_q.shape)}")
    batch, query_frames, _, heads, head_dim = chunk_q.shape
    history = cache.historical_indices(layer)
    if not history:
        return ScoreTensor(values=torch.zeros((batch, query_frames, heads, 0), dtype=torch.float64), kind=FUSED)

    keys = cache.keys(layer, history, rotated=rotated)
    q_pooled = group_pool_tensor(chunk_q, groups)
    k_pooled = group_pool_tensor(keys, groups).unsqueeze(0).expand(batch, -1, -1, -1, -1)
    attn = standardize(attention_score(q_pooled, k_pooled, head_dim), epsilon)

    if diversity is None:
        raw_keys = keys if not rotated else cache.keys(layer, history)
        diversity = diversity_score(raw_keys.unsqueeze(0).expand(batch, -1, -1, -1, -1), epsilon)
    return fuse_scores(attn, diversity, lam)
