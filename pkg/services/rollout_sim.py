"""
Chunked autoregressive rollout simulator.

Per chunk and layer: project the hidden state to Q/K/V, append the chunk's
K/V to the cache, select history with the policy, run packed attention and
add the output projection back into the hidden state. The trajectory is the
final hidden state of every frame.
"""

from dataclasses import dataclass, field
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple

import torch

from config.run_config import RunConfig
from event_logger import log_event
from models.budgets import HeadBudgetTable
from models.errors import ConfigurationError
from models.frames import FrameTensor
from models.kv_cache import KvCache
from models.scores import SelectionMask
from runtime import rollout_guard
from services.cache_policies import DENSE_WINDOW, Policy, make_policy
from services.cost_model import mask_frame_cost
from services.packed_attention import packed_forward
from services.rope_temporal import apply_rope, rope_spec_from_settings
from services.synthetic_model import SyntheticAttentionModel
from services.synthetic_stream import make_synthetic_stream

TRACE_COLUMNS = ("chunk", "policy", "frame_cost", "cache_frames", "mean_budget_utilization", "divergence_vs_dense")


@dataclass(frozen=True)
class TraceRow:
    chunk: int
    policy: str
    frame_cost: int
    cache_frames: int
    history_frames: int
    mean_budget_utilization: float
    divergence_vs_dense: Optional[float] = None
    mean_retained: float = 0.0

    def to_csv_row(self) -> Dict[str, object]:
        return {
            "chunk": self.chunk,
            "policy": self.policy,
            "frame_cost": self.frame_cost,
            "cache_frames": self.cache_frames,
            "mean_budget_utilization": f"{self.mean_budget_utilization:.6f}",
            "divergence_vs_dense": "" if self.divergence_vs_dense is None else f"{self.divergence_vs_dense:.9e}",
        }


@dataclass
class RolloutTrace:
    """Per-chunk summary of a rollout, plus the masks when recorded."""

    policy: str
    rows: List[TraceRow] = field(default_factory=list)
    masks: List[List[SelectionMask]] = field(default_factory=list)

    @property
    def total_frame_cost(self) -> int:
        return sum(row.frame_cost for row in self.rows)

    def mask_records(self) -> List[dict]:
        """Flat JSON records of every recorded mask."""
        records = []
        for chunk, chunk_masks in enumerate(self.masks):
            for mask in chunk_masks:
                for record in mask.to_records():
                    records.append(
                        {"policy": self.policy, "chunk": chunk, **record, "generated": list(mask.generated)}
                    )
        return records


def _utilization(
    masks: Sequence[SelectionMask], policy: Policy, config: RunConfig, budgets: Optional[HeadBudgetTable]
) -> float:
    ratios = []
    for mask in masks:
        for entry in mask.entries:
            capacity = policy.capacity(config, budgets, mask.layer, entry.head)
            used = len(set(entry.retained) - set(entry.reserved))
            ratios.append(1.0 if capacity <= 0 else used / capacity)
    return sum(ratios) / len(ratios) if ratios else 0.0


def run_rollout(
    config: RunConfig,
    policy: Policy,
    num_chunks: int,
    model: Optional[SyntheticAttentionModel] = None,
    head_mask: Optional[Tuple[int, int]] = None,
    stream: Optional[List[List[FrameTensor]]] = None,
    baseline: Optional[torch.Tensor] = None,
    record_masks: bool = False,
    log: bool = True,
) -> Tuple[torch.Tensor, RolloutTrace]:
    """
    Run the synthetic chunked rollout under a policy.

    Args:
        config: run configuration
        policy: selection policy
        num_chunks: chunks to generate
        model: synthetic attention stack; built from config.seed if omitted
        head_mask: (layer, head) whose attention output is zeroed every step
        stream: chunk latents; generated from config if omitted
        baseline: dense trajectory to report per-chunk divergence against
        record_masks: keep every SelectionMask in the trace

    Returns:
        (trajectory [T, N, H, D], trace)

    Raises:
        ConfigurationError: budgeted policy without budgets, bad head index
    """
    shape = config.shape
    model = model or SyntheticAttentionModel(shape, seed=config.seed)
    model.check_head(head_mask)
    budgets = policy.resolve_budgets(config)
    chunks = stream if stream is not None else make_synthetic_stream(config, num_chunks)
    if len(chunks) < num_chunks:
        raise ConfigurationError(f"stream has {len(chunks)} chunks, rollout needs {num_chunks}")
    if baseline is not None and baseline.shape[0] < num_chunks * shape.chunk_frames:
        raise ConfigurationError("baseline trajectory is shorter than the rollout")

    rope = rope_spec_from_settings(shape.head_dim, config.rope)
    cache = KvCache(shape.num_layers, anchor_indices=policy.anchor_indices(config), rotary=partial(apply_rope, spec=rope))
    trace = RolloutTrace(policy=policy.name)
    outputs: List[torch.Tensor] = []

    with rollout_guard():
        for chunk_index, chunk in enumerate(chunks[:num_chunks]):
            for frame in chunk:
                frame.check_shape(shape)
            indices = [frame.frame_index for frame in chunk]
            policy.evict(cache, config)
            cache.begin_chunk(indices)
            history_frames = cache.num_historical(0)
            positions = torch.tensor(indices, dtype=torch.float64).view(-1, 1, 1)
            hidden = torch.stack([frame.data for frame in chunk], dim=0)
            chunk_masks: List[SelectionMask] = []

            for layer in range(shape.num_layers):
                q, k, v = model.project(layer, hidden)
                for i, frame_index in enumerate(indices):
                    cache.append(layer, FrameTensor(frame_index, k[i]), FrameTensor(frame_index, v[i]))
                q_rot = apply_rope(q, positions, rope)
                mask = policy.select(cache, layer, q_rot.unsqueeze(0), q.unsqueeze(0), config, budgets)
                attended = packed_forward(mask, q_rot.unsqueeze(0), cache)[0]
                if head_mask is not None and head_mask[0] == layer:
                    attended[:, :, head_mask[1], :] = 0.0
                hidden = hidden + model.output(layer, attended)
                chunk_masks.append(mask)

            cache.end_chunk()
            outputs.append(hidden)

            frame_cost = mask_frame_cost(chunk_masks)
            entries = sum(len(m.entries) for m in chunk_masks)
            divergence = None
            if baseline is not None:
                lo = chunk_index * shape.chunk_frames
                reference = baseline[lo : lo + len(indices)]
                divergence = float(((hidden.to(torch.float64) - reference.to(torch.float64)) ** 2).mean())
            row = TraceRow(
                chunk=chunk_index,
                policy=policy.name,
                frame_cost=frame_cost,
                cache_frames=len(cache),
                history_frames=history_frames,
                mean_budget_utilization=_utilization(chunk_masks, policy, config, budgets),
                divergence_vs_dense=divergence,
                mean_retained=frame_cost / entries if entries else 0.0,
            )
            trace.rows.append(row)
            if record_masks:
                trace.masks.append(chunk_masks)
            if log:
                log_event("rollout_chunk", policy=policy.name, chunk=chunk_index, frame_cost=frame_cost, cache_frames=len(cache))

    trajectory = torch.cat(outputs, dim=0)
    if log:
        log_event("rollout_finished", policy=policy.name, chunks=num_chunks, total_frame_cost=trace.total_frame_cost)
    return trajectory, trace


def dense_policy(config: RunConfig) -> Policy:
    """Sliding window over the model's dense_window, the comparison baseline."""
    return make_policy(DENSE_WINDOW, window=config.shape.dense_window)


def dense_trajectory(
    config: RunConfig, num_chunks: int, model: Optional[SyntheticAttentionModel] = None
) -> torch.Tensor:
    trajectory, _ = run_rollout(config, dense_policy(config), num_chunks, model=model, log=False)
    return trajectory


@dataclass(frozen=True)
class PolicySummary:
    policy: str
    total_frame_cost: int
    mean_retained_frames: float
    divergence: float
    trace: RolloutTrace


def compare_policies(
    config: RunConfig,
    policies: Sequence[Policy],
    num_chunks: int,
    model: Optional[SyntheticAttentionModel] = None,
    record_masks: bool = False,
) -> List[PolicySummary]:
    """
    Run each policy and compare it against the dense-window baseline.

    Divergence is the mean squared difference between the policy's
    trajectory and the dense one. record_masks keeps every policy's masks
    on its trace.

    Raises:
        ConfigurationError: fewer than two policies
    """
    if len(policies) < 2:
        raise ConfigurationError("compare needs at least two policies")
    model = model or SyntheticAttentionModel(config.shape, seed=config.seed)
    baseline = dense_trajectory(config, num_chunks, model)
    shape = config.shape
    per_chunk = shape.num_layers * shape.heads_per_layer * shape.chunk_frames
    summaries = []
    for policy in policies:
        trajectory, trace = run_rollout(
            config, policy, num_chunks, model=model, baseline=baseline, record_masks=record_masks
        )
        entries = len(trace.rows) * per_chunk
        summaries.append(
            PolicySummary(
                policy=policy.name,
                total_frame_cost=trace.total_frame_cost,
                mean_retained_frames=trace.total_frame_cost / entries if entries else 0.0,
                divergence=float(((trajectory.to(torch.float64) - baseline.to(torch.float64)) ** 2).mean()),
                trace=trace,
            )
        )
    return summaries

