"""
Head importance estimation and KV-budget allocation.

For every prompt, one rollout per (layer, head) is run with that head's
attention output zeroed. Each masked trajectory is cut into windows, noised
at a sampled timestep and scored by the DM loss between the fake and real
score models. The mean loss per head is its importance; normalized
importances are mapped to integer budgets by

    b = round(b_min + I_norm ** gamma * (b_max - b_min))

Budgets are computed offline and frozen before inference.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import torch

from config.run_config import RunConfig, ScoreModelSettings
from config.settings import DEFAULT_HIST_BINS
from event_logger import log_event
from models.budgets import HeadBudgetTable, ImportanceTable, budget_curve, validate_budget_params
from models.errors import ConfigurationError, ShapeError
from models.frames import LatentWindow
from runtime import ensure_budgets_mutable
from services.rollout_sim import dense_policy, run_rollout
from services.score_models import ScoreModel, make_score_model, prompt_seed
from services.synthetic_model import SyntheticAttentionModel

Head = Tuple[int, int]
TimeFunction = Callable[[float], float]


def _unit(_t: float) -> float:
    return 1.0


@dataclass(frozen=True)
class DmLossConfig:
    """
    DM-loss harness parameters.

    w_t and alpha_t scale the gradient as functions of the timestep; both
    default to 1.
    """

    cfg_scale: float = 1.0
    window_length: int = 3
    num_windows: int = 2
    grad_epsilon: float = 1e-6
    normalize_gradient: bool = True
    timesteps: Tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)
    w_t: TimeFunction = field(default=_unit, compare=False)
    alpha_t: TimeFunction = field(default=_unit, compare=False)

    def __post_init__(self):
        if self.num_windows < 1:
            raise ConfigurationError(f"num_windows must be >= 1, got {self.num_windows}")
        if self.window_length < 1:
            raise ConfigurationError(f"window_length must be >= 1, got {self.window_length}")
        if self.cfg_scale < 0:
            raise ConfigurationError(f"cfg_scale must be >= 0, got {self.cfg_scale}")
        if not self.timesteps:
            raise ConfigurationError("at least one timestep is required")

    @classmethod
    def from_settings(cls, settings: ScoreModelSettings) -> "DmLossConfig":
        return cls(
            cfg_scale=settings.cfg_scale,
            window_length=settings.window_length,
            num_windows=settings.num_windows,
            grad_epsilon=settings.grad_epsilon,
            normalize_gradient=settings.normalize_gradient,
            timesteps=tuple(settings.timesteps),
        )


def apply_cfg(cond: torch.Tensor, uncond: torch.Tensor, cfg_scale: float) -> torch.Tensor:
    """cond + s * (cond - uncond)"""
    return cond + cfg_scale * (cond - uncond)


def dm_loss(
    window: LatentWindow,
    fake_pred: torch.Tensor,
    real_pred_cond: torch.Tensor,
    real_pred_uncond: torch.Tensor,
    config: DmLossConfig,
    t: float = 0.0,
) -> float:
    """
    Surrogate DM loss of one window.

    g = w_t * alpha_t * (fake - real), real = CFG(cond, uncond); with
    normalization g is divided by mean|W - real| + eps. The surrogate
    1/2 ||W - sg(W - g)||^2 equals 1/2 ||g||^2.

    Raises:
        ShapeError: predictions and window differ in shape
    """
    clean = window.frames.to(torch.float64)
    for name, tensor in (("fake", fake_pred), ("real cond", real_pred_cond), ("real uncond", real_pred_uncond)):
        if tuple(tensor.shape) != tuple(clean.shape):
            raise ShapeError(f"{name} prediction {tuple(tensor.shape)} differs from window {tuple(clean.shape)}")
    real = apply_cfg(real_pred_cond.to(torch.float64), real_pred_uncond.to(torch.float64), config.cfg_scale)
    grad = config.w_t(t) * config.alpha_t(t) * (fake_pred.to(torch.float64) - real)
    if config.normalize_gradient:
        grad = grad / ((clean - real).abs().mean() + config.grad_epsilon)
    return 0.5 * float((grad * grad).sum())


def masked_rollout(
    config: RunConfig,
    masked_head: Optional[Head],
    num_chunks: int,
    model: Optional[SyntheticAttentionModel] = None,
) -> torch.Tensor:
    """
    Dense-window rollout with one head's attention output zeroed.

    masked_head None reproduces the unmasked baseline bit for bit.

    Raises:
        ConfigurationError: invalid head index
    """
    trajectory, _ = run_rollout(
        config, dense_policy(config), num_chunks, model=model, head_mask=masked_head, log=False
    )
    return trajectory


def window_starts(num_frames: int, window_length: int, num_windows: int) -> List[int]:
    """
    Start frame of each of num_windows windows spread over the trajectory.

    Raises:
        ConfigurationError: trajectory shorter than num_windows * window_length
    """
    if num_frames < num_windows * window_length:
        raise ConfigurationError(
            f"trajectory of {num_frames} frames cannot hold {num_windows} windows of {window_length}"
        )
    stride = num_frames // num_windows
    return [r * stride for r in range(num_windows)]


def _noisy_window(clean: torch.Tensor, seed: int, window_index: int, timesteps: Sequence[float]) -> Tuple[torch.Tensor, float]:
    generator = torch.Generator().manual_seed((seed * 1_000_003 + 7 * window_index + 1) & ((1 << 63) - 1))
    t = float(timesteps[int(torch.randint(len(timesteps), (1,), generator=generator))])
    noise = torch.randn(clean.shape, generator=generator, dtype=torch.float64)
    return (1.0 - t) * clean + t * noise, t


def _head_loss(
    trajectory: torch.Tensor,
    baseline: torch.Tensor,
    prompt: str,
    seed: int,
    score_model: ScoreModel,
    loss_config: DmLossConfig,
) -> float:
    """Mean DM loss over the windows of one masked trajectory."""
    flat = trajectory.reshape(trajectory.shape[0], -1).to(torch.float64)
    flat_base = baseline.reshape(baseline.shape[0], -1).to(torch.float64)
    starts = window_starts(flat.shape[0], loss_config.window_length, loss_config.num_windows)
    total = 0.0
    for r, start in enumerate(starts):
        stop = start + loss_config.window_length
        clean = flat[start:stop]
        noisy, t = _noisy_window(clean, seed, r, loss_config.timesteps)
        window = LatentWindow(
            frames=noisy,
            prompt_id=prompt,
            window_index=r,
            metadata={"clean": clean, "baseline": flat_base[start:stop], "t": t},
        )
        fake = score_model.fake_score(window, prompt, t)
        cond = score_model.real_score(window, prompt, t)
        uncond = score_model.real_score(window, None, t)
        total += dm_loss(window.with_frames(clean), fake, cond, uncond, loss_config, t)
    return total / len(starts)


def estimate_importance(
    prompts: Sequence[str],
    config: RunConfig,
    model: Optional[SyntheticAttentionModel] = None,
    score_model: Optional[ScoreModel] = None,
    num_chunks: Optional[int] = None,
    workers: int = 1,
) -> ImportanceTable:
    """
    Mean DM loss per (layer, head) over prompts and windows.

    Args:
        prompts: prompt identifiers; each gets seed crc32(prompt) ^ config.seed.
            A repeated prompt counts once per occurrence.
        config: run configuration (shape, seed, score_model section)
        model: synthetic attention stack shared by all prompts
        score_model: defaults to the configured stand-in
        num_chunks: rollout length; defaults to the fewest chunks that hold
            every window
        workers: thread count for the masked rollouts of one prompt

    Raises:
        ConfigurationError: no prompts, or a trajectory too short for its windows
    """
    if not prompts:
        raise ConfigurationError("at least one prompt is required")
    shape = config.shape
    loss_config = DmLossConfig.from_settings(config.score_model)
    needed = loss_config.num_windows * loss_config.window_length
    if num_chunks is None:
        num_chunks = -(-needed // shape.chunk_frames)
    window_starts(num_chunks * shape.chunk_frames, loss_config.window_length, loss_config.num_windows)

    model = model or SyntheticAttentionModel(shape, seed=config.seed)
    score_model = score_model or make_score_model(config.score_model, shape, config.seed)
    heads: List[Head] = [(layer, h) for layer in range(shape.num_layers) for h in range(shape.heads_per_layer)]
    ordered = sorted(prompts)
    seeds = tuple(prompt_seed(p, config.seed) for p in ordered)

    totals = torch.zeros((shape.num_layers, shape.heads_per_layer), dtype=torch.float64)
    for prompt, seed in zip(ordered, seeds):
        run_config = config.with_seed(seed)
        baseline = masked_rollout(run_config, None, num_chunks, model)

        def score_head(head: Head) -> float:
            trajectory = masked_rollout(run_config, head, num_chunks, model)
            return _head_loss(trajectory, baseline, prompt, seed, score_model, loss_config)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                losses = list(pool.map(score_head, heads))
        else:
            losses = [score_head(head) for head in heads]
        totals += torch.tensor(losses, dtype=torch.float64).view(shape.num_layers, shape.heads_per_layer)

    table = ImportanceTable(
        scores=totals / len(ordered),
        prompts=tuple(ordered),
        num_windows=loss_config.num_windows,
        seeds=seeds,
    )
    log_event(
        "importance_estimated",
        prompts=list(ordered),
        layers=shape.num_layers,
        heads=shape.heads_per_layer,
        max_score=float(table.scores.max()),
    )
    return table


def normalize_importance(table: ImportanceTable, epsilon: float) -> torch.Tensor:
    """(I - I_min) / (I_max - I_min + eps), in [0, 1)."""
    scores = table.scores.to(torch.float64)
    low, high = scores.min(), scores.max()
    return (scores - low) / (high - low + epsilon)


def map_budgets(
    normalized: torch.Tensor,
    b_min: int,
    b_max: int,
    gamma: float,
    importance: Optional[ImportanceTable] = None,
) -> HeadBudgetTable:
    """
    Integer budget per head from normalized importance.

    Examples:
        I_norm = 0.5, gamma = 2, (4, 12) -> round(4 + 0.25 * 8) = 6

    Raises:
        ConfigurationError: invalid parameters, or a rollout is running
    """
    ensure_budgets_mutable()
    validate_budget_params(b_min, b_max, gamma)
    normalized = normalized.to(torch.float64)
    budgets = torch.tensor(
        [[budget_curve(v, b_min, b_max, gamma) for v in row] for row in normalized.tolist()],
        dtype=torch.int64,
    )
    table = HeadBudgetTable(
        budgets=budgets,
        b_min=b_min,
        b_max=b_max,
        gamma=gamma,
        normalized=normalized,
        importance=None if importance is None else importance.scores,
        seeds=() if importance is None else importance.seeds,
        prompts=() if importance is None else importance.prompts,
    )
    log_event("budgets_mapped", b_min=b_min, b_max=b_max, gamma=gamma, total=table.total())
    return table


@dataclass(frozen=True)
class ImportanceHistogram:
    edges: Tuple[float, ...]
    counts: Tuple[int, ...]
    minimum: float
    median: float
    maximum: float

    def bins(self) -> List[Tuple[float, float, int]]:
        return [(self.edges[i], self.edges[i + 1], self.counts[i]) for i in range(len(self.counts))]


def importance_histogram(scores: torch.Tensor, bins: int = DEFAULT_HIST_BINS) -> ImportanceHistogram:
    """
    Equal-width histogram of importance scores with min / median / max.

    The maximum lands in the last bin; a constant table yields one bin.
    """
    if bins < 1:
        raise ConfigurationError(f"bins must be >= 1, got {bins}")
    values = scores.reshape(-1).to(torch.float64)
    if values.numel() == 0:
        raise ConfigurationError("cannot histogram an empty table")
    low, high = float(values.min()), float(values.max())
    if low == high:
        edges: Tuple[float, ...] = (low, high)
        counts: Tuple[int, ...] = (int(values.numel()),)
    else:
        counts = tuple(int(c) for c in torch.histc(values, bins=bins, min=low, max=high).tolist())
        edges = tuple(float(e) for e in torch.linspace(low, high, bins + 1, dtype=torch.float64).tolist())
    return ImportanceHistogram(
        edges=edges,
        counts=counts,
        minimum=low,
        median=float(torch.quantile(values, 0.5)),
        maximum=high,
    )
