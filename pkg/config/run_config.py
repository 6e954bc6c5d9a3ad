"""
RunConfig: the JSON configuration of one engine run.

Schema (every key except "shape" is optional; unknown keys are rejected):

{
  "shape": {"num_layers", "heads_per_layer", "head_dim", "tokens_per_frame",
            "chunk_frames", "dense_window"},
  "lambda": 0.5, "groups": 4, "b_min": 4, "b_max": 12, "gamma": 2.0,
  "epsilon": 1e-6, "seed": 0, "anchors": [0], "score_on_rotated": true,
  "redundancy": {"mode": "iid" | "duplicate" | "static-region", "period": 2},
  "rope": {"temporal_blocks": [1, 2, ...] | null, "base": 10000.0,
           "frequencies": [...] | null},
  "score_model": {"kind": "linear" | "identity" | "reference", "perturbation": 0.1,
                  "cfg_scale": 1.0, "window_length": 3, "num_windows": 2,
                  "timesteps": [...], "normalize_gradient": true, "grad_epsilon": 1e-6}
}
"""

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from config.settings import (
    DEFAULT_ANCHORS,
    DEFAULT_B_MAX,
    DEFAULT_B_MIN,
    DEFAULT_CFG_SCALE,
    DEFAULT_CONFIG_PATH,
    DEFAULT_EPSILON,
    DEFAULT_GAMMA,
    DEFAULT_GROUPS,
    DEFAULT_LAMBDA,
    DEFAULT_NUM_WINDOWS,
    DEFAULT_REDUNDANCY_PERIOD,
    DEFAULT_ROPE_BASE,
    DEFAULT_SCORE_PERTURBATION,
    DEFAULT_SEED,
    DEFAULT_TIMESTEPS,
    DEFAULT_WINDOW_LENGTH,
    REDUNDANCY_MODES,
)
from models.budgets import validate_budget_params
from models.errors import ConfigurationError, SchemaValidationError
from models.frames import ModelShape
from models.schema import expect_bool, expect_float, expect_int, expect_list, expect_str

SCORE_MODEL_KINDS = ("linear", "identity", "reference")


@dataclass(frozen=True)
class RedundancySettings:
    """How the synthetic stream injects repeated content."""

    mode: str = "iid"
    period: int = DEFAULT_REDUNDANCY_PERIOD

    def __post_init__(self):
        if self.mode not in REDUNDANCY_MODES:
            raise ConfigurationError(f"redundancy.mode must be one of {REDUNDANCY_MODES}, got {self.mode!r}")
        if self.period < 1:
            raise ConfigurationError(f"redundancy.period must be >= 1, got {self.period}")


@dataclass(frozen=True)
class RopeSettings:
    """Temporal rotary blocks (1-based); None means every block of the head."""

    temporal_blocks: Optional[Tuple[int, ...]] = None
    base: float = DEFAULT_ROPE_BASE
    frequencies: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.base <= 0:
            raise ConfigurationError(f"rope.base must be > 0, got {self.base}")
        if self.frequencies is not None and self.temporal_blocks is not None:
            if len(self.frequencies) != len(self.temporal_blocks):
                raise ConfigurationError("rope.frequencies must have one entry per temporal block")


@dataclass(frozen=True)
class ScoreModelSettings:
    """Stand-in score models and DM-loss harness parameters."""

    kind: str = "linear"
    perturbation: float = DEFAULT_SCORE_PERTURBATION
    cfg_scale: float = DEFAULT_CFG_SCALE
    window_length: int = DEFAULT_WINDOW_LENGTH
    num_windows: int = DEFAULT_NUM_WINDOWS
    timesteps: Tuple[float, ...] = DEFAULT_TIMESTEPS
    normalize_gradient: bool = True
    grad_epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.kind not in SCORE_MODEL_KINDS:
            raise ConfigurationError(f"score_model.kind must be one of {SCORE_MODEL_KINDS}, got {self.kind!r}")
        if self.cfg_scale < 0:
            raise ConfigurationError(f"score_model.cfg_scale must be >= 0, got {self.cfg_scale}")
        if self.window_length < 1:
            raise ConfigurationError(f"score_model.window_length must be >= 1, got {self.window_length}")
        if self.num_windows < 1:
            raise ConfigurationError(f"score_model.num_windows must be >= 1, got {self.num_windows}")
        if not self.timesteps or any(not 0.0 <= t < 1.0 for t in self.timesteps):
            raise ConfigurationError("score_model.timesteps must be a non-empty list in [0, 1)")
        if self.grad_epsilon <= 0:
            raise ConfigurationError(f"score_model.grad_epsilon must be > 0, got {self.grad_epsilon}")


@dataclass(frozen=True)
class RunConfig:
    """
    Parameters of one engine run.

    lam weights the attention score against the diversity score; groups is
    the number of token groups per frame used for pooled attention scoring.
    """

    shape: ModelShape
    lam: float = DEFAULT_LAMBDA
    groups: int = DEFAULT_GROUPS
    b_min: int = DEFAULT_B_MIN
    b_max: int = DEFAULT_B_MAX
    gamma: float = DEFAULT_GAMMA
    epsilon: float = DEFAULT_EPSILON
    seed: int = DEFAULT_SEED
    anchors: Tuple[int, ...] = DEFAULT_ANCHORS
    score_on_rotated: bool = True
    redundancy: RedundancySettings = field(default_factory=RedundancySettings)
    rope: RopeSettings = field(default_factory=RopeSettings)
    score_model: ScoreModelSettings = field(default_factory=ScoreModelSettings)

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError(f"lambda must be in [0, 1], got {self.lam}")
        if not 1 <= self.groups <= self.shape.tokens_per_frame:
            raise ConfigurationError(
                f"groups must be in [1, {self.shape.tokens_per_frame}], got {self.groups}"
            )
        validate_budget_params(self.b_min, self.b_max, self.gamma)
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be > 0, got {self.epsilon}")
        if any(a < 0 for a in self.anchors):
            raise ConfigurationError(f"anchors must be frame indices >= 0, got {list(self.anchors)}")
        blocks = self.rope.temporal_blocks
        half = self.shape.head_dim // 2
        if blocks is not None and any(not 1 <= j <= half for j in blocks):
            raise ConfigurationError(f"rope.temporal_blocks must lie in [1, {half}]")

    def with_seed(self, seed: Optional[int]) -> "RunConfig":
        """--seed overrides the configured seed everywhere."""
        if seed is None:
            return self
        return replace(self, seed=int(seed))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "shape": self.shape.to_dict(),
            "lambda": self.lam,
            "groups": self.groups,
            "b_min": self.b_min,
            "b_max": self.b_max,
            "gamma": self.gamma,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "anchors": list(self.anchors),
            "score_on_rotated": self.score_on_rotated,
            "redundancy": {"mode": self.redundancy.mode, "period": self.redundancy.period},
            "rope": {
                "temporal_blocks": None if self.rope.temporal_blocks is None else list(self.rope.temporal_blocks),
                "base": self.rope.base,
                "frequencies": None if self.rope.frequencies is None else list(self.rope.frequencies),
            },
            "score_model": {
                "kind": self.score_model.kind,
                "perturbation": self.score_model.perturbation,
                "cfg_scale": self.score_model.cfg_scale,
                "window_length": self.score_model.window_length,
                "num_windows": self.score_model.num_windows,
                "timesteps": list(self.score_model.timesteps),
                "normalize_gradient": self.score_model.normalize_gradient,
                "grad_epsilon": self.score_model.grad_epsilon,
            },
        }


_TOP_LEVEL = {
    "shape", "lambda", "groups", "b_min", "b_max", "gamma", "epsilon", "seed",
    "anchors", "score_on_rotated", "redundancy", "rope", "score_model",
}
_REDUNDANCY = {"mode", "period"}
_ROPE = {"temporal_blocks", "base", "frequencies"}
_SCORE_MODEL = {
    "kind", "perturbation", "cfg_scale", "window_length", "num_windows",
    "timesteps", "normalize_gradient", "grad_epsilon",
}


def _check_keys(raw: Any, allowed: set, where: str) -> Dict[str, Any]:
    if not isinstance(raw, dict):
        raise SchemaValidationError(f"{where} must be a JSON object")
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise SchemaValidationError(f"unknown {where} keys: {', '.join(unknown)}")
    return raw


def _tuple_or_none(value: Any, read, where: str):
    if value is None:
        return None
    if not isinstance(value, list):
        raise SchemaValidationError(f"{where} must be a list or null")
    return tuple(expect_list(value, read, where))


def _section(raw: Dict[str, Any], fields: Tuple[Tuple[str, Any], ...], where: str) -> Dict[str, Any]:
    """Read the present keys of one section with their typed readers."""
    return {key: read(raw[key], f"{where}.{key}" if where else key) for key, read in fields if key in raw}


def run_config_from_dict(raw: Dict[str, Any]) -> RunConfig:
    """
    Build a RunConfig from its parsed JSON form.

    Raises:
        SchemaValidationError: unknown keys or wrong types
        ConfigurationError: values out of range
    """
    _check_keys(raw, _TOP_LEVEL, "config")
    if "shape" not in raw:
        raise SchemaValidationError("config is missing 'shape'")
    kwargs: Dict[str, Any] = {"shape": ModelShape.from_dict(raw["shape"])}

    top = _section(
        raw,
        (
            ("lambda", expect_float),
            ("groups", expect_int),
            ("b_min", expect_int),
            ("b_max", expect_int),
            ("gamma", expect_float),
            ("epsilon", expect_float),
            ("seed", expect_int),
            ("score_on_rotated", expect_bool),
        ),
        "",
    )
    if "lambda" in top:
        top["lam"] = top.pop("lambda")
    kwargs.update(top)

    if "anchors" in raw:
        kwargs["anchors"] = _tuple_or_none(raw["anchors"], expect_int, "anchors") or ()

    if "redundancy" in raw:
        red = _check_keys(raw["redundancy"], _REDUNDANCY, "redundancy")
        kwargs["redundancy"] = RedundancySettings(
            **_section(red, (("mode", expect_str), ("period", expect_int)), "redundancy")
        )

    if "rope" in raw:
        rope = _check_keys(raw["rope"], _ROPE, "rope")
        kwargs["rope"] = RopeSettings(
            temporal_blocks=_tuple_or_none(rope.get("temporal_blocks"), expect_int, "rope.temporal_blocks"),
            frequencies=_tuple_or_none(rope.get("frequencies"), expect_float, "rope.frequencies"),
            **_section(rope, (("base", expect_float),), "rope"),
        )

    if "score_model" in raw:
        sm = _check_keys(raw["score_model"], _SCORE_MODEL, "score_model")
        fields = _section(
            sm,
            (
                ("kind", expect_str),
                ("perturbation", expect_float),
                ("cfg_scale", expect_float),
                ("window_length", expect_int),
                ("num_windows", expect_int),
                ("normalize_gradient", expect_bool),
                ("grad_epsilon", expect_float),
            ),
            "score_model",
        )
        timesteps = _tuple_or_none(sm.get("timesteps"), expect_float, "score_model.timesteps")
        if timesteps:
            fields["timesteps"] = timesteps
        kwargs["score_model"] = ScoreModelSettings(**fields)

    return RunConfig(**kwargs)


def load_run_config(path: Optional[Union[str, Path]] = None, seed: Optional[int] = None) -> RunConfig:
    """
    Load a RunConfig JSON file.

    Args:
        path: config file; falls back to FOCUSED_KV_CONFIG from the environment
        seed: optional override of the configured seed

    Raises:
        ConfigurationError: no path given and none configured
        SchemaValidationError: the file is not valid JSON or not a valid config
        OSError: the file cannot be read
    """
    resolved = path or DEFAULT_CONFIG_PATH
    if not resolved:
        raise ConfigurationError("no config given; pass --config or set FOCUSED_KV_CONFIG")
    text = Path(resolved).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaValidationError(f"{resolved}: not valid JSON ({exc})") from exc
    return run_config_from_dict(raw).with_seed(seed)
