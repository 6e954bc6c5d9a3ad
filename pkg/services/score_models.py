"""
Stand-in score models for the head-importance harness.

Each model predicts a clean window from a noisy one:
    fake_score(window, prompt, t)        - generator-side prediction
    real_score(window, prompt or None, t) - target-side prediction; None is
                                            the unconditional branch

The harness stores the clean rollout window under metadata["clean"] and the
unmasked baseline window under metadata["baseline"].
"""

import zlib
from typing import Optional, Protocol

import torch

from config.run_config import ScoreModelSettings
from models.errors import ConfigurationError, ShapeError
from models.frames import LatentWindow, ModelShape

_SEED_MASK = (1 << 63) - 1


class ScoreModel(Protocol):
    def fake_score(self, window: LatentWindow, prompt: str, t: float) -> torch.Tensor:
        ...

    def real_score(self, window: LatentWindow, prompt: Optional[str], t: float) -> torch.Tensor:
        ...


def prompt_seed(prompt: str, seed: int) -> int:
    """Per-prompt seed, independent of the order prompts are given in."""
    return (zlib.crc32(prompt.encode("utf-8")) ^ seed) & _SEED_MASK


def _metadata_tensor(window: LatentWindow, key: str) -> torch.Tensor:
    value = window.metadata.get(key)
    if value is None:
        raise ConfigurationError(f"window {window.window_index} carries no {key!r} frames")
    if tuple(value.shape) != tuple(window.frames.shape):
        raise ShapeError(f"{key} frames {tuple(value.shape)} differ from window {tuple(window.frames.shape)}")
    return value.to(torch.float64)


class IdentityScoreModel:
    """Both branches return the clean window, so the loss is always 0."""

    def fake_score(self, window: LatentWindow, prompt: str, t: float) -> torch.Tensor:
        return self._clean(window)

    def real_score(self, window: LatentWindow, prompt: Optional[str], t: float) -> torch.Tensor:
        return self._clean(window)

    @staticmethod
    def _clean(window: LatentWindow) -> torch.Tensor:
        if "clean" in window.metadata:
            return _metadata_tensor(window, "clean")
        return window.frames.to(torch.float64)


class ReferenceScoreModel:
    """
    Fake predicts the rollout's own clean window, real predicts the
    unmasked baseline. The loss then measures how far masking moved the
    trajectory.
    """

    def fake_score(self, window: LatentWindow, prompt: str, t: float) -> torch.Tensor:
        return _metadata_tensor(window, "clean")

    def real_score(self, window: LatentWindow, prompt: Optional[str], t: float) -> torch.Tensor:
        return _metadata_tensor(window, "baseline")


class LinearScoreModel:
    """
    Real: fixed random map A applied per head_dim vector, plus a prompt bias.
    Fake: the same with A perturbed by perturbation * E.
    """

    def __init__(self, shape: ModelShape, seed: int, perturbation: float):
        dim = shape.head_dim
        generator = torch.Generator().manual_seed((seed * 31 + 0xA11CE) & _SEED_MASK)
        self.head_dim = dim
        self.seed = seed
        self.real_map = torch.randn((dim, dim), generator=generator, dtype=torch.float64) / dim ** 0.5
        noise = torch.randn((dim, dim), generator=generator, dtype=torch.float64) / dim ** 0.5
        self.fake_map = self.real_map + perturbation * noise

    def _bias(self, prompt: Optional[str], latent_dim: int) -> torch.Tensor:
        if prompt is None:
            return torch.zeros(latent_dim, dtype=torch.float64)
        generator = torch.Generator().manual_seed(prompt_seed(prompt, self.seed))
        return 0.1 * torch.randn(latent_dim, generator=generator, dtype=torch.float64)

    def _apply(self, matrix: torch.Tensor, window: LatentWindow, prompt: Optional[str]) -> torch.Tensor:
        frames = window.frames.to(torch.float64)
        length, latent_dim = frames.shape
        if latent_dim % self.head_dim != 0:
            raise ShapeError(f"latent_dim {latent_dim} is not a multiple of head_dim {self.head_dim}")
        mapped = frames.reshape(length, -1, self.head_dim) @ matrix.T
        return mapped.reshape(length, latent_dim) + self._bias(prompt, latent_dim)

    def fake_score(self, window: LatentWindow, prompt: str, t: float) -> torch.Tensor:
        return self._apply(self.fake_map, window, prompt)

    def real_score(self, window: LatentWindow, prompt: Optional[str], t: float) -> torch.Tensor:
        return self._apply(self.real_map, window, prompt)


def make_score_model(settings: ScoreModelSettings, shape: ModelShape, seed: int) -> ScoreModel:
    """Build the configured stand-in."""
    if settings.kind == "identity":
        return IdentityScoreModel()
    if settings.kind == "reference":
        return ReferenceScoreModel()
    if settings.kind == "linear":
        return LinearScoreModel(shape, seed, settings.perturbation)
    raise ConfigurationError(f"unknown score model {settings.kind!r}")
