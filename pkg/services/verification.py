"""
Randomized verification suites run by the verify command.

Each suite draws its instances from a seeded torch.Generator and reports the
worst error it saw:
- equivalence: scattered packed attention vs the dense masked oracle
- rope: closed-form temporal logit vs explicit rotation, plus the
  degenerate cases
- standardization: zero mean / unit variance and the zero-variance guard
- budgets: endpoints, monotonicity and bounds of the budget mapping
"""

import math
from dataclasses import dataclass
from functools import partial
from typing import Callable, Dict, List

import torch

from config.settings import DEFAULT_VERIFY_INSTANCES, EQUIVALENCE_TOLERANCE, ROPE_TOLERANCE
from event_logger import log_event
from models.budgets import budget_curve
from models.frames import FrameTensor
from models.kv_cache import KvCache
from models.scores import ATTENTION_RAW, ScoreTensor
from services.history_scoring import select_from_values, standardize
from services.packed_attention import dense_oracle, packed_forward, relative_error
from services.rope_temporal import (
    RopeSpec,
    active_blocks,
    apply_rope,
    default_rope_spec,
    temporal_logit_closed_form,
    temporal_logit_numeric,
)

_SEED_MASK = (1 << 63) - 1


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    instances: int
    worst_error: float
    tolerance: float
    detail: str = ""

    def to_dict(self) -> Dict[str, object]:
        return {
            "suite": self.name,
            "passed": self.passed,
            "instances": self.instances,
            "worst_error": self.worst_error,
            "tolerance": self.tolerance,
            "detail": self.detail,
        }


def _generator(seed: int, salt: int) -> torch.Generator:
    return torch.Generator().manual_seed((seed * 2_654_435_761 + salt) & _SEED_MASK)


def _randint(generator: torch.Generator, low: int, high: int) -> int:
    """Uniform integer in [low, high]."""
    return int(torch.randint(low, high + 1, (1,), generator=generator))


# =============================================================================
# PACKED / DENSE EQUIVALENCE
# =============================================================================


def random_instance(generator: torch.Generator):
    """
    A random cache, chunk query and selection mask.

    History up to 8 frames, up to 8 tokens, 4 heads and head_dim 8; the
    current chunk is appended to the cache like in a rollout.
    """
    history = _randint(generator, 0, 8)
    chunk = _randint(generator, 1, 3)
    tokens = _randint(generator, 1, 8)
    heads = _randint(generator, 1, 4)
    dim = 2 * _randint(generator, 1, 4)
    spec = default_rope_spec(dim)

    cache = KvCache(1, anchor_indices=(0,), rotary=partial(apply_rope, spec=spec))
    frames = list(range(history + chunk))
    for f in frames[:history]:
        k = torch.randn((tokens, heads, dim), generator=generator)
        v = torch.randn((tokens, heads, dim), generator=generator)
        cache.append(0, FrameTensor(f, k), FrameTensor(f, v))
    generated = frames[history:]
    cache.begin_chunk(generated)
    for f in generated:
        k = torch.randn((tokens, heads, dim), generator=generator)
        v = torch.randn((tokens, heads, dim), generator=generator)
        cache.append(0, FrameTensor(f, k), FrameTensor(f, v))

    q = torch.randn((1, chunk, tokens, heads, dim), generator=generator)
    q = apply_rope(q, torch.tensor(generated, dtype=torch.float64).view(1, -1, 1, 1), spec)
    past = cache.historical_indices(0)
    scores = torch.randn((1, chunk, heads, len(past)), generator=generator, dtype=torch.float64)
    budgets = [_randint(generator, 0, max(len(past), 1)) for _ in range(heads)]
    mask = select_from_values(
        scores,
        history=past,
        reserved=sorted(cache.reserved_indices(0)),
        generated=generated,
        budget_of=lambda _layer, head: budgets[head],
        layer=0,
    )
    return q, cache, mask


def equivalence_suite(seed: int, instances: int = DEFAULT_VERIFY_INSTANCES) -> SuiteResult:
    generator = _generator(seed, 1)
    worst = 0.0
    for _ in range(instances):
        q, cache, mask = random_instance(generator)
        worst = max(worst, relative_error(packed_forward(mask, q, cache), dense_oracle(q, cache, mask)))
    return SuiteResult(
        name="equivalence",
        passed=worst <= EQUIVALENCE_TOLERANCE,
        instances=instances,
        worst_error=worst,
        tolerance=EQUIVALENCE_TOLERANCE,
        detail="max relative error, packed vs dense oracle",
    )


# =============================================================================
# TEMPORAL ROPE
# =============================================================================


def random_rope_spec(generator: torch.Generator) -> RopeSpec:
    """Random head size, temporal block subset and distinct frequencies."""
    dim = 2 * _randint(generator, 1, 8)
    half = dim // 2
    chosen = torch.randperm(half, generator=generator)[: _randint(generator, 1, half)]
    blocks = sorted(int(j) + 1 for j in chosen)
    frequencies = (0.05 + 2.5 * torch.rand(len(blocks), generator=generator, dtype=torch.float64)).tolist()
    return default_rope_spec(dim, temporal_blocks=blocks, frequencies=frequencies)


def rope_suite(seed: int, instances: int = DEFAULT_VERIFY_INSTANCES) -> SuiteResult:
    generator = _generator(seed, 2)
    worst = 0.0
    failures: List[str] = []
    for _ in range(instances):
        spec = random_rope_spec(generator)
        q = torch.randn(spec.head_dim, generator=generator, dtype=torch.float64)
        k = torch.randn(spec.head_dim, generator=generator, dtype=torch.float64)
        t_q = _randint(generator, -64, 64)
        t_k = _randint(generator, -64, 64)
        numeric = temporal_logit_numeric(q, k, t_q, t_k, spec)
        closed = temporal_logit_closed_form(q, k, t_k - t_q, spec)
        worst = max(worst, abs(numeric - closed))

        shift = _randint(generator, -32, 32)
        worst = max(worst, abs(numeric - temporal_logit_numeric(q, k, t_q + shift, t_k + shift, spec)))

        # Case 1: no temporal offset leaves the inner product unchanged
        dims = torch.tensor(spec.temporal_dims())
        plain = float(torch.dot(q[dims], k[dims])) / math.sqrt(spec.head_dim)
        worst = max(worst, abs(temporal_logit_closed_form(q, k, 0, spec) - plain))

        # Case 2: a query with no temporal component sees no temporal logit
        q_flat = q.clone()
        q_flat[dims] = 0.0
        if temporal_logit_closed_form(q_flat, k, t_k - t_q, spec) != 0.0:
            failures.append("zero temporal component produced a non-zero logit")

        # Case 3: offsets one full turn apart give the same logit
        common = 2.0 * math.pi / spec.frequencies[spec.temporal_blocks[0]]
        aligned = default_rope_spec(
            spec.head_dim,
            temporal_blocks=spec.temporal_blocks,
            frequencies=[2.0 * math.pi * _randint(generator, 1, 3) / common for _ in spec.temporal_blocks],
        )
        dt = _randint(generator, -16, 16)
        worst = max(
            worst,
            abs(temporal_logit_closed_form(q, k, dt, aligned) - temporal_logit_closed_form(q, k, dt + common, aligned)),
        )

        # General case: some active block makes the logit vary over one period
        if active_blocks(q, k, spec):
            slowest = min(spec.frequencies.values())
            grid = torch.linspace(0.0, 2.0 * math.pi / slowest, 65, dtype=torch.float64).tolist()
            profile = [temporal_logit_closed_form(q, k, dt_, spec) for dt_ in grid]
            if max(profile) - min(profile) <= 0.0:
                failures.append("non-degenerate pair produced a constant temporal logit")

    passed = worst <= ROPE_TOLERANCE and not failures
    return SuiteResult(
        name="rope",
        passed=passed,
        instances=instances,
        worst_error=worst,
        tolerance=ROPE_TOLERANCE,
        detail="; ".join(sorted(set(failures))) or "closed form vs rotation, cases 1-3, non-degeneracy",
    )


# =============================================================================
# STANDARDIZATION
# =============================================================================


def standardization_suite(seed: int, instances: int = DEFAULT_VERIFY_INSTANCES, epsilon: float = 1e-6) -> SuiteResult:
    generator = _generator(seed, 3)
    worst = 0.0
    failures: List[str] = []
    for _ in range(instances):
        frames = _randint(generator, 1, 12)
        scale = 0.5 + 4.0 * float(torch.rand(1, generator=generator))
        values = scale * torch.randn((1, 2, 3, frames), generator=generator, dtype=torch.float64)
        if _randint(generator, 0, 9) == 0:
            values[0, 0, 0, :] = float(values[0, 0, 0, 0])
        out = standardize(ScoreTensor(values=values, kind=ATTENTION_RAW), epsilon).values
        for b in range(1):
            for q in range(2):
                for h in range(3):
                    raw = values[b, q, h]
                    std = out[b, q, h]
                    if frames == 1 or float(raw.max()) == float(raw.min()):
                        if bool((std != 0).any()):
                            failures.append("constant slice did not map to zeros")
                        continue
                    worst = max(worst, abs(float(std.mean())) / 1e-4, abs(float(std.var(correction=0)) - 1.0) / 1e-3)
    return SuiteResult(
        name="standardization",
        passed=worst <= 1.0 and not failures,
        instances=instances,
        worst_error=worst,
        tolerance=1.0,
        detail="; ".join(sorted(set(failures))) or "worst error relative to the mean / variance tolerances",
    )


# =============================================================================
# BUDGET MAPPING
# =============================================================================


def budget_suite(seed: int, instances: int = DEFAULT_VERIFY_INSTANCES) -> SuiteResult:
    generator = _generator(seed, 4)
    failures: List[str] = []
    if budget_curve(0.5, 4, 12, 2.0) != 6:
        failures.append("worked example (0.5, 4, 12, gamma 2) is not 6")
    for _ in range(instances):
        b_min = _randint(generator, 0, 10)
        b_max = b_min + _randint(generator, 0, 16)
        gamma = 0.25 + 4.0 * float(torch.rand(1, generator=generator))
        if budget_curve(0.0, b_min, b_max, gamma) != b_min or budget_curve(1.0, b_min, b_max, gamma) != b_max:
            failures.append("endpoints not exact")
        points = sorted(torch.rand(16, generator=generator, dtype=torch.float64).tolist())
        budgets = [budget_curve(p, b_min, b_max, gamma) for p in points]
        if budgets != sorted(budgets):
            failures.append("mapping not monotone")
        if any(not b_min <= b <= b_max for b in budgets):
            failures.append("budget outside [b_min, b_max]")
    return SuiteResult(
        name="budgets",
        passed=not failures,
        instances=instances,
        worst_error=float(len(failures)),
        tolerance=0.0,
        detail="; ".join(sorted(set(failures))) or "endpoints, monotonicity, bounds",
    )


SUITES: Dict[str, Callable[..., SuiteResult]] = {
    "equivalence": equivalence_suite,
    "rope": rope_suite,
    "standardization": standardization_suite,
    "budgets": budget_suite,
}


def run_verification(seed: int, instances: int = DEFAULT_VERIFY_INSTANCES, suites=None) -> List[SuiteResult]:
    """Run the named suites (all by default) and log one event per suite."""
    results = []
    for name in suites or SUITES:
        result = SUITES[name](seed, instances)
        log_event("verify_suite", **result.to_dict())
        results.append(result)
    return results
