"""
Report writers and console formatting for the CLI commands.

All machine-readable outputs are JSON or CSV:
- rollout trace CSV: chunk, policy, frame_cost, cache_frames,
  mean_budget_utilization, divergence_vs_dense
- mask dump JSON: list of {chunk, layer, batch, head, query_frame,
  retained, reserved, generated}
- importance histogram CSV: bin_low, bin_high, count
- rope probe CSV: delta_t, logit
- sweep CSV: one row per ablation point
"""

import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple, Union

from models.budgets import HeadBudgetTable
from models.errors import SchemaValidationError
from services.head_importance import ImportanceHistogram
from services.rollout_sim import TRACE_COLUMNS, PolicySummary, RolloutTrace
from services.verification import SuiteResult

PathLike = Union[str, Path]

HISTOGRAM_COLUMNS = ("bin_low", "bin_high", "count")
ROPE_PROBE_COLUMNS = ("delta_t", "logit")


def _prepare(path: PathLike) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    return target


def write_csv(path: PathLike, columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
    target = _prepare(path)
    with target.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return target


def write_json(path: PathLike, payload: Any) -> Path:
    target = _prepare(path)
    target.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return target


# =============================================================================
# ROLLOUT
# =============================================================================


def write_trace(path: PathLike, traces: Iterable[RolloutTrace]) -> Path:
    """One CSV with the rows of every trace, in order."""
    rows = [row.to_csv_row() for trace in traces for row in trace.rows]
    return write_csv(path, TRACE_COLUMNS, rows)


def write_masks(path: PathLike, traces: Iterable[RolloutTrace]) -> Path:
    """Mask records of every trace in one JSON list; each record names its policy."""
    return write_json(path, [record for trace in traces for record in trace.mask_records()])


def load_mask_records(path: PathLike) -> List[Dict[str, Any]]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaValidationError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(payload, list):
        raise SchemaValidationError(f"{path}: mask dump must be a JSON list")
    return payload


def format_rollout_summary(trace: RolloutTrace) -> List[str]:
    rows = trace.rows
    lines = [f"📊 Rollout ({trace.policy}): {len(rows)} chunks, total frame cost {trace.total_frame_cost}"]
    for row in rows:
        divergence = "-" if row.divergence_vs_dense is None else f"{row.divergence_vs_dense:.3e}"
        lines.append(
            f"   chunk {row.chunk}: cost={row.frame_cost} cache={row.cache_frames} "
            f"util={row.mean_budget_utilization:.3f} div={divergence}"
        )
    return lines


def format_comparison(summaries: Sequence[PolicySummary]) -> List[str]:
    """Console table for compare_policies."""
    width = max(len("policy"), *(len(s.policy) for s in summaries))
    lines = [
        "📊 Policy comparison (vs dense window)",
        f"   {'policy'.ljust(width)}  {'frame cost':>10}  {'retained':>8}  {'divergence':>12}",
    ]
    for summary in summaries:
        lines.append(
            f"   {summary.policy.ljust(width)}  {summary.total_frame_cost:>10}  "
            f"{summary.mean_retained_frames:>8.2f}  {summary.divergence:>12.4e}"
        )
    return lines


# =============================================================================
# BUDGETS / HISTOGRAM
# =============================================================================


def format_budget_summary(table: HeadBudgetTable) -> List[str]:
    sums = table.layer_sums()
    return [
        f"📊 Budgets: {table.num_layers} layers x {table.heads} heads, total {table.total()}",
        f"   mean budget {table.mean_budget():.2f} in [{table.b_min}, {table.b_max}], gamma={table.gamma}",
        f"   layer sums min={min(sums)} max={max(sums)}",
    ]


def write_histogram(path: PathLike, histogram: ImportanceHistogram) -> Path:
    rows = [{"bin_low": f"{low:.9e}", "bin_high": f"{high:.9e}", "count": count} for low, high, count in histogram.bins()]
    return write_csv(path, HISTOGRAM_COLUMNS, rows)


def histogram_marker_lines(histogram: ImportanceHistogram) -> List[str]:
    """min / median / max lines drawn as markers over the histogram."""
    return [
        f"min,{histogram.minimum:.9e}",
        f"median,{histogram.median:.9e}",
        f"max,{histogram.maximum:.9e}",
    ]


def format_histogram(histogram: ImportanceHistogram) -> List[str]:
    lines = ["bin_low,bin_high,count"]
    lines.extend(f"{low:.9e},{high:.9e},{count}" for low, high, count in histogram.bins())
    lines.extend(histogram_marker_lines(histogram))
    return lines


# =============================================================================
# ROPE PROBE
# =============================================================================


def write_rope_probe(path: PathLike, profile: Sequence[Tuple[int, float]]) -> Path:
    rows = [{"delta_t": dt, "logit": f"{logit:.12e}"} for dt, logit in profile]
    return write_csv(path, ROPE_PROBE_COLUMNS, rows)


# =============================================================================
# VERIFY
# =============================================================================


def format_suite(result: SuiteResult) -> str:
    glyph = "✓" if result.passed else "✗"
    return (
        f"{glyph} {result.name}: {result.instances} instances, worst error "
        f"{result.worst_error:.3e} (tolerance {result.tolerance:g}) - {result.detail}"
    )
