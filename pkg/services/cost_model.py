"""
Frame-level attention cost and extra packing memory.

Cost is counted in frame units: one (layer, head, query frame, key frame)
interaction. For a budget table b[l, h]:

    C_pack  = QF * sum(b)
    C_dense = L * H * QF * F_dense

Packing memory per layer l with S_l = sum_h b[l, h]:

    M_Q        = QF * H * N * D * s
    M_KV(l)    = 2 * QF * S_l * N * D * s
    M_pack(l)  = M_Q + M_KV(l)

Byte counts are exact integers (the average is an exact fraction). MiB
figures are rounded half-up to two decimals with 1 MiB = 1048576 bytes;
M_pack in MiB is the sum of the rounded M_Q and M_KV terms, and the average
layer uses S_avg rounded to two decimals.
"""

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Any, Dict, Iterable, List, Tuple, Union

from config.settings import BYTES_PER_ELEMENT, BYTES_PER_MIB
from event_logger import log_event
from models.budgets import HeadBudgetTable
from models.errors import ConfigurationError
from models.frames import ModelShape
from models.scores import SelectionMask

Number = Union[int, Fraction]


def round_decimal(value: Number, places: int) -> Decimal:
    """Half-up rounding of an exact value to a fixed number of decimals."""
    exact = Fraction(value)
    quantum = Decimal(1).scaleb(-places)
    return (Decimal(exact.numerator) / Decimal(exact.denominator)).quantize(quantum, rounding=ROUND_HALF_UP)


def to_mib(num_bytes: Number) -> Decimal:
    return round_decimal(Fraction(num_bytes) / BYTES_PER_MIB, 2)


@dataclass(frozen=True)
class FrameCost:
    c_pack: int
    c_dense: int

    @property
    def ratio(self) -> float:
        return self.c_pack / self.c_dense

    @property
    def speedup(self) -> float:
        return self.c_dense / self.c_pack if self.c_pack else float("inf")


@dataclass(frozen=True)
class MemoryOverhead:
    """Per-layer packing memory; bytes are exact."""

    m_q_bytes: int
    m_kv_bytes: Tuple[int, ...]
    block_bytes: int
    kv_unit_bytes: int

    @property
    def m_pack_bytes(self) -> Tuple[int, ...]:
        return tuple(self.m_q_bytes + kv for kv in self.m_kv_bytes)

    @property
    def m_pack_min(self) -> int:
        return min(self.m_pack_bytes)

    @property
    def m_pack_max(self) -> int:
        return max(self.m_pack_bytes)

    @property
    def m_pack_avg(self) -> Fraction:
        return Fraction(sum(self.m_pack_bytes), len(self.m_pack_bytes))

    def m_pack_mib(self, layer_sum: Number) -> Decimal:
        """M_pack in MiB for a layer budget sum: rounded M_Q plus rounded M_KV."""
        return to_mib(self.m_q_bytes) + to_mib(self.kv_unit_bytes * Fraction(layer_sum))


@dataclass(frozen=True)
class CostReport:
    """Frame cost, memory overhead and the budget sums they come from."""

    shape: ModelShape
    bytes_per_element: int
    frame: FrameCost
    memory: MemoryOverhead
    layer_sums: Tuple[int, ...]

    @property
    def s_min(self) -> int:
        return min(self.layer_sums)

    @property
    def s_max(self) -> int:
        return max(self.layer_sums)

    @property
    def s_avg(self) -> Fraction:
        return Fraction(sum(self.layer_sums), len(self.layer_sums))

    @property
    def token_flops_pack(self) -> int:
        """Derived figure: frame units x N^2 x D."""
        return self.frame.c_pack * self.shape.tokens_per_frame ** 2 * self.shape.head_dim

    @property
    def token_flops_dense(self) -> int:
        return self.frame.c_dense * self.shape.tokens_per_frame ** 2 * self.shape.head_dim

    def to_dict(self) -> Dict[str, Any]:
        memory = self.memory
        return {
            "c_pack": self.frame.c_pack,
            "c_dense": self.frame.c_dense,
            "ratio": float(round_decimal(Fraction(self.frame.c_pack, self.frame.c_dense), 3)),
            "theoretical_speedup": float(round_decimal(Fraction(self.frame.c_dense, max(self.frame.c_pack, 1)), 2)),
            "layer_sums": list(self.layer_sums),
            "s_min": self.s_min,
            "s_avg": float(round_decimal(self.s_avg, 2)),
            "s_max": self.s_max,
            "bytes_per_element": self.bytes_per_element,
            "m_q_bytes": memory.m_q_bytes,
            "m_q_mib": float(to_mib(memory.m_q_bytes)),
            "block_bytes": memory.block_bytes,
            "block_mib": float(round_decimal(Fraction(memory.block_bytes, BYTES_PER_MIB), 3)),
            "m_pack_bytes": {
                "min": memory.m_pack_min,
                "avg": float(memory.m_pack_avg),
                "max": memory.m_pack_max,
            },
            "m_pack_mib": {
                "min": float(memory.m_pack_mib(self.s_min)),
                "avg": float(memory.m_pack_mib(Fraction(round_decimal(self.s_avg, 2)))),
                "max": float(memory.m_pack_mib(self.s_max)),
            },
            "token_flops_pack": self.token_flops_pack,
            "token_flops_dense": self.token_flops_dense,
        }


def _check_table(budgets: HeadBudgetTable, shape: ModelShape) -> None:
    if (budgets.num_layers, budgets.heads) != (shape.num_layers, shape.heads_per_layer):
        raise ConfigurationError(
            f"budget table is {budgets.num_layers}x{budgets.heads}, model is "
            f"{shape.num_layers}x{shape.heads_per_layer}"
        )


def dense_frame_cost(shape: ModelShape) -> int:
    return shape.num_layers * shape.heads_per_layer * shape.chunk_frames * shape.dense_window


def frame_cost(budgets: HeadBudgetTable, shape: ModelShape) -> FrameCost:
    """
    Packed and dense frame-level cost of a budget table.

    Examples:
        sum(b) = 1958, QF = 3 -> c_pack = 5874
        L=30, H=12, QF=3, F_dense=21 -> c_dense = 22680, ratio 0.259
    """
    _check_table(budgets, shape)
    return FrameCost(c_pack=shape.chunk_frames * budgets.total(), c_dense=dense_frame_cost(shape))


def mask_frame_cost(masks: Iterable[SelectionMask]) -> int:
    """Frame units actually attended: retained history (anchors included, current chunk excluded)."""
    return sum(len(mask.historical(entry)) for mask in masks for entry in mask.entries)


def frame_cost_from_masks(masks: Iterable[SelectionMask], shape: ModelShape) -> FrameCost:
    return FrameCost(c_pack=mask_frame_cost(masks), c_dense=dense_frame_cost(shape))


def memory_overhead(
    budgets: HeadBudgetTable, shape: ModelShape, bytes_per_element: int = BYTES_PER_ELEMENT
) -> MemoryOverhead:
    """
    Extra memory of the packed Q/K/V buffers.

    Examples:
        N=1560, D=128, s=2, QF=3, H=12 -> M_Q = 14,376,960 bytes (13.71 MiB)
        S_l = 61 -> M_pack = 153.10 MiB; S_l = 72 -> 178.24 MiB
    """
    if bytes_per_element < 1:
        raise ConfigurationError(f"bytes_per_element must be >= 1, got {bytes_per_element}")
    _check_table(budgets, shape)
    block = shape.tokens_per_frame * shape.head_dim * bytes_per_element
    m_q = shape.chunk_frames * shape.heads_per_layer * block
    m_kv = tuple(2 * shape.chunk_frames * s_l * block for s_l in budgets.layer_sums())
    return MemoryOverhead(
        m_q_bytes=m_q,
        m_kv_bytes=m_kv,
        block_bytes=block,
        kv_unit_bytes=2 * shape.chunk_frames * block,
    )


def cost_report(
    budgets: HeadBudgetTable, shape: ModelShape, bytes_per_element: int = BYTES_PER_ELEMENT
) -> CostReport:
    report = CostReport(
        shape=shape,
        bytes_per_element=bytes_per_element,
        frame=frame_cost(budgets, shape),
        memory=memory_overhead(budgets, shape, bytes_per_element),
        layer_sums=tuple(budgets.layer_sums()),
    )
    log_event("cost_report", c_pack=report.frame.c_pack, c_dense=report.frame.c_dense, ratio=report.frame.ratio)
    return report


def format_cost_table(report: CostReport) -> List[str]:
    """Human-readable lines for the cost command."""
    data = report.to_dict()
    mib = data["m_pack_mib"]
    return [
        "📊 Frame-level attention cost",
        f"   c_pack={data['c_pack']}  c_dense={data['c_dense']}",
        f"   ratio={data['ratio']:.3f}  theoretical speedup={data['theoretical_speedup']:.2f}x",
        f"   layer sums: min={data['s_min']}  avg={data['s_avg']:.2f}  max={data['s_max']}",
        "💾 Extra packing memory",
        f"   M_Q={data['m_q_bytes']} bytes ({data['m_q_mib']:.2f} MiB)",
        f"   one frame, one head: {data['block_bytes']} bytes ({data['block_mib']:.3f} MiB)",
        f"   M_pack min/avg/max = {mib['min']:.2f} / {mib['avg']:.2f} / {mib['max']:.2f} MiB",
        "ℹ️ Token-level FLOPs (derived: frame units x N^2 x D)",
        f"   packed={data['token_flops_pack']}  dense={data['token_flops_dense']}",
    ]
