"""
Score and selection types for query-frame-wise history selection.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Tuple

import torch

from models.errors import IntegrityError, SchemaValidationError, ShapeError

# Score kinds
ATTENTION_RAW = "attention_raw"
ATTENTION_STD = "attention_std"
DIVERSITY_RAW = "diversity_raw"
DIVERSITY_STD = "diversity_std"
FUSED = "fused"

SCORE_KINDS = (ATTENTION_RAW, ATTENTION_STD, DIVERSITY_RAW, DIVERSITY_STD, FUSED)
STANDARDIZED_OF = {ATTENTION_RAW: ATTENTION_STD, DIVERSITY_RAW: DIVERSITY_STD}

MASK_RECORD_KEYS = ("layer", "batch", "head", "query_frame", "retained", "reserved")


@dataclass(frozen=True, eq=False)
class ScoreTensor:
    """
    Frame scores laid out [batch, query_frames, heads, historical_frames].

    Diversity scores come out with a query-frame axis of size 1 and are
    broadcast to every query frame before fusion.
    """

    values: torch.Tensor
    kind: str

    def __post_init__(self):
        if self.kind not in SCORE_KINDS:
            raise ShapeError(f"unknown score kind {self.kind!r}")
        if self.values.dim() != 4:
            raise ShapeError(f"scores must be [B, QF, H, F_h], got shape {tuple(self.values.shape)}")
        if self.values.numel() and not torch.isfinite(self.values).all():
            raise ShapeError(f"{self.kind} scores contain non-finite values")

    @property
    def batch_size(self) -> int:
        return int(self.values.shape[0])

    @property
    def query_frames(self) -> int:
        return int(self.values.shape[1])

    @property
    def heads(self) -> int:
        return int(self.values.shape[2])

    @property
    def num_historical(self) -> int:
        return int(self.values.shape[3])


@dataclass(frozen=True)
class FrameSelection:
    """Retained historical frames for one (batch, query frame, head)."""

    batch: int
    query_frame: int
    head: int
    retained: Tuple[int, ...]
    reserved: Tuple[int, ...]


@dataclass(frozen=True)
class SelectionMask:
    """
    Per-layer selection: one FrameSelection per (batch, query frame, head).

    generated lists the current chunk's frames. They are reserved like
    anchors but are not history, so they do not count as frame cost.
    """

    layer: int
    entries: Tuple[FrameSelection, ...]
    generated: Tuple[int, ...] = ()
    _index: Dict[Tuple[int, int, int], FrameSelection] = field(default_factory=dict, init=False, compare=False, repr=False)

    def __post_init__(self):
        index = {}
        for entry in self.entries:
            key = (entry.batch, entry.query_frame, entry.head)
            if key in index:
                raise IntegrityError(f"layer {self.layer}: duplicate selection for {key}")
            index[key] = entry
        self._index.update(index)

    def lookup(self, batch: int, query_frame: int, head: int) -> FrameSelection:
        entry = self._index.get((batch, query_frame, head))
        if entry is None:
            raise IntegrityError(f"layer {self.layer}: no selection for {(batch, query_frame, head)}")
        return entry

    @property
    def heads(self) -> int:
        return 1 + max((e.head for e in self.entries), default=-1)

    @property
    def query_frames(self) -> int:
        return 1 + max((e.query_frame for e in self.entries), default=-1)

    def historical(self, entry: FrameSelection) -> Tuple[int, ...]:
        """Retained frames that come from the cache's history."""
        generated = set(self.generated)
        return tuple(i for i in entry.retained if i not in generated)

    def check(self, budgets: Optional[Any] = None) -> None:
        """
        Verify the selection invariants.

        Args:
            budgets: optional HeadBudgetTable; when given, the number of
                non-reserved retained frames must fit each head's budget

        Raises:
            IntegrityError: on the first violated invariant
        """
        for entry in self.entries:
            retained = list(entry.retained)
            if len(set(retained)) != len(retained):
                raise IntegrityError(f"layer {self.layer}: duplicate retained frames {retained}")
            if retained != sorted(retained):
                raise IntegrityError(f"layer {self.layer}: retained frames not ascending {retained}")
            missing = set(entry.reserved) - set(retained)
            if missing:
                raise IntegrityError(f"layer {self.layer}: reserved frames {sorted(missing)} not retained")
            if budgets is not None:
                extra = len(set(retained) - set(entry.reserved))
                limit = budgets.budget(self.layer, entry.head)
                if extra > limit:
                    raise IntegrityError(
                        f"layer {self.layer} head {entry.head}: {extra} selected frames exceed budget {limit}"
                    )

    def to_records(self) -> List[Dict[str, Any]]:
        return [
            {
                "layer": self.layer,
                "batch": e.batch,
                "head": e.head,
                "query_frame": e.query_frame,
                "retained": list(e.retained),
                "reserved": list(e.reserved),
            }
            for e in self.entries
        ]


def masks_from_records(records: Iterable[Dict[str, Any]], generated: Tuple[int, ...] = ()) -> List[SelectionMask]:
    """
    Rebuild per-layer masks from their JSON records.

    Records dumped by a rollout carry "policy", "chunk" and "generated"; they
    are grouped per (chunk, layer) and "generated" overrides the argument.
    Callers pass the records of one policy at a time.

    Raises:
        SchemaValidationError: malformed record
    """
    by_layer: Dict[Tuple[int, int], List[FrameSelection]] = {}
    generated_by_key: Dict[Tuple[int, int], Tuple[int, ...]] = {}
    for record in records:
        if not isinstance(record, dict):
            raise SchemaValidationError("mask record must be a JSON object")
        missing = [k for k in ("layer", "head", "query_frame", "retained", "reserved") if k not in record]
        if missing:
            raise SchemaValidationError(f"mask record missing keys: {', '.join(missing)}")
        unknown = sorted(set(record) - set(MASK_RECORD_KEYS) - {"policy", "chunk", "generated"})
        if unknown:
            raise SchemaValidationError(f"unknown mask record keys: {', '.join(unknown)}")
        key = (int(record.get("chunk", 0)), int(record["layer"]))
        by_layer.setdefault(key, []).append(
            FrameSelection(
                batch=int(record.get("batch", 0)),
                query_frame=int(record["query_frame"]),
                head=int(record["head"]),
                retained=tuple(int(i) for i in record["retained"]),
                reserved=tuple(int(i) for i in record["reserved"]),
            )
        )
        if "generated" in record:
            generated_by_key[key] = tuple(int(i) for i in record["generated"])
    return [
        SelectionMask(layer=key[1], entries=tuple(entries), generated=generated_by_key.get(key, tuple(generated)))
        for key, entries in sorted(by_layer.items())
    ]
