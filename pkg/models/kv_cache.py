"""
KV cache for chunked autoregressive attention.

This module provides the KvCache class. The cache stores, per layer, the
ordered pre-RoPE keys and the values of every frame generated so far, plus the
anchor and current-chunk bookkeeping the selection step needs.

Contract: one writer appends; readers never read a layer while it is being
appended to. Appends happen between reads in the rollout loop.
"""

from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import torch

from models.errors import IntegrityError, ShapeError
from models.frames import FrameTensor

Rotary = Callable[[torch.Tensor, int], torch.Tensor]


class KvCache:
    """
    Per-layer ordered storage of historical key/value frames.

    Structure:
    {layer: [(key FrameTensor, value FrameTensor), ...]} with frame indices
    strictly increasing inside each layer.

    Keys are kept as produced by the projection (before RoPE). When a rotary
    function is given, rotated_key() applies it at the frame's own index, which
    is what the attention kernel sees.

    generated_indices are the frames of the chunk currently being produced;
    they live in the cache (the chunk attends to itself) but are not history.
    """

    def __init__(
        self,
        num_layers: int,
        anchor_indices: Iterable[int] = (),
        rotary: Optional[Rotary] = None,
    ):
        if num_layers < 1:
            raise IntegrityError("KvCache needs at least one layer")
        self.num_layers = num_layers
        self._layers: List[List[Tuple[FrameTensor, FrameTensor]]] = [[] for _ in range(num_layers)]
        self._positions: List[Dict[int, int]] = [{} for _ in range(num_layers)]
        self._configured_anchors: Set[int] = {int(i) for i in anchor_indices}
        self._generated: Set[int] = set()
        self._rotary = rotary

    # ------------------------------------------------------------------
    # Chunk bookkeeping
    # ------------------------------------------------------------------

    def begin_chunk(self, frame_indices: Sequence[int]) -> None:
        """Mark the frames of the chunk about to be appended as generated."""
        stored = self.frame_indices(0)
        if stored and min(frame_indices) <= stored[-1]:
            raise IntegrityError(
                f"chunk frames {list(frame_indices)} do not follow stored frame {stored[-1]}"
            )
        self._generated = {int(i) for i in frame_indices}

    def end_chunk(self) -> None:
        """The finished chunk becomes history."""
        self._generated = set()

    @property
    def generated_indices(self) -> Set[int]:
        return set(self._generated)

    @property
    def anchor_indices(self) -> Set[int]:
        """Configured anchors that are actually stored."""
        return {i for i in self._configured_anchors if i in self._positions[0]}

    def reserved_indices(self, layer: int) -> Set[int]:
        self._check_layer(layer)
        anchors = {i for i in self._configured_anchors if i in self._positions[layer]}
        return anchors | {i for i in self._generated if i in self._positions[layer]}

    # ------------------------------------------------------------------
    # Writes
    # ------------------------------------------------------------------

    def append(self, layer: int, key: FrameTensor, value: FrameTensor) -> None:
        """
        Append one frame's key/value to a layer.

        Raises:
            IntegrityError: index not strictly after the last stored frame
            ShapeError: key and value disagree
        """
        self._check_layer(layer)
        if key.frame_index != value.frame_index:
            raise IntegrityError(f"key frame {key.frame_index} paired with value frame {value.frame_index}")
        if key.data.shape != value.data.shape:
            raise ShapeError(f"key shape {tuple(key.data.shape)} != value shape {tuple(value.data.shape)}")
        entries = self._layers[layer]
        if entries and key.frame_index <= entries[-1][0].frame_index:
            raise IntegrityError(
                f"layer {layer}: frame {key.frame_index} does not follow frame {entries[-1][0].frame_index}"
            )
        if entries and key.data.shape != entries[-1][0].data.shape:
            raise ShapeError(f"layer {layer}: frame {key.frame_index} has a different layout than the cache")
        self._positions[layer][key.frame_index] = len(entries)
        entries.append((key, value))

    def evict(self, keep: Iterable[int]) -> List[int]:
        """
        Drop every stored frame not in keep, in all layers. Anchors always stay.

        Returns:
            The evicted frame indices (ascending)
        """
        keep_set = {int(i) for i in keep} | self._configured_anchors | self._generated
        evicted = [i for i in self.frame_indices(0) if i not in keep_set]
        if not evicted:
            return []
        for layer in range(self.num_layers):
            survivors = [(k, v) for k, v in self._layers[layer] if k.frame_index in keep_set]
            self._layers[layer] = survivors
            self._positions[layer] = {k.frame_index: pos for pos, (k, _) in enumerate(survivors)}
        return evicted

    # ------------------------------------------------------------------
    # Reads
    # ------------------------------------------------------------------

    def frame_indices(self, layer: int) -> List[int]:
        self._check_layer(layer)
        return [k.frame_index for k, _ in self._layers[layer]]

    def historical_indices(self, layer: int) -> List[int]:
        """Stored frames that are not part of the chunk being generated."""
        return [i for i in self.frame_indices(layer) if i not in self._generated]

    def num_historical(self, layer: int = 0) -> int:
        return len(self.historical_indices(layer))

    def __len__(self) -> int:
        return len(self._layers[0])

    def contains(self, layer: int, frame_index: int) -> bool:
        self._check_layer(layer)
        return frame_index in self._positions[layer]

    def key(self, layer: int, frame_index: int) -> FrameTensor:
        return self._entry(layer, frame_index)[0]

    def value(self, layer: int, frame_index: int) -> FrameTensor:
        return self._entry(layer, frame_index)[1]

    def rotated_key(self, layer: int, frame_index: int) -> torch.Tensor:
        """Key data as attention sees it: rotated at its own frame index."""
        data = self.key(layer, frame_index).data
        if self._rotary is None:
            return data
        return self._rotary(data, frame_index)

    def keys(self, layer: int, frame_indices: Sequence[int], rotated: bool = False) -> torch.Tensor:
        """Stack keys of the given frames into [F, tokens, heads, head_dim]."""
        if rotated:
            rows = [self.rotated_key(layer, i) for i in frame_indices]
        else:
            rows = [self.key(layer, i).data for i in frame_indices]
        return self._stack(layer, rows)

    def values(self, layer: int, frame_indices: Sequence[int]) -> torch.Tensor:
        return self._stack(layer, [self.value(layer, i).data for i in frame_indices])

    def _stack(self, layer: int, rows: List[torch.Tensor]) -> torch.Tensor:
        if rows:
            return torch.stack(rows, dim=0)
        entries = self._layers[layer]
        if not entries:
            raise IntegrityError(f"layer {layer} is empty; frame layout unknown")
        return entries[0][0].data.new_zeros((0, *entries[0][0].data.shape))

    def _entry(self, layer: int, frame_index: int) -> Tuple[FrameTensor, FrameTensor]:
        self._check_layer(layer)
        position = self._positions[layer].get(frame_index)
        if position is None:
            raise IntegrityError(f"layer {layer}: frame {frame_index} is not in the cache")
        return self._layers[layer][position]

    def _check_layer(self, layer: int) -> None:
        if not 0 <= layer < self.num_layers:
            raise IntegrityError(f"layer {layer} out of range [0, {self.num_layers})")
