"""
Rolling KV cache module.

This module provides the per-layer frame (KV) and condition (cKV) caches
of a streaming session. The cache holds whole blocks and evicts the
oldest block from every layer at once when its capacity is exceeded.
"""

import logging
from collections import deque
from typing import Deque, List, NamedTuple, Tuple

import torch

from ..core.errors import CacheMismatchError

logger = logging.getLogger(__name__)


class LayerEntry(NamedTuple):
    """Keys and values one DFoT layer produced for one block."""

    keys: torch.Tensor
    values: torch.Tensor
    cond_keys: torch.Tensor
    cond_values: torch.Tensor


class CachedBlock(NamedTuple):
    index: int
    positions: torch.Tensor
    layers: List[LayerEntry]


class LayerHistory(NamedTuple):
    """Concatenated history of one layer, oldest block first."""

    keys: torch.Tensor
    values: torch.Tensor
    cond_keys: torch.Tensor
    cond_values: torch.Tensor
    positions: torch.Tensor


class KVCacheSet:
    """
    Rolling frame and condition caches for every DFoT layer.

    Args:
        depth: Number of DFoT layers.
        capacity: Maximum number of cached blocks M.
    """

    def __init__(self, depth: int, capacity: int):
        if depth < 1 or capacity < 1:
            raise ValueError(f"Invalid cache shape depth={depth}, capacity={capacity}")
        self.depth = depth
        self.capacity = capacity
        self._blocks: Deque[CachedBlock] = deque()
        self.evicted = 0

    def __len__(self) -> int:
        return len(self._blocks)

    @property
    def block_indices(self) -> List[int]:
        return [block.index for block in self._blocks]

    @property
    def frame_count(self) -> int:
        return sum(int(block.positions.shape[0]) for block in self._blocks)

    def sizes(self) -> Tuple[int, int]:
        """Return (|KV|, |cKV|) in cached frames, summed over layers."""
        kv = sum(int(e.keys.shape[-2]) for b in self._blocks for e in b.layers)
        ckv = sum(int(e.cond_keys.shape[-2]) for b in self._blocks for e in b.layers)
        return kv, ckv

    def append(self, index: int, positions: torch.Tensor, layers: List[LayerEntry]) -> None:
        """
        Cache the keys and values of one finished block, evicting the oldest
        block when more than `capacity` blocks would be held.

        Raises:
            CacheMismatchError: If the layer count differs from the cache depth
                                or frame and condition entries disagree in length.
        """
        if len(layers) != self.depth:
            raise CacheMismatchError(
                f"Got entries for {len(layers)} layers, cache depth is {self.depth}"
            )
        for entry in layers:
            if entry.keys.shape[-2] != entry.cond_keys.shape[-2]:
                raise CacheMismatchError("Frame and condition cache entries differ in length")
        self._blocks.append(CachedBlock(index, positions, [
            LayerEntry(*(t.detach() for t in entry)) for entry in layers
        ]))
        while len(self._blocks) > self.capacity:
            dropped = self._blocks.popleft()
            self.evicted += 1
            logger.debug(f"Evicted cached block {dropped.index}")
        kv, ckv = self.sizes()
        if kv != ckv:
            raise CacheMismatchError(f"Frame cache holds {kv} entries, condition cache {ckv}")

    def history(self, layer: int) -> LayerHistory:
        """
        Return the cached keys and values of one layer.

        Raises:
            CacheMismatchError: If the layer index is out of range.
        """
        if not 0 <= layer < self.depth:
            raise CacheMismatchError(f"Layer {layer} outside cache depth {self.depth}")
        entries = [block.layers[layer] for block in self._blocks]
        return LayerHistory(
            keys=torch.cat([e.keys for e in entries], dim=-2),
            values=torch.cat([e.values for e in entries], dim=-2),
            cond_keys=torch.cat([e.cond_keys for e in entries], dim=-2),
            cond_values=torch.cat([e.cond_values for e in entries], dim=-2),
            positions=self.positions(),
        )

    def positions(self) -> torch.Tensor:
        if not self._blocks:
            return torch.zeros(0, dtype=torch.long)
        return torch.cat([block.positions for block in self._blocks])

    def memory_bytes(self) -> int:
        """Bytes held by cached tensors."""
        return sum(
            t.element_size() * t.numel()
            for block in self._blocks
            for entry in block.layers
            for t in entry
        )

    def clear(self) -> None:
        self._blocks.clear()
