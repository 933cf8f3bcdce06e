"""
Causal DFoT stack.

Transformer blocks with a shared AdaLN time modulation, self-attention
under the blockwise look-ahead mask and cross-attention to the unified
condition under the sliding-window mask.

Keys of frames in future blocks admitted by the look-ahead come from the
layer-0 token embedding, keys of the current and past blocks from the
layer's hidden state. A block's output at any depth therefore depends
only on inputs of blocks up to its look-ahead.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import torch
from torch import nn

from ..core.config import ModelConfig
from ..core.masking import (
    build_mask,
    history_allowed,
    past_region,
    sliding_window_allowed,
)
from ..sampling.cache import KVCacheSet, LayerEntry, LayerHistory
from .attention import CrossAttention, SelfAttention, modulate


@dataclass
class AttentionPlan:
    """
    Masks and positions of one forward pass.

    Self-attention columns are ordered [cached history, current hidden
    states, current layer-0 embeddings]; the last group is present only
    when `embedding_keys` is set. Cross-attention columns are ordered
    [cached condition history, current condition].
    """

    positions: torch.Tensor
    self_allowed: torch.Tensor
    cross_allowed: torch.Tensor
    embedding_keys: bool = False


def _segment_masks(config: ModelConfig, n: int) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    """Split the configured mask of a block-aligned segment into hidden and embedding parts."""
    rel = torch.arange(n)
    allowed = build_mask(
        config.mask_kind, n, config.block_size, config.look_ahead, config.lookahead_unit
    ).allowed
    past = past_region(rel, rel, config.effective_block_size)
    hidden = allowed & past
    future = allowed & ~past
    return hidden, (future if bool(future.any()) else None)


def window_plan(config: ModelConfig, n: int, start: int = 0) -> AttentionPlan:
    """Plan for a cache-free forward over a block-aligned window."""
    positions = torch.arange(start, start + n)
    hidden, future = _segment_masks(config, n)
    self_allowed = hidden if future is None else torch.cat([hidden, future], dim=-1)
    return AttentionPlan(
        positions=positions,
        self_allowed=self_allowed,
        cross_allowed=sliding_window_allowed(positions, positions, config.cond_window),
        embedding_keys=future is not None,
    )


def cached_plan(
    config: ModelConfig, n: int, start: int, history_positions: torch.Tensor
) -> AttentionPlan:
    """Plan for a forward over the current segment on top of cached history."""
    positions = torch.arange(start, start + n)
    hidden, future = _segment_masks(config, n)
    history = torch.ones(n, history_positions.shape[0], dtype=torch.bool)
    groups = [history, hidden] + ([future] if future is not None else [])
    cond_positions = torch.cat([history_positions, positions])
    return AttentionPlan(
        positions=positions,
        self_allowed=torch.cat(groups, dim=-1),
        cross_allowed=sliding_window_allowed(positions, cond_positions, config.cond_window),
        embedding_keys=future is not None,
    )


def banded_plan(config: ModelConfig, n: int, history_blocks: int) -> AttentionPlan:
    """
    Plan of the rolling-cache semantics without a cache: each block sees
    itself and its `history_blocks` predecessors, never a later block.
    """
    positions = torch.arange(n)
    hidden, _ = _segment_masks(config, n)
    band = history_allowed(positions, positions, config.block_size, history_blocks)
    window = sliding_window_allowed(positions, positions, config.cond_window)
    return AttentionPlan(
        positions=positions,
        self_allowed=hidden & band,
        cross_allowed=window & band,
        embedding_keys=False,
    )


class TimeEmbedding(nn.Module):
    """
    Shared AdaLN coefficient generator.

    Maps per-frame flow times to six width-h coefficient vectors (shift,
    scale and gate for self-attention and for the feed-forward sublayer)
    used by every DFoT block.
    """

    def __init__(self, freq_dim: int, width: int):
        super().__init__()
        self.freq_dim = freq_dim
        self.mlp = nn.Sequential(
            nn.Linear(freq_dim, width),
            nn.SiLU(),
            nn.Linear(width, 6 * width),
        )

    def features(self, times: torch.Tensor) -> torch.Tensor:
        half = self.freq_dim // 2
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=times.dtype) / half
        )
        args = 1000.0 * times[..., None] * freqs
        return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)

    def forward(self, times: torch.Tensor) -> torch.Tensor:
        return self.mlp(self.features(times))


class DFoTBlock(nn.Module):
    """One DFoT transformer block."""

    def __init__(self, width: int, heads: int, ffn_mult: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(width, elementwise_affine=False)
        self.attn = SelfAttention(width, heads)
        self.norm_cond = nn.LayerNorm(width, elementwise_affine=False)
        self.cross = CrossAttention(width, width, heads)
        self.norm2 = nn.LayerNorm(width, elementwise_affine=False)
        self.ffn = nn.Sequential(
            nn.Linear(width, ffn_mult * width),
            nn.GELU(),
            nn.Linear(ffn_mult * width, width),
        )

    def forward(
        self,
        x: torch.Tensor,
        x0: torch.Tensor,
        modulation: torch.Tensor,
        cond: torch.Tensor,
        plan: AttentionPlan,
        history: Optional[LayerHistory] = None,
    ) -> Tuple[torch.Tensor, LayerEntry]:
        shift1, scale1, gate1, shift2, scale2, gate2 = modulation.chunk(6, dim=-1)

        q, k, v = self.attn.project(modulate(self.norm1(x), shift1, scale1))
        keys, values, key_positions = [k], [v], [plan.positions]
        if history is not None:
            keys.insert(0, history.keys)
            values.insert(0, history.values)
            key_positions.insert(0, history.positions)
        if plan.embedding_keys:
            _, k0, v0 = self.attn.project(modulate(self.norm1(x0), shift1, scale1))
            keys.append(k0)
            values.append(v0)
            key_positions.append(plan.positions)
        attended = self.attn.attend(
            q,
            torch.cat(keys, dim=-2),
            torch.cat(values, dim=-2),
            plan.self_allowed,
            plan.positions,
            torch.cat(key_positions),
        )
        x = x + gate1 * attended

        ck, cv = self.cross.key_values(cond)
        cond_keys, cond_values = ck, cv
        if history is not None:
            cond_keys = torch.cat([history.cond_keys, ck], dim=-2)
            cond_values = torch.cat([history.cond_values, cv], dim=-2)
        x = x + self.cross.attend(self.norm_cond(x), cond_keys, cond_values, plan.cross_allowed)

        x = x + gate2 * self.ffn(modulate(self.norm2(x), shift2, scale2))
        return x, LayerEntry(k, v, ck, cv)


class CausalDFoT(nn.Module):
    """
    The DFoT stack: input projection of [noisy ; m_S], shared time
    modulation, `depth` blocks and a zero-initialised output head.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        width = config.width
        self.input = nn.Linear(2 * config.latent_dim, width)
        self.time = TimeEmbedding(config.time_freq_dim, width)
        self.blocks = nn.ModuleList(
            [DFoTBlock(width, config.heads, config.ffn_mult) for _ in range(config.depth)]
        )
        self.final_norm = nn.LayerNorm(width, elementwise_affine=False)
        self.head = nn.Linear(width, config.latent_dim)

    def zero_head(self) -> None:
        with torch.no_grad():
            self.head.weight.zero_()
            self.head.bias.zero_()

    def forward(
        self,
        noisy: torch.Tensor,
        times: torch.Tensor,
        cond: torch.Tensor,
        m_s: torch.Tensor,
        plan: AttentionPlan,
        caches: Optional[KVCacheSet] = None,
    ) -> Tuple[torch.Tensor, List[LayerEntry]]:
        reference = m_s.unsqueeze(-2).expand(*noisy.shape[:-1], m_s.shape[-1])
        x0 = self.input(torch.cat([noisy, reference], dim=-1))
        modulation = self.time(times)
        use_history = caches is not None and len(caches) > 0

        x = x0
        entries: List[LayerEntry] = []
        for layer, block in enumerate(self.blocks):
            history = caches.history(layer) if use_history else None
            x, entry = block(x, x0, modulation, cond, plan, history)
            entries.append(entry)
        return self.head(self.final_norm(x)), entries
