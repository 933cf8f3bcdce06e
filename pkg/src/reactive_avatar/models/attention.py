"""
Attention layers.

Self-attention with rotary positions for the DFoT stack and plain
cross-attention for the condition encoder and the DFoT condition path.
Both delegate the arithmetic to `core.numeric.masked_attention`.
"""

import math
from typing import Optional, Tuple

import torch
from torch import nn

from ..core.numeric import masked_attention


def modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    """Apply an AdaLN scale and shift."""
    return x * (1 + scale) + shift


class SelfAttention(nn.Module):
    """
    Multi-head self-attention with rotary positions on queries and keys.

    Args:
        width: Model width h.
        heads: Number of heads; must divide h.
    """

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.width = width
        self.heads = heads
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)

    def project(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        return q, k, v

    def attend(
        self,
        q: torch.Tensor,
        keys: torch.Tensor,
        values: torch.Tensor,
        allowed: torch.Tensor,
        q_positions: torch.Tensor,
        k_positions: torch.Tensor,
    ) -> torch.Tensor:
        out = masked_attention(
            q,
            keys,
            values,
            allowed,
            self.heads,
            rotary=True,
            q_positions=q_positions,
            k_positions=k_positions,
        )
        return self.out(out)


class CrossAttention(nn.Module):
    """
    Multi-head cross-attention from a query stream to a context stream.

    Args:
        width: Width of the query stream and of the output.
        context_width: Width of the context stream.
        heads: Number of heads.
    """

    def __init__(self, width: int, context_width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.query = nn.Linear(width, width)
        self.kv = nn.Linear(context_width, 2 * width)
        self.out = nn.Linear(width, width)

    def key_values(self, context: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        k, v = self.kv(context).chunk(2, dim=-1)
        return k, v

    def attend(
        self, x: torch.Tensor, keys: torch.Tensor, values: torch.Tensor, allowed: torch.Tensor
    ) -> torch.Tensor:
        return self.out(masked_attention(self.query(x), keys, values, allowed, self.heads))

    def forward(
        self, x: torch.Tensor, context: torch.Tensor, allowed: Optional[torch.Tensor] = None
    ) -> torch.Tensor:
        if allowed is None:
            allowed = torch.ones(x.shape[-2], context.shape[-2], dtype=torch.bool)
        keys, values = self.key_values(context)
        return self.attend(x, keys, values, allowed)


def initialize_parameters(module: nn.Module, seed: int) -> None:
    """
    Initialise a module's parameters from a seeded generator.

    Matrices are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases are
    zero, norm gains are one and any other vector is drawn from U(-0.1, 0.1).
    """
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, param in module.named_parameters():
            if param.dim() >= 2:
                bound = 1.0 / math.sqrt(param.shape[1])
                param.uniform_(-bound, bound, generator=generator)
            elif name.endswith("bias"):
                param.zero_()
            elif "norm" in name:
                param.fill_(1.0)
            else:
                param.uniform_(-0.1, 0.1, generator=generator)
