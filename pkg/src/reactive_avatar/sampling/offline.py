"""
Offline reference sampler.

Generates the same block sequence as a strict streaming session without
any cache: block i is integrated by full forward passes over blocks
0..i, with the finished blocks at t = 1 and attention restricted to each
block and its `history_blocks` predecessors.
"""

from typing import Optional

import torch

from ..core.config import SamplerConfig
from ..core.field import VectorField
from ..core.schema import ConditionTriplet
from .session import block_noise, euler_times, guided_velocity


def sample_offline(
    field: VectorField,
    condition: ConditionTriplet,
    m_s: torch.Tensor,
    config: SamplerConfig,
    history_blocks: Optional[int] = None,
) -> torch.Tensor:
    """
    Cache-free blockwise-causal sampling.

    Args:
        field: The vector field to sample.
        condition: Unbatched condition sequence; trailing frames that do not
                   fill a block are ignored.
        m_s: (d,) reference motion latent.
        config: Sampler settings (ODE steps, guidance scale, seed).
        history_blocks: Blocks of history each block attends; defaults to
                        the rolling cache capacity. Use a value at least the
                        block count for unlimited history.

    Returns:
        (floor(N / B) * B, d) motion latents.
    """
    history = config.cache_blocks if history_blocks is None else history_blocks
    size = field.block_size
    blocks = condition.length // size
    dtype = m_s.dtype
    m_s = m_s.reshape(1, -1)
    steps = config.ode_steps

    with torch.no_grad():
        cond = torch.cat(
            [field.encode_condition(condition.block(i, size).batched().to(dtype)) for i in range(blocks)],
            dim=-2,
        )
        null = field.null_condition(blocks * size, 1).to(cond.dtype)
        clean = torch.zeros(1, 0, field.latent_dim, dtype=dtype)
        for i in range(blocks):
            n = (i + 1) * size
            x = block_noise(config.seed, i, (1, size, field.latent_dim), dtype)
            for j in range(steps):
                times = torch.cat(
                    [torch.ones(1, i * size, dtype=dtype), euler_times(j, steps, (1, size), dtype)], dim=-1
                )
                v = guided_velocity(
                    field,
                    torch.cat([clean, x], dim=-2),
                    times,
                    cond[:, :n],
                    null[:, :n],
                    m_s,
                    config.guidance_scale,
                    history_blocks=history,
                )
                x = x + v[:, i * size:] / steps
            clean = torch.cat([clean, x], dim=-2)
    return clean[0]
