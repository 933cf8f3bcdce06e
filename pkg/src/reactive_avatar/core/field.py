"""
Vector field interface module.

This module defines the VectorField interface every motion generator
implements (the neural model and the analytic oracle fields), so the
diffusion-forcing loss, the preference loss and the samplers accept any
of them.
"""

from abc import ABC, abstractmethod
from typing import TYPE_CHECKING, Optional, Union

import torch

from .params import ParamStore
from .schema import ConditionTriplet, FlowTimes, as_times_tensor

if TYPE_CHECKING:
    from ..sampling.cache import KVCacheSet


class VectorField(ABC):
    """
    Base interface for velocity fields over motion latents.

    Tensors are batched: noisy latents (B, N, d), flow times (B, N),
    unified conditions (B, N, h) and reference motion (B, d).
    """

    latent_dim: int
    block_size: int

    @abstractmethod
    def encode_condition(self, triplet: ConditionTriplet) -> torch.Tensor:
        """
        Fuse a condition triplet into the unified condition.

        Args:
            triplet: Batched triplet of length N.

        Returns:
            The unified condition of shape (B, N, h).
        """
        pass

    @abstractmethod
    def null_condition(self, n: int, batch: int = 1) -> torch.Tensor:
        """
        Return the unconditional branch's condition broadcast to N frames.

        Args:
            n: Number of frames.
            batch: Batch size.
        """
        pass

    @abstractmethod
    def predict_vector_field(
        self,
        noisy: torch.Tensor,
        times: Union[FlowTimes, torch.Tensor],
        cond: torch.Tensor,
        m_s: torch.Tensor,
        caches: Optional["KVCacheSet"] = None,
        start: int = 0,
        history_blocks: Optional[int] = None,
    ) -> torch.Tensor:
        """
        Predict the per-frame vector field.

        Args:
            noisy: Noisy motion latents (B, N, d).
            times: Per-frame flow times (B, N).
            cond: Unified condition (B, N, h).
            m_s: Reference motion latent (B, d).
            caches: Cached history; when given, `noisy` covers the current
                    block(s) only.
            start: Absolute index of the first frame of `noisy`.
            history_blocks: When given, restrict attention to each block and
                            its `history_blocks` predecessors (the rolling
                            cache semantics evaluated without a cache).

        Returns:
            The field (B, N, d).
        """
        pass

    def new_caches(self, capacity: int) -> Optional["KVCacheSet"]:
        """Create empty caches for a streaming session, if the field uses any."""
        return None

    def update_caches(
        self,
        caches: Optional["KVCacheSet"],
        clean: torch.Tensor,
        cond: torch.Tensor,
        m_s: torch.Tensor,
        start: int,
        block_index: int,
    ) -> None:
        """Append a finished block to the caches."""
        return None

    def parameter_store(self) -> ParamStore:
        """Return the trainable parameters of the field."""
        return ParamStore()


class ConstantField(VectorField):
    """
    Field returning the same velocity everywhere.

    Args:
        value: Velocity of shape (d,).
        block_size: Frames per block.
    """

    def __init__(self, value: torch.Tensor, block_size: int = 1):
        self.value = value
        self.latent_dim = int(value.shape[-1])
        self.block_size = block_size

    def encode_condition(self, triplet: ConditionTriplet) -> torch.Tensor:
        batched = triplet.batched()
        return torch.zeros(*batched.avatar_audio.shape[:-1], 1, dtype=batched.avatar_audio.dtype)

    def null_condition(self, n: int, batch: int = 1) -> torch.Tensor:
        return torch.zeros(batch, n, 1, dtype=self.value.dtype)

    def predict_vector_field(self, noisy, times, cond, m_s, caches=None, start=0, history_blocks=None):
        return self.value.to(noisy.dtype).expand_as(noisy).clone()


class TargetField(VectorField):
    """
    Field transporting every frame along the straight path to a fixed target.

    v(x, t) = (target - x) / (1 - t); Euler integration on a uniform grid
    from noise reaches the target exactly.

    Args:
        target: Clean latents (B, N, d) or (N, d) the field points to.
        block_size: Frames per block.
    """

    def __init__(self, target: torch.Tensor, block_size: int = 1):
        self.target = target if target.dim() == 3 else target.unsqueeze(0)
        self.latent_dim = int(target.shape[-1])
        self.block_size = block_size

    def encode_condition(self, triplet: ConditionTriplet) -> torch.Tensor:
        batched = triplet.batched()
        return torch.zeros(*batched.avatar_audio.shape[:-1], 1, dtype=batched.avatar_audio.dtype)

    def null_condition(self, n: int, batch: int = 1) -> torch.Tensor:
        return torch.zeros(batch, n, 1, dtype=self.target.dtype)

    def predict_vector_field(self, noisy, times, cond, m_s, caches=None, start=0, history_blocks=None):
        t = as_times_tensor(times).to(noisy.dtype)
        n = noisy.shape[-2]
        target = self.target[..., start:start + n, :].to(noisy.dtype)
        remaining = (1.0 - t).clamp_min(1e-12).unsqueeze(-1)
        return (target - noisy) / remaining
