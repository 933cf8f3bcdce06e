"""
Schema module.

This module provides the common data classes passed between the
reactive_avatar components: condition triplets, flow times, preference
pairs and the latency and metric reports.
"""

import math
from typing import ClassVar, Dict, List, Optional, Sequence, Tuple, Union

import torch
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ConditionTriplet(BaseModel):
    """
    Per-frame conditions of the avatar: user audio, user motion latent and
    avatar audio. Tensors carry frames on dimension -2 and may have leading
    batch dimensions.

    Args:
        user_audio: (..., N, d_a) user audio features.
        user_motion: (..., N, d) user motion latents.
        avatar_audio: (..., N, d_a) avatar audio features.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    user_audio: torch.Tensor
    user_motion: torch.Tensor
    avatar_audio: torch.Tensor

    @model_validator(mode="after")
    def _same_length(self) -> "ConditionTriplet":
        lengths = {t.shape[-2] for t in (self.user_audio, self.user_motion, self.avatar_audio)}
        if len(lengths) != 1:
            raise ValueError(
                f"Condition streams differ in length: user_audio={self.user_audio.shape[-2]}, "
                f"user_motion={self.user_motion.shape[-2]}, avatar_audio={self.avatar_audio.shape[-2]}"
            )
        leads = {tuple(t.shape[:-2]) for t in (self.user_audio, self.user_motion, self.avatar_audio)}
        if len(leads) != 1:
            raise ValueError("Condition streams differ in batch dimensions")
        return self

    @property
    def length(self) -> int:
        return int(self.user_audio.shape[-2])

    def frames(self, start: int, stop: int) -> "ConditionTriplet":
        """Return frames [start, stop) of every stream."""
        return ConditionTriplet(
            user_audio=self.user_audio[..., start:stop, :],
            user_motion=self.user_motion[..., start:stop, :],
            avatar_audio=self.avatar_audio[..., start:stop, :],
        )

    def block(self, index: int, block_size: int) -> "ConditionTriplet":
        return self.frames(index * block_size, (index + 1) * block_size)

    def to(self, dtype: torch.dtype) -> "ConditionTriplet":
        return ConditionTriplet(
            user_audio=self.user_audio.to(dtype),
            user_motion=self.user_motion.to(dtype),
            avatar_audio=self.avatar_audio.to(dtype),
        )

    def batched(self) -> "ConditionTriplet":
        """Return the triplet with a leading batch dimension of one if it has none."""
        if self.user_audio.dim() >= 3:
            return self
        return ConditionTriplet(
            user_audio=self.user_audio.unsqueeze(0),
            user_motion=self.user_motion.unsqueeze(0),
            avatar_audio=self.avatar_audio.unsqueeze(0),
        )

    def without_user(self, motion: bool = True, audio: bool = True) -> "ConditionTriplet":
        """Return a copy with the chosen user streams replaced by zeros."""
        return ConditionTriplet(
            user_audio=torch.zeros_like(self.user_audio) if audio else self.user_audio,
            user_motion=torch.zeros_like(self.user_motion) if motion else self.user_motion,
            avatar_audio=self.avatar_audio,
        )

    @staticmethod
    def stack(triplets: Sequence["ConditionTriplet"]) -> "ConditionTriplet":
        """Stack unbatched triplets of equal length into one batch."""
        return ConditionTriplet(
            user_audio=torch.stack([t.user_audio for t in triplets]),
            user_motion=torch.stack([t.user_motion for t in triplets]),
            avatar_audio=torch.stack([t.avatar_audio for t in triplets]),
        )

    @staticmethod
    def concat(triplets: Sequence["ConditionTriplet"]) -> "ConditionTriplet":
        """Concatenate triplets along the frame axis."""
        return ConditionTriplet(
            user_audio=torch.cat([t.user_audio for t in triplets], dim=-2),
            user_motion=torch.cat([t.user_motion for t in triplets], dim=-2),
            avatar_audio=torch.cat([t.avatar_audio for t in triplets], dim=-2),
        )


class FlowTimes(BaseModel):
    """
    Per-frame flow times t_n in [0, 1].

    Args:
        values: (..., N) tensor of flow times.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: torch.Tensor

    @field_validator("values")
    @classmethod
    def _in_unit_interval(cls, values: torch.Tensor) -> torch.Tensor:
        if values.numel() and (values.min().item() < 0.0 or values.max().item() > 1.0):
            raise ValueError("Flow times must lie in [0, 1]")
        return values

    @property
    def length(self) -> int:
        return int(self.values.shape[-1])


def as_times_tensor(times: Union[FlowTimes, torch.Tensor]) -> torch.Tensor:
    """Return the raw tensor of a FlowTimes value or pass a tensor through."""
    return times.values if isinstance(times, FlowTimes) else times


class PreferencePair(BaseModel):
    """
    A winner/loser pair of avatar motion latents sharing one condition.

    Args:
        winner: (N, d) ground-truth avatar motion latents.
        loser: (N, d) talking-only generation under the same avatar audio.
        condition: The clip's full condition triplet.
        reference_motion: (d,) reference motion latent m_S of the avatar.
        clip_index: Index of the source clip.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    winner: torch.Tensor
    loser: torch.Tensor
    condition: ConditionTriplet
    reference_motion: torch.Tensor
    clip_index: int = 0

    @model_validator(mode="after")
    def _aligned(self) -> "PreferencePair":
        if self.winner.shape != self.loser.shape:
            raise ValueError(
                f"Winner {tuple(self.winner.shape)} and loser {tuple(self.loser.shape)} differ in shape"
            )
        if self.condition.length != self.winner.shape[-2]:
            raise ValueError("Condition length does not match the motion sequences")
        return self


class LatencyReport(BaseModel):
    """
    Per-block wall-clock accounting of a streaming session.

    Args:
        block_ms: Milliseconds spent producing each emitted block.
        first_block_ms: Latency of the first block.
        max_min_ratio: max / min of `block_ms` after the warmup blocks.
        warmup: Number of leading blocks excluded from the ratio.
        cache_bytes: Memory held by the session caches after each block.
    """

    block_ms: List[float] = Field(default_factory=list)
    first_block_ms: float = 0.0
    max_min_ratio: float = 1.0
    warmup: int = 2
    cache_bytes: List[int] = Field(default_factory=list)

    @property
    def blocks(self) -> int:
        return len(self.block_ms)


class MetricReport(BaseModel):
    """
    Interaction metrics of a set of generated clips.

    Args:
        values: Metric name to value (rPCC-Exp, rPCC-Pose, SID-Exp, SID-Pose,
                Var-Exp, Var-Pose, FD-Exp, FD-Pose).
        clips: Number of clips evaluated.
        failed_clips: Clips whose generation or metrics failed.
        undefined_channels: Correlation channels excluded for zero variance.
        config: Echo of the settings the metrics depend on.
    """

    values: Dict[str, float] = Field(default_factory=dict)
    clips: int = 0
    failed_clips: int = 0
    undefined_channels: int = 0
    config: Dict[str, str] = Field(default_factory=dict)

    COLUMNS: ClassVar[Tuple[str, ...]] = (
        "rPCC-Exp",
        "rPCC-Pose",
        "SID-Exp",
        "SID-Pose",
        "Var-Exp",
        "Var-Pose",
        "FD-Exp",
        "FD-Pose",
    )

    def get(self, name: str) -> Optional[float]:
        return self.values.get(name)

    @property
    def finite(self) -> bool:
        return all(math.isfinite(v) for v in self.values.values())
