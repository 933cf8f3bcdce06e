"""
Dual motion encoder.

Fuses the condition triplet into the unified condition with two
cross-attention stages: user motion queries user audio, then avatar
audio queries the result.
"""

import torch
from torch import nn

from ..core.config import ModelConfig
from ..core.schema import ConditionTriplet
from .attention import CrossAttention


class DualMotionEncoder(nn.Module):
    """
    Condition encoder of the vector field model.

    Args:
        config: Model architecture. `user_motion` / `user_audio` set to
                False replace the respective user stream by zeros.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        width = config.width
        self.user_motion_proj = nn.Linear(config.latent_dim, width)
        self.user_audio_proj = nn.Linear(config.audio_dim, width)
        self.avatar_audio_proj = nn.Linear(config.audio_dim, width)
        self.user_attention = CrossAttention(width, width, config.encoder_heads)
        self.avatar_attention = CrossAttention(width, width, config.encoder_heads)
        self.norm_user = nn.LayerNorm(width)
        self.norm_avatar = nn.LayerNorm(width)

    def _allowed(self, n: int, scope: str) -> torch.Tensor:
        if scope == "window":
            return torch.ones(n, n, dtype=torch.bool)
        index = torch.arange(n) // self.config.block_size
        return index[:, None] == index[None, :]

    def forward(self, triplet: ConditionTriplet, scope: str = "window") -> torch.Tensor:
        """
        Encode a batched triplet.

        Args:
            triplet: Triplet with tensors of shape (B, N, .).
            scope: "window" attends over all N frames, "block" only within
                   each block.

        Returns:
            The unified condition (B, N, h).
        """
        user_motion = triplet.user_motion
        user_audio = triplet.user_audio
        if not self.config.user_motion:
            user_motion = torch.zeros_like(user_motion)
        if not self.config.user_audio:
            user_audio = torch.zeros_like(user_audio)

        allowed = self._allowed(triplet.length, scope)
        motion = self.user_motion_proj(user_motion)
        user = self.norm_user(
            motion + self.user_attention(motion, self.user_audio_proj(user_audio), allowed)
        )
        avatar = self.avatar_audio_proj(triplet.avatar_audio)
        return self.norm_avatar(avatar + self.avatar_attention(avatar, user, allowed))
