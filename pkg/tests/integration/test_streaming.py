"""
Integration tests of long streaming sessions.

These tests are slow; set REACTIVE_AVATAR_SLOW=1 to run them.
"""

import numpy as np
import pytest
import torch

from reactive_avatar.core.config import ModelConfig, SamplerConfig
from reactive_avatar.core.schema import ConditionTriplet
from reactive_avatar.models.vector_field import MotionVectorField
from reactive_avatar.sampling.session import open_session
from reactive_avatar.utils.kv_file import get_env_flag


@pytest.mark.skipif(not get_env_flag("REACTIVE_AVATAR_SLOW"), reason="REACTIVE_AVATAR_SLOW not set")
def test_per_block_cost_is_constant():
    """Test that memory stops growing at the cache capacity and block latency does not trend upward."""
    config = ModelConfig(latent_dim=8, width=32, heads=4, encoder_heads=4, depth=4, block_size=5, look_ahead=1)
    model = MotionVectorField(config)
    session = open_session(model, torch.zeros(8), torch.zeros(8), SamplerConfig(ode_steps=4, cache_blocks=4))
    generator = torch.Generator().manual_seed(0)
    for _ in range(60):
        block = ConditionTriplet(
            user_audio=torch.randn(5, 4, generator=generator),
            user_motion=torch.randn(5, 8, generator=generator),
            avatar_audio=torch.randn(5, 4, generator=generator),
        )
        session.push_block(block)
    assert session.cached_blocks == 4
    assert len(set(session.cache_bytes[4:])) == 1
    report = session.latency_report(warmup=5)
    early = np.median(report.block_ms[5:20])
    late = np.median(report.block_ms[-15:])
    assert late < 2.0 * early
