"""
Configuration file for pytest that ensures the 'reactive_avatar' package can be imported in tests.

This file is automatically discovered by pytest when running tests. It sets up
the import path and provides small configurations shared by the unit tests.
"""

import sys
from pathlib import Path

import pytest

# Add the src directory to Python's path
project_root = Path(__file__).parent.parent  # tests/ -> project root
sys.path.insert(0, str(project_root / "src"))

from reactive_avatar.core.config import (  # noqa: E402
    CodecConfig,
    ConfigManager,
    ModelConfig,
    RunConfig,
    WorldParams,
)
from reactive_avatar.utils.kv_file import get_env_flag  # noqa: E402

SLOW = get_env_flag("REACTIVE_AVATAR_SLOW")


@pytest.fixture
def small_model_config():
    """A small float32 architecture with blocks of two frames and one block of look-ahead."""
    return ModelConfig(
        latent_dim=4,
        audio_dim=4,
        width=16,
        heads=2,
        encoder_heads=2,
        depth=2,
        ffn_mult=2,
        block_size=2,
        look_ahead=1,
        cond_window=2,
        time_freq_dim=8,
    )


@pytest.fixture
def world_params():
    """Default dyadic world parameters."""
    return WorldParams()


@pytest.fixture
def small_codec_config():
    """A codec small enough to train in a unit test."""
    return CodecConfig(obs_dim=16, id_dim=4, latent_dim=4, hidden=16, steps=50, batch_size=16)


@pytest.fixture
def tiny_run_config():
    """A complete run configuration sized for end-to-end smoke tests."""
    return ConfigManager.from_flat(
        {
            "data.clip_count": 4,
            "data.clip_frames": 24,
            "codec.obs_dim": 16,
            "codec.id_dim": 4,
            "codec.latent_dim": 4,
            "codec.hidden": 16,
            "codec.steps": 20,
            "codec.batch_size": 16,
            "model.latent_dim": 4,
            "model.width": 16,
            "model.heads": 2,
            "model.encoder_heads": 2,
            "model.depth": 2,
            "model.ffn_mult": 2,
            "model.block_size": 4,
            "model.look_ahead": 1,
            "model.time_freq_dim": 8,
            "train.steps": 3,
            "train.batch_size": 2,
            "train.window": 8,
            "train.block_size": 4,
            "train.look_ahead": 1,
            "train.log_every": 1,
            "sampler.ode_steps": 2,
            "sampler.cache_blocks": 2,
            "dpo.steps": 2,
            "dpo.batch_size": 2,
            "metrics.restarts": 1,
            "run.record_timing": "false",
        }
    )


@pytest.fixture
def default_config():
    return RunConfig()
