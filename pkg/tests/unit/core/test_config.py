"""
Unit tests for the configuration module.
"""

import tempfile
from pathlib import Path

import pytest

from reactive_avatar.core.config import (
    ConfigManager,
    MetricConfig,
    ModelConfig,
    RunConfig,
    TrainConfig,
    WorldParams,
)
from reactive_avatar.core.errors import ConfigError


def test_default_config():
    """Test that the default configuration carries the documented values."""
    config = RunConfig()
    assert config.world.reaction_lag == 5
    assert config.world.reaction_gain == 0.8
    assert config.model.block_size == 10
    assert config.model.look_ahead == 2
    assert config.train.window == 50
    assert config.train.p_drop == 0.1
    assert config.sampler.ode_steps == 10
    assert config.sampler.guidance_scale == 2.0
    assert config.dpo.beta == 1000.0
    assert config.dpo.lam == 0.1
    assert config.run.log_level == "INFO"


def test_from_flat_sets_values():
    """Test that dotted keys populate their sections."""
    config = ConfigManager.from_flat({"train.steps": "12", "world.reaction_lag": 3, "run.record_timing": "false"})
    assert config.train.steps == 12
    assert config.world.reaction_lag == 3
    assert config.run.record_timing is False


def test_unknown_keys_are_rejected():
    """Test that unknown sections, unknown fields and unprefixed keys raise ConfigError."""
    with pytest.raises(ConfigError):
        ConfigManager.from_flat({"optimizer.lr": "1"})
    with pytest.raises(ConfigError):
        ConfigManager.from_flat({"train.momentum": "0.9"})
    with pytest.raises(ConfigError):
        ConfigManager.from_flat({"steps": "3"})


def test_invalid_values_are_rejected():
    """Test that out-of-range values raise ConfigError."""
    with pytest.raises(ConfigError):
        ConfigManager.from_flat({"world.reaction_gain": "1.5"})
    with pytest.raises(ConfigError):
        ConfigManager.from_flat({"train.p_drop": "1.0"})
    with pytest.raises(ConfigError):
        ConfigManager.from_flat({"model.block_size": "5"})


def test_section_cross_checks():
    """Test that sections disagreeing on block size or window are rejected."""
    with pytest.raises(ValueError):
        RunConfig(train=TrainConfig(block_size=5, window=50))
    with pytest.raises(ValueError):
        RunConfig(model=ModelConfig(latent_dim=8))


def test_model_config_divisibility():
    """Test that widths must divide into heads with even per-head width."""
    with pytest.raises(ValueError):
        ModelConfig(width=30, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(width=12, heads=4)


def test_world_turn_range():
    """Test that turn_max below turn_min is rejected."""
    with pytest.raises(ValueError):
        WorldParams(turn_min=30, turn_max=20)


def test_mask_kind_effective_values():
    """Test that the mask kind decides the effective block size and look-ahead."""
    assert ModelConfig().effective_look_ahead == 2
    assert ModelConfig(mask_kind="blockwise").effective_look_ahead == 0
    assert ModelConfig(mask_kind="framewise").effective_block_size == 1


def test_metric_cluster_counts():
    """Test that the large-scale cluster counts replace the defaults when enabled."""
    assert MetricConfig().expression_k == 4
    assert MetricConfig(paper_k=True).expression_k == 15
    assert MetricConfig(paper_k=True).pose_k == 9


def test_load_config_defaults_and_missing_file():
    """Test that no path gives defaults and a missing file raises ConfigError."""
    assert ConfigManager.load_config(None) == RunConfig()
    with pytest.raises(ConfigError):
        ConfigManager.load_config("/nonexistent/run.cfg")


def test_load_config_from_file():
    """Test loading a key = value file with comments."""
    with tempfile.TemporaryDirectory() as temp_dir:
        path = Path(temp_dir) / "run.cfg"
        path.write_text("# smoke run\ntrain.steps = 7\n\nsampler.lookahead_mode = delayed  # co-denoise\n")
        config = ConfigManager.load_config(path)
        assert config.train.steps == 7
        assert config.sampler.lookahead_mode == "delayed"


def test_malformed_file_raises_config_error():
    """Test that a line without '=' raises ConfigError."""
    with tempfile.TemporaryDirectory() as temp_dir:
        path = Path(temp_dir) / "run.cfg"
        path.write_text("train.steps 7\n")
        with pytest.raises(ConfigError):
            ConfigManager.load_config(path)


def test_save_and_reload_round_trip():
    """Test that a saved configuration reloads equal with the same digest."""
    config = ConfigManager.from_flat({"train.steps": "5", "model.mask_kind": "blockwise"})
    with tempfile.TemporaryDirectory() as temp_dir:
        path = Path(temp_dir) / "nested" / "run.cfg"
        ConfigManager.save_config(config, path)
        reloaded = ConfigManager.load_config(path)
    assert reloaded == config
    assert ConfigManager.digest(reloaded) == ConfigManager.digest(config)


def test_digest_tracks_content():
    """Test that the digest is 16 hex digits and changes with any value."""
    base = RunConfig()
    digest = ConfigManager.digest(base)
    assert len(digest) == 16
    int(digest, 16)
    assert ConfigManager.digest(RunConfig()) == digest
    assert ConfigManager.digest(ConfigManager.with_seed(base, 1)) != digest


def test_to_flat_is_sorted():
    """Test that flattened keys are sorted and booleans render lowercase."""
    flat = ConfigManager.to_flat(RunConfig())
    assert list(flat) == sorted(flat)
    assert flat["model.user_motion"] == "true"


def test_with_seed_sets_every_seed():
    """Test that a global seed override reaches every seeded section."""
    config = ConfigManager.with_seed(RunConfig(), 99)
    for section in ("run", "data", "train", "sampler", "dpo", "codec"):
        assert getattr(config, section).seed == 99
    assert RunConfig().run.seed != 99


def test_get_section():
    """Test getting a configuration section by name."""
    assert isinstance(ConfigManager.get_section("world"), WorldParams)
    with pytest.raises(KeyError):
        ConfigManager.get_section("optimizer")


def test_validate_assignment():
    """Test that assignments are validated."""
    config = RunConfig()
    with pytest.raises(ValueError):
        config.sampler.ode_steps = 0
