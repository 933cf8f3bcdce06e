"""
Unit tests for the motion vector field model and its condition encoder.
"""

import tempfile
from pathlib import Path

import pytest
import torch

from reactive_avatar.core.errors import ArtifactMismatchError, CacheMismatchError, ShapeMismatchError
from reactive_avatar.core.masking import AttentionMask, build_mask, causality_probe
from reactive_avatar.core.schema import ConditionTriplet
from reactive_avatar.models.vector_field import (
    MotionVectorField,
    condition_sensitivity,
    load_model,
    save_model,
)
from reactive_avatar.sampling.cache import KVCacheSet
from reactive_avatar.training.preference import talking_only_config


def randomize_head(model, seed=0):
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        model.dfot.head.weight.copy_(0.5 * torch.randn(model.dfot.head.weight.shape, generator=generator))
        model.dfot.head.bias.copy_(0.1 * torch.randn(model.dfot.head.bias.shape, generator=generator))
    return model


def random_condition(config, n, seed=0):
    generator = torch.Generator().manual_seed(seed)
    return ConditionTriplet(
        user_audio=torch.randn(n, config.audio_dim, generator=generator),
        user_motion=torch.randn(n, config.latent_dim, generator=generator),
        avatar_audio=torch.randn(n, config.audio_dim, generator=generator),
    )


def test_fresh_model_predicts_zero(small_model_config):
    """Test that the zero-initialised head makes a fresh model output zeros."""
    model = MotionVectorField(small_model_config)
    cond = model.encode_condition(random_condition(small_model_config, 8))
    out = model.predict_vector_field(torch.randn(1, 8, 4), torch.rand(1, 8), cond, torch.randn(1, 4))
    assert out.shape == (1, 8, 4)
    assert torch.count_nonzero(out) == 0
    assert model.parameter_count() > 0


def test_initialisation_is_seeded(small_model_config):
    """Test that equal seeds give equal parameters."""
    a = MotionVectorField(small_model_config, seed=5)
    b = MotionVectorField(small_model_config, seed=5)
    c = MotionVectorField(small_model_config, seed=6)
    assert all(torch.equal(p, q) for p, q in zip(a.parameters(), b.parameters()))
    assert not all(torch.equal(p, q) for p, q in zip(a.parameters(), c.parameters()))


def test_unified_condition_shape(small_model_config):
    """Test that the encoder produces one width-h vector per frame."""
    model = MotionVectorField(small_model_config)
    cond = model.encode_condition(random_condition(small_model_config, 6))
    assert cond.shape == (1, 6, small_model_config.width)
    assert model.null_condition(6, batch=2).shape == (2, 6, small_model_config.width)


@pytest.mark.parametrize("mask_kind", ["lookahead", "blockwise", "framewise"])
def test_output_respects_self_attention_mask(small_model_config, mask_kind):
    """Test that no block reads noisy latents beyond its admitted look-ahead."""
    config = small_model_config.model_copy(update={"mask_kind": mask_kind})
    model = randomize_head(MotionVectorField(config, seed=1)).double()
    n = 8
    generator = torch.Generator().manual_seed(2)
    cond = torch.randn(1, n, config.width, dtype=torch.float64, generator=generator)
    times = torch.rand(1, n, dtype=torch.float64, generator=generator)
    m_s = torch.randn(1, config.latent_dim, dtype=torch.float64, generator=generator)

    def forward(noisy):
        return model.predict_vector_field(noisy.unsqueeze(0), times, cond, m_s)[0]

    mask = build_mask(mask_kind, n, config.block_size, config.look_ahead)
    noisy = torch.randn(n, config.latent_dim, dtype=torch.float64, generator=generator)
    report = causality_probe(forward, mask, [noisy], seed=3)
    assert report.passed, report.violations


@pytest.mark.parametrize("mask_kind", ["lookahead", "blockwise", "framewise"])
def test_output_ignores_flow_times_beyond_lookahead(small_model_config, mask_kind):
    """Test that perturbing the flow time of a masked-out frame leaves earlier outputs unchanged."""
    config = small_model_config.model_copy(update={"mask_kind": mask_kind})
    model = randomize_head(MotionVectorField(config, seed=1)).double()
    n = 8
    generator = torch.Generator().manual_seed(4)
    cond = torch.randn(1, n, config.width, dtype=torch.float64, generator=generator)
    noisy = torch.randn(1, n, config.latent_dim, dtype=torch.float64, generator=generator)
    m_s = torch.randn(1, config.latent_dim, dtype=torch.float64, generator=generator)

    def forward(times):
        return model.predict_vector_field(noisy, times.unsqueeze(0), cond, m_s)[0]

    mask = build_mask(mask_kind, n, config.block_size, config.look_ahead)
    times = torch.rand(n, dtype=torch.float64, generator=generator)
    report = causality_probe(forward, mask, [times], seed=5)
    assert report.passed, report.violations

    # the last block is never admitted by the first one
    changed = times.clone()
    changed[-config.block_size :] = 1.0 - changed[-config.block_size :]
    base = forward(times)
    out = forward(changed)
    assert torch.equal(out[: config.block_size], base[: config.block_size])
    assert not torch.equal(out[-config.block_size :], base[-config.block_size :])


def test_lookahead_is_used(small_model_config):
    """Test that a block does read the next block under the look-ahead mask."""
    model = randomize_head(MotionVectorField(small_model_config, seed=1))
    n = 8
    cond = torch.randn(1, n, small_model_config.width)
    times = torch.rand(1, n)
    m_s = torch.randn(1, 4)
    noisy = torch.randn(1, n, 4)
    base = model.predict_vector_field(noisy, times, cond, m_s)
    changed = noisy.clone()
    changed[0, 2:4] += 1.0
    out = model.predict_vector_field(changed, times, cond, m_s)
    assert not torch.allclose(out[0, 0:2], base[0, 0:2])


def test_block_scope_encoder_is_block_local(small_model_config):
    """Test that the block-scoped encoder never mixes conditions across blocks."""
    model = MotionVectorField(small_model_config, seed=2).double()
    condition = random_condition(small_model_config, 6, seed=4).to(torch.float64)

    def forward(user_motion):
        triplet = ConditionTriplet(
            user_audio=condition.user_audio, user_motion=user_motion, avatar_audio=condition.avatar_audio
        )
        return model.encode_condition(triplet, scope="block")[0]

    index = torch.arange(6) // small_model_config.block_size
    mask = AttentionMask(allowed=index[:, None] == index[None, :])
    report = causality_probe(forward, mask, [condition.user_motion], seed=5)
    assert report.passed, report.violations


def test_talking_only_ignores_user(small_model_config):
    """Test that the talking-only variant is insensitive to both user streams."""
    condition = random_condition(small_model_config, 6)
    talking = MotionVectorField(talking_only_config(small_model_config))
    full = MotionVectorField(small_model_config)
    assert condition_sensitivity(talking, condition) == 0.0
    assert condition_sensitivity(full, condition) > 0.0


def test_shape_errors(small_model_config):
    """Test that mismatched latents and times are rejected."""
    model = MotionVectorField(small_model_config)
    cond = torch.zeros(1, 4, small_model_config.width)
    with pytest.raises(ShapeMismatchError):
        model.predict_vector_field(torch.zeros(1, 4, 3), torch.zeros(1, 4), cond, torch.zeros(1, 3))
    with pytest.raises(ShapeMismatchError):
        model.predict_vector_field(torch.zeros(1, 4, 4), torch.zeros(1, 3), cond, torch.zeros(1, 4))


def test_cache_depth_mismatch(small_model_config):
    """Test that caches built for another depth are rejected."""
    model = MotionVectorField(small_model_config)
    cond = torch.zeros(1, 2, small_model_config.width)
    with pytest.raises(CacheMismatchError):
        model.predict_vector_field(
            torch.zeros(1, 2, 4), torch.zeros(1, 2), cond, torch.zeros(1, 4), caches=KVCacheSet(5, 2)
        )


def test_frozen_copy(small_model_config):
    """Test that a frozen copy shares values but not gradients."""
    model = MotionVectorField(small_model_config)
    frozen = model.frozen_copy()
    assert not any(p.requires_grad for p in frozen.parameters())
    assert all(p.requires_grad for p in model.parameters())
    assert all(torch.equal(p, q) for p, q in zip(model.parameters(), frozen.parameters()))


def test_checkpoint_round_trip(small_model_config):
    """Test that a saved model reloads from its own header with equal parameters."""
    model = randomize_head(MotionVectorField(small_model_config, seed=4))
    with tempfile.TemporaryDirectory() as temp_dir:
        path = Path(temp_dir) / "model-full.afck"
        save_model(model, path, {"digest": "abc"})
        loaded = load_model(path)
        assert loaded.config == small_model_config
        assert all(torch.equal(p, q) for p, q in zip(model.parameters(), loaded.parameters()))
        other = small_model_config.model_copy(update={"depth": 3})
        with pytest.raises(ArtifactMismatchError):
            load_model(path, other)


def test_parameter_count_depends_only_on_architecture(small_model_config):
    """Test that the parameter count is fixed by the architecture, not the seed or mask."""
    base = MotionVectorField(small_model_config, seed=0).parameter_count()
    assert MotionVectorField(small_model_config, seed=9).parameter_count() == base
    framewise = small_model_config.model_copy(update={"mask_kind": "framewise"})
    assert MotionVectorField(framewise).parameter_count() == base
    wider = small_model_config.model_copy(update={"width": 32})
    deeper = small_model_config.model_copy(update={"depth": 3})
    assert MotionVectorField(wider).parameter_count() > base
    assert MotionVectorField(deeper).parameter_count() > base
