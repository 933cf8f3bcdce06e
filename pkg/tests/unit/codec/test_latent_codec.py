"""
Unit tests for the latent codec and the observation space.
"""

import tempfile
from pathlib import Path

import numpy as np
import pytest
import torch

from reactive_avatar.codec.latent_codec import (
    LatentCodec,
    ObservationSpace,
    decode_parameters,
    encode_parameters,
    load_codec,
    save_codec,
    train_codec,
)
from reactive_avatar.core.errors import ArtifactMismatchError, UntrainedCodecError
from reactive_avatar.core.config import CodecConfig
from reactive_avatar.world.dyadic import generate_clips, identity_sequences


def test_observation_space_is_orthonormal():
    """Test that the mixing basis has orthonormal columns."""
    space = ObservationSpace(obs_dim=16, id_dim=4)
    assert space.orthonormality_error() < 1e-10


def test_oracle_recovers_parameters():
    """Test that the oracle inverts the observation map exactly."""
    space = ObservationSpace(obs_dim=16, id_dim=4, world_seed=9)
    rng = np.random.default_rng(0)
    identity = rng.standard_normal((10, 4))
    motion = rng.standard_normal((10, 6))
    observations = space.synth_observation(identity, motion)
    assert np.allclose(space.oracle_motion(observations), motion)
    assert np.allclose(space.oracle_identity(observations), identity)


def test_observation_space_too_small():
    """Test that an observation dimension below id + motion is rejected."""
    with pytest.raises(ValueError):
        ObservationSpace(obs_dim=8, id_dim=4)


def test_observation_space_depends_on_seed():
    """Test that the basis is fixed by the world seed."""
    a = ObservationSpace(obs_dim=16, id_dim=4, world_seed=1)
    b = ObservationSpace(obs_dim=16, id_dim=4, world_seed=1)
    c = ObservationSpace(obs_dim=16, id_dim=4, world_seed=2)
    assert np.array_equal(a.w_mo, b.w_mo)
    assert not np.array_equal(a.w_mo, c.w_mo)


def test_codec_shapes(small_codec_config):
    """Test the shapes of the encoder, decoder and reenactment."""
    codec = LatentCodec(small_codec_config)
    codec.trained = True
    observations = torch.randn(5, small_codec_config.obs_dim)
    z_s, m = codec.encode(observations)
    assert z_s.shape == (5, small_codec_config.latent_dim)
    assert m.shape == (5, small_codec_config.latent_dim)
    assert codec.decode(z_s + m).shape == (5, small_codec_config.obs_dim)
    assert codec.reenact(observations, observations).shape == (5, small_codec_config.obs_dim)


def test_untrained_codec_refuses_embedding(small_codec_config):
    """Test that encoding parameters with an untrained codec raises UntrainedCodecError."""
    codec = LatentCodec(small_codec_config)
    space = ObservationSpace.from_config(small_codec_config)
    with pytest.raises(UntrainedCodecError):
        encode_parameters(codec, space, np.zeros((3, 4)), np.zeros((3, 6)))


def test_codec_training_reduces_loss(small_codec_config, world_params):
    """Test that codec training lowers the reconstruction loss."""
    codec = LatentCodec(small_codec_config, seed=0)
    space = ObservationSpace.from_config(small_codec_config)
    sequences = identity_sequences(generate_clips(0, 4, 60, world_params))
    result = train_codec(codec, space, sequences, steps=200)
    assert codec.trained
    assert len(result.losses) == 200
    assert result.final_loss < result.initial_loss
    assert result.skipped_identities == 0


def test_codec_training_skips_short_identities(small_codec_config):
    """Test that identities with fewer than two frames are skipped and none usable raises."""
    codec = LatentCodec(small_codec_config)
    space = ObservationSpace.from_config(small_codec_config)
    one_frame = (np.zeros(4), np.zeros((1, 6)))
    two_frames = (np.ones(4), np.zeros((2, 6)))
    result = train_codec(codec, space, [one_frame, two_frames], steps=2)
    assert result.skipped_identities == 1
    with pytest.raises(ValueError):
        train_codec(LatentCodec(small_codec_config), space, [one_frame], steps=2)


def test_decode_parameters_shape(small_codec_config):
    """Test that decoded latents map back to six motion parameters per frame."""
    codec = LatentCodec(small_codec_config)
    space = ObservationSpace.from_config(small_codec_config)
    params = decode_parameters(codec, space, torch.zeros(4), torch.zeros(7, 4))
    assert params.shape == (7, 6)


def test_codec_checkpoint_round_trip(small_codec_config):
    """Test that a saved codec reloads with equal parameters and its trained flag."""
    codec = LatentCodec(small_codec_config, seed=3)
    codec.trained = True
    with tempfile.TemporaryDirectory() as temp_dir:
        path = Path(temp_dir) / "codec.afck"
        save_codec(codec, path, {"digest": "abc"})
        loaded = load_codec(path, small_codec_config)
        assert loaded.trained
        for a, b in zip(codec.parameters(), loaded.parameters()):
            assert torch.equal(a, b)
        with pytest.raises(ArtifactMismatchError):
            load_codec(path, CodecConfig(obs_dim=16, id_dim=4, latent_dim=4, hidden=8))
