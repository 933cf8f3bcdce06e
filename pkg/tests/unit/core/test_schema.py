"""
Unit tests for the schema module.
"""

import math

import pytest
import torch

from reactive_avatar.core.schema import (
    ConditionTriplet,
    FlowTimes,
    LatencyReport,
    MetricReport,
    PreferencePair,
)


def triplet(n=6, latent_dim=3, audio_dim=2):
    return ConditionTriplet(
        user_audio=torch.randn(n, audio_dim),
        user_motion=torch.randn(n, latent_dim),
        avatar_audio=torch.randn(n, audio_dim),
    )


def test_condition_triplet_lengths_must_agree():
    """Test that streams of different lengths are rejected."""
    with pytest.raises(ValueError):
        ConditionTriplet(
            user_audio=torch.zeros(5, 2),
            user_motion=torch.zeros(4, 3),
            avatar_audio=torch.zeros(5, 2),
        )


def test_condition_triplet_slicing():
    """Test frame and block slicing of a triplet."""
    condition = triplet(6)
    assert condition.length == 6
    block = condition.block(1, 2)
    assert block.length == 2
    assert torch.equal(block.user_motion, condition.user_motion[2:4])
    assert ConditionTriplet.concat([condition.frames(0, 3), condition.frames(3, 6)]).length == 6


def test_condition_triplet_batching():
    """Test that batching adds one leading dimension and stacking builds a batch."""
    condition = triplet(4)
    assert condition.batched().user_audio.shape == (1, 4, 2)
    assert condition.batched().batched().user_audio.shape == (1, 4, 2)
    stacked = ConditionTriplet.stack([condition, condition])
    assert stacked.user_motion.shape == (2, 4, 3)


def test_without_user_zeroes_user_streams():
    """Test that muting keeps the avatar audio and zeroes the user streams."""
    condition = triplet(4)
    muted = condition.without_user()
    assert torch.count_nonzero(muted.user_audio) == 0
    assert torch.count_nonzero(muted.user_motion) == 0
    assert torch.equal(muted.avatar_audio, condition.avatar_audio)
    motion_only = condition.without_user(audio=False)
    assert torch.equal(motion_only.user_audio, condition.user_audio)


def test_flow_times_range():
    """Test that flow times outside [0, 1] are rejected."""
    assert FlowTimes(values=torch.tensor([0.0, 0.5, 1.0])).length == 3
    with pytest.raises(ValueError):
        FlowTimes(values=torch.tensor([0.2, 1.2]))
    with pytest.raises(ValueError):
        FlowTimes(values=torch.tensor([-0.1]))


def test_preference_pair_alignment():
    """Test that winner, loser and condition must share their length."""
    condition = triplet(4)
    PreferencePair(winner=torch.zeros(4, 3), loser=torch.ones(4, 3), condition=condition, reference_motion=torch.zeros(3))
    with pytest.raises(ValueError):
        PreferencePair(winner=torch.zeros(4, 3), loser=torch.ones(5, 3), condition=condition, reference_motion=torch.zeros(3))
    with pytest.raises(ValueError):
        PreferencePair(winner=torch.zeros(5, 3), loser=torch.ones(5, 3), condition=condition, reference_motion=torch.zeros(3))


def test_metric_report():
    """Test metric lookup and the finiteness flag."""
    report = MetricReport(values={"SID-Exp": 1.2, "FD-Pose": 0.3}, clips=4)
    assert report.get("SID-Exp") == 1.2
    assert report.get("rPCC-Exp") is None
    assert report.finite
    assert not MetricReport(values={"FD-Exp": math.nan}).finite
    assert "rPCC-Pose" in MetricReport.COLUMNS


def test_latency_report_blocks():
    """Test that the block count follows the recorded latencies."""
    assert LatencyReport(block_ms=[1.0, 2.0, 3.0]).blocks == 3
