"""
Unit tests for the synthetic dyadic world.
"""

import numpy as np
import pytest

from reactive_avatar.core.config import WorldParams
from reactive_avatar.metrics.interaction import rpcc
from reactive_avatar.world.dyadic import (
    AVATAR_SPEAKS,
    ENVELOPE,
    EXPRESSION,
    LIP,
    USER_SPEAKS,
    audio_only_predictor,
    expressiveness_gap,
    generate_clip,
    generate_clips,
    identity_sequences,
    lagged_correlation,
    lagged_mirror_predictor,
    passive_variant,
    raised_cosine,
)


def runs(schedule):
    lengths, current = [], 1
    for a, b in zip(schedule[:-1], schedule[1:]):
        if a == b:
            current += 1
        else:
            lengths.append(current)
            current = 1
    lengths.append(current)
    return lengths


def test_clip_is_deterministic(world_params):
    """Test that equal seeds give identical clips and other seeds differ."""
    a = generate_clip(11, 200, world_params)
    b = generate_clip(11, 200, world_params)
    c = generate_clip(12, 200, world_params)
    assert np.array_equal(a.avatar_motion, b.avatar_motion)
    assert np.array_equal(a.user_audio, b.user_audio)
    assert a.smile_events == b.smile_events
    assert not np.array_equal(a.avatar_motion, c.avatar_motion)


def test_clip_shapes(world_params):
    """Test the shapes of every stream."""
    clip = generate_clip(0, 150, world_params)
    assert clip.n_frames == 150
    assert clip.user_motion.shape == (150, 6)
    assert clip.avatar_audio.shape == (150, 4)
    assert clip.turn_schedule.shape == (150,)
    assert clip.avatar_motion.dtype == np.float32


def test_short_clip_rejected(world_params):
    """Test that a clip shorter than two turns raises ValueError."""
    with pytest.raises(ValueError):
        generate_clip(0, 2 * world_params.turn_min - 1, world_params)


def test_turns_are_exclusive(world_params):
    """Test that exactly one party speaks per frame and audio follows the schedule."""
    clip = generate_clip(3, 400, world_params)
    schedule = clip.turn_schedule
    assert set(np.unique(schedule).tolist()) <= {USER_SPEAKS, AVATAR_SPEAKS}
    user_speaking = schedule == USER_SPEAKS
    assert (clip.user_audio[user_speaking, ENVELOPE] >= 0.3 - 1e-6).all()
    assert (clip.user_audio[~user_speaking, ENVELOPE] <= 0.05 + 1e-6).all()
    assert (clip.avatar_audio[~user_speaking, ENVELOPE] >= 0.3 - 1e-6).all()
    assert (clip.avatar_audio[user_speaking, ENVELOPE] <= 0.05 + 1e-6).all()


def test_speak_threshold_sets_audio_levels():
    """Test that the speaking threshold separates speech from silence in both envelopes."""
    params = WorldParams(speak_threshold=0.4)
    clip = generate_clip(3, 400, params)
    user_speaking = clip.turn_schedule == USER_SPEAKS
    assert (clip.user_audio[user_speaking, ENVELOPE] >= 0.6 - 1e-6).all()
    assert (clip.user_audio[~user_speaking, ENVELOPE] <= 0.1 + 1e-6).all()
    above = (clip.user_audio[:, ENVELOPE] > 0.4) & (clip.avatar_audio[:, ENVELOPE] > 0.4)
    assert not above.any()
    assert not np.array_equal(clip.user_audio, generate_clip(3, 400, WorldParams()).user_audio)


def test_turn_lengths(world_params):
    """Test that every complete turn lasts between turn_min and turn_max frames."""
    clip = generate_clip(5, 600, world_params)
    lengths = runs(clip.turn_schedule.tolist())
    assert len(lengths) >= 2
    for length in lengths[:-1]:
        assert world_params.turn_min <= length <= world_params.turn_max


def test_expression_mirrors_user_with_lag():
    """Test that the expression cross-correlation peaks at the reaction lag."""
    params = WorldParams(smile_rate=0.03)
    clip = generate_clip(7, 3000, params)
    channel = EXPRESSION[0]
    values = lagged_correlation(clip.user_motion[:, channel], clip.avatar_motion[:, channel], 10)
    assert abs(int(np.argmax(values)) - params.reaction_lag) <= 1
    assert values[params.reaction_lag] > values[0] + 0.1


def test_reaction_gain_zero_removes_coupling():
    """Test that a zero gain leaves no reactive component."""
    clip = generate_clip(2, 300, WorldParams(reaction_gain=0.0))
    assert np.count_nonzero(clip.avatar_reaction) == 0


def test_passive_variant(world_params):
    """Test that the passive avatar is less expressive and keeps its lip motion."""
    clip = generate_clip(4, 400, world_params)
    passive = passive_variant(clip)
    expression = list(EXPRESSION)
    assert passive.avatar_motion[:, expression].var() < clip.avatar_motion[:, expression].var()
    assert np.array_equal(passive.avatar_motion[:, LIP], clip.avatar_motion[:, LIP])
    assert np.count_nonzero(passive.avatar_reaction) == 0
    assert np.array_equal(passive.user_motion, clip.user_motion)


def test_passive_variant_worsens_rpcc():
    """Test that removing the reactive terms moves the avatar's user correlation away from the original."""
    clip = generate_clip(7, 3000, WorldParams(smile_rate=0.03))
    passive = passive_variant(clip)
    original = rpcc(clip.avatar_motion, clip.avatar_motion, clip.user_motion).values["Exp"]
    worsened = rpcc(clip.avatar_motion, passive.avatar_motion, clip.user_motion).values["Exp"]
    assert original == 0.0
    assert worsened > 0.1


def test_expressiveness_gap(world_params):
    """Test that the avatar varies its expression less while listening than while speaking."""
    listening, speaking = expressiveness_gap(generate_clips(0, 20, 300, world_params))
    assert listening < speaking


def test_mirror_predictor_beats_audio_only(world_params):
    """Test that a predictor seeing the user tracks the user correlation better."""
    clips = generate_clips(1, 10, 1000, WorldParams(smile_rate=0.03))
    mirror, audio_only = [], []
    for i, clip in enumerate(clips):
        mirror.append(rpcc(clip.avatar_motion, lagged_mirror_predictor(clip, world_params, i), clip.user_motion).values["Exp"])
        audio_only.append(rpcc(clip.avatar_motion, audio_only_predictor(clip, i), clip.user_motion).values["Exp"])
    assert np.mean(mirror) < np.mean(audio_only)


def test_identity_sequences(world_params):
    """Test that every clip contributes its user and its avatar."""
    clips = generate_clips(0, 3, 100, world_params)
    sequences = identity_sequences(clips)
    assert len(sequences) == 6
    assert np.array_equal(sequences[1][0], clips[0].avatar_identity)


def test_raised_cosine():
    """Test that the bump is positive, symmetric and peaks at one."""
    bump = raised_cosine(15)
    assert bump.shape == (15,)
    assert (bump > 0).all()
    assert np.allclose(bump, bump[::-1])
    assert bump.max() == pytest.approx(1.0)
