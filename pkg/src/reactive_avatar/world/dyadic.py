"""
Synthetic dyadic world.

This module generates two-party conversations whose reactive coupling is
known exactly: the avatar mirrors the user's smiles with a fixed lag and
gain, nods after the user's stressed syllables while listening and moves
its lips with its own speech. It also provides the passive variant of a
clip, the expressiveness analysis and two closed-form reference
predictors.
"""

import logging
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.signal import lfilter

from ..core.config import WorldParams
from ..core.numeric import derive_seed

logger = logging.getLogger(__name__)

FPS = 25
MOTION_DIM = 6
AUDIO_DIM = 4
ID_DIM = 8

POSE = (0, 1)
EXPRESSION = (2, 3)
LIP = 4
BLINK = 5
ENVELOPE = 0

USER_SPEAKS = 0
AVATAR_SPEAKS = 1

SPEAKING_MARGIN = 1.5
SILENT_MARGIN = 0.25
SMILE_LENGTH = 15
SMILE_AMPLITUDE = 1.5
NOD_LENGTH = 9
NOD_AMPLITUDE = 1.0
STRESS_LENGTH = 5
STRESS_AMPLITUDE = 0.4
OWN_EXPRESSION_PHI = 0.3
PASSIVE_SCALE = 0.3
BOUND = 3.0


class DyadicClip(BaseModel):
    """
    A synthetic two-party conversation.

    Args:
        user_motion: (N, 6) user motion parameters.
        user_audio: (N, 4) user audio features (envelope + 3 bands).
        avatar_audio: (N, 4) avatar audio features.
        avatar_motion: (N, 6) ground-truth avatar motion parameters.
        turn_schedule: (N,) speaker per frame (0 user, 1 avatar).
        smile_events: Frames at which a user smile starts.
        stress_peaks: Frames of user stressed syllables.
        user_identity: (id_dim,) identity parameters of the user.
        avatar_identity: (id_dim,) identity parameters of the avatar.
        avatar_reaction: (N, 6) reactive part of the avatar motion.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    user_motion: np.ndarray
    user_audio: np.ndarray
    avatar_audio: np.ndarray
    avatar_motion: np.ndarray
    turn_schedule: np.ndarray
    smile_events: List[int] = Field(default_factory=list)
    stress_peaks: List[int] = Field(default_factory=list)
    user_identity: np.ndarray
    avatar_identity: np.ndarray
    avatar_reaction: np.ndarray

    @property
    def n_frames(self) -> int:
        return int(self.user_motion.shape[0])


def raised_cosine(length: int) -> np.ndarray:
    """A bump of `length` frames rising from 0 to 1 and back."""
    k = np.arange(length)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * (k + 1) / (length + 1)))


def _place(n: int, starts: Sequence[int], shape: np.ndarray) -> np.ndarray:
    signal = np.zeros(n)
    for s in starts:
        stop = min(n, s + len(shape))
        if 0 <= s < n:
            signal[s:stop] += shape[: stop - s]
    return signal


def _ar1(rng: np.random.Generator, sigma: np.ndarray, phi: float) -> np.ndarray:
    return lfilter([1.0], [1.0, -phi], rng.standard_normal(len(sigma)) * sigma)


def _shift(signal: np.ndarray, lag: int) -> np.ndarray:
    shifted = np.zeros_like(signal)
    if lag < len(signal):
        shifted[lag:] = signal[: len(signal) - lag]
    return shifted


def _bounded(values: np.ndarray) -> np.ndarray:
    return np.clip(values, -BOUND, BOUND).astype(np.float32)


def _turns(rng: np.random.Generator, n: int, params: WorldParams) -> np.ndarray:
    schedule = np.zeros(n, dtype=np.int8)
    speaker = int(rng.integers(0, 2))
    frame = 0
    while frame < n:
        length = int(rng.integers(params.turn_min, params.turn_max + 1))
        schedule[frame:frame + length] = speaker
        frame += length
        speaker = 1 - speaker
    return schedule


def _speech(rng: np.random.Generator, speaking: np.ndarray, threshold: float) -> np.ndarray:
    """Audio features: envelope >= 1.5 * threshold while speaking, <= 0.25 * threshold while silent."""
    n = len(speaking)
    t = np.arange(n)
    syllable = 0.5 + 0.5 * np.sin(2.0 * np.pi * t / 6.25 + rng.uniform(0, 2 * np.pi))
    jitter = np.clip(syllable + 0.1 * rng.standard_normal(n), 0.0, 1.0)
    floor, ceiling = SPEAKING_MARGIN * threshold, SILENT_MARGIN * threshold
    envelope = np.where(speaking, floor + 0.6 * jitter, ceiling * rng.uniform(size=n))
    features = np.empty((n, AUDIO_DIM))
    features[:, ENVELOPE] = envelope
    for band in range(1, AUDIO_DIM):
        period = rng.uniform(4.0, 30.0)
        phase = rng.uniform(0, 2 * np.pi)
        features[:, band] = envelope * (0.5 + 0.5 * np.sin(2.0 * np.pi * t / period + phase))
    return features


def _blinks(rng: np.random.Generator, n: int) -> np.ndarray:
    starts = np.flatnonzero(rng.uniform(size=n) < 1.0 / 75.0)
    return _place(n, starts.tolist(), raised_cosine(4))


def generate_clip(seed: int, n: int, params: WorldParams) -> DyadicClip:
    """
    Generate one conversation.

    Args:
        seed: Clip seed; equal seeds and parameters give identical clips.
        n: Number of frames at 25 fps.
        params: World parameters.

    Returns:
        The clip.

    Raises:
        ValueError: If `n` is shorter than two minimum-length turns.
    """
    if n < 2 * params.turn_min:
        raise ValueError(f"Clip of {n} frames is shorter than two turns of {params.turn_min}")
    rng = np.random.default_rng(derive_seed(seed, "dyadic-clip"))
    lag, gain, sigma_w = params.reaction_lag, params.reaction_gain, params.noise_scale

    schedule = _turns(rng, n, params)
    user_speaking = schedule == USER_SPEAKS
    avatar_speaking = schedule == AVATAR_SPEAKS

    user_audio = _speech(rng, user_speaking, params.speak_threshold)
    peak_draws = rng.uniform(size=n) < params.stress_rate
    stress_peaks = np.flatnonzero(peak_draws & user_speaking).tolist()
    stress = _place(n, [p - STRESS_LENGTH // 2 for p in stress_peaks], raised_cosine(STRESS_LENGTH))
    user_audio[:, ENVELOPE] += STRESS_AMPLITUDE * stress * user_speaking
    avatar_audio = _speech(rng, avatar_speaking, params.speak_threshold)

    smile_events = np.flatnonzero(rng.uniform(size=n) < params.smile_rate).tolist()
    smile = SMILE_AMPLITUDE * _place(n, smile_events, raised_cosine(SMILE_LENGTH))

    user_motion = np.zeros((n, MOTION_DIM))
    user_motion[:, POSE[0]] = _ar1(rng, np.full(n, 0.15), 0.9)
    user_motion[:, POSE[1]] = _ar1(rng, np.full(n, 0.15), 0.9)
    user_motion[:, EXPRESSION[0]] = smile + _ar1(rng, np.full(n, 0.1), OWN_EXPRESSION_PHI)
    user_motion[:, EXPRESSION[1]] = 0.5 * smile + _ar1(rng, np.full(n, 0.1), OWN_EXPRESSION_PHI)
    user_motion[:, LIP] = 2.0 * user_audio[:, ENVELOPE] * user_speaking
    user_motion[:, BLINK] = _blinks(rng, n)

    reaction = np.zeros((n, MOTION_DIM))
    reaction[:, EXPRESSION[0]] = gain * _shift(smile, lag)
    reaction[:, EXPRESSION[1]] = gain * 0.5 * _shift(smile, lag)
    nods = [p + lag for p in stress_peaks if not avatar_speaking[p]]
    reaction[:, POSE[0]] = gain * NOD_AMPLITUDE * _place(n, nods, raised_cosine(NOD_LENGTH))

    own_sigma = np.where(avatar_speaking, 0.6, 0.2)
    avatar_motion = np.zeros((n, MOTION_DIM))
    avatar_motion[:, POSE[0]] = _ar1(rng, np.where(avatar_speaking, 0.2, 0.1), 0.9)
    avatar_motion[:, POSE[1]] = _ar1(rng, np.where(avatar_speaking, 0.2, 0.1), 0.9)
    avatar_motion[:, EXPRESSION[0]] = _ar1(rng, own_sigma, OWN_EXPRESSION_PHI)
    avatar_motion[:, EXPRESSION[1]] = _ar1(rng, own_sigma, OWN_EXPRESSION_PHI)
    avatar_motion[:, LIP] = 2.0 * avatar_audio[:, ENVELOPE] * avatar_speaking
    avatar_motion[:, BLINK] = _blinks(rng, n)
    avatar_motion += reaction

    user_motion += sigma_w * rng.standard_normal(user_motion.shape)
    avatar_motion += sigma_w * rng.standard_normal(avatar_motion.shape)

    return DyadicClip(
        user_motion=_bounded(user_motion),
        user_audio=_bounded(user_audio),
        avatar_audio=_bounded(avatar_audio),
        avatar_motion=_bounded(avatar_motion),
        turn_schedule=schedule,
        smile_events=smile_events,
        stress_peaks=stress_peaks,
        user_identity=rng.standard_normal(ID_DIM).astype(np.float32),
        avatar_identity=rng.standard_normal(ID_DIM).astype(np.float32),
        avatar_reaction=reaction.astype(np.float32),
    )


def generate_clips(seed: int, count: int, n: int, params: WorldParams) -> List[DyadicClip]:
    """Generate `count` clips with per-clip seeds derived from `seed`."""
    return [generate_clip(derive_seed(seed, "clip", i), n, params) for i in range(count)]


def passive_variant(clip: DyadicClip) -> DyadicClip:
    """
    Remove the reactive behaviour of a clip's avatar.

    Reactive terms are subtracted, every non-lip channel is scaled by 0.3
    and the lip channel is kept as is.
    """
    passive = (clip.avatar_motion - clip.avatar_reaction) * PASSIVE_SCALE
    passive[:, LIP] = clip.avatar_motion[:, LIP]
    return clip.model_copy(
        update={
            "avatar_motion": _bounded(passive),
            "avatar_reaction": np.zeros_like(clip.avatar_reaction),
        }
    )


def lagged_correlation(x: np.ndarray, y: np.ndarray, max_lag: int) -> np.ndarray:
    """Pearson correlation of x(t) with y(t + k) for k = 0..max_lag."""
    values = []
    for k in range(max_lag + 1):
        a, b = x[: len(x) - k], y[k:]
        values.append(np.corrcoef(a, b)[0, 1])
    return np.asarray(values)


def expressiveness_gap(clips: Sequence[DyadicClip]) -> Tuple[float, float]:
    """
    Mean temporal variance of avatar expression while listening and while speaking.

    Returns:
        (listening variance, speaking variance), averaged over clips and
        expression channels.
    """
    listening, speaking = [], []
    for clip in clips:
        expression = clip.avatar_motion[:, list(EXPRESSION)]
        for store, mask in (
            (listening, clip.turn_schedule == USER_SPEAKS),
            (speaking, clip.turn_schedule == AVATAR_SPEAKS),
        ):
            if mask.sum() >= 2:
                store.append(np.var(expression[mask], axis=0).mean())
    return float(np.mean(listening)), float(np.mean(speaking))


def _audio_driven(clip: DyadicClip, rng: np.random.Generator) -> np.ndarray:
    n = clip.n_frames
    avatar_speaking = clip.turn_schedule == AVATAR_SPEAKS
    prediction = np.zeros((n, MOTION_DIM))
    own_sigma = np.where(avatar_speaking, 0.6, 0.2)
    for channel in EXPRESSION:
        prediction[:, channel] = _ar1(rng, own_sigma, OWN_EXPRESSION_PHI)
    prediction[:, LIP] = 2.0 * clip.avatar_audio[:, ENVELOPE] * avatar_speaking
    return prediction


def audio_only_predictor(clip: DyadicClip, seed: int = 0) -> np.ndarray:
    """
    Best guess of the avatar motion without access to the user: lip from
    the avatar's envelope and expression as independent noise of matched
    variance.
    """
    return _audio_driven(clip, np.random.default_rng(derive_seed(seed, "audio-only")))


def lagged_mirror_predictor(clip: DyadicClip, params: WorldParams, seed: int = 0) -> np.ndarray:
    """
    Prediction with access to user motion: the audio-only guess plus the
    user's expression mirrored with the world's lag and gain.
    """
    prediction = _audio_driven(clip, np.random.default_rng(derive_seed(seed, "audio-only")))
    for channel in EXPRESSION:
        prediction[:, channel] += params.reaction_gain * _shift(
            clip.user_motion[:, channel], params.reaction_lag
        )
    return prediction


def identity_sequences(clips: Sequence[DyadicClip]) -> List[Tuple[np.ndarray, np.ndarray]]:
    """(identity, motion) pairs of every user and avatar, for codec training."""
    sequences = []
    for clip in clips:
        sequences.append((clip.user_identity, clip.user_motion))
        sequences.append((clip.avatar_identity, clip.avatar_motion))
    return sequences
