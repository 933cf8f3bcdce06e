"""
Dataset module.

This module reads and writes the AFDS clip container and the AFPP
preference-pair container, lifts clips into motion latents through the
codec, and samples training windows.

AFDS layout (little-endian): magic "AFDS", u32 version = 1, u32 clip
count; per clip: user motion, user audio, avatar audio, avatar motion and
turn schedule in checkpoint tensor encoding, then the smile-event and
stress-peak index lists (u32 count + u32 indices each), then the user
identity, avatar identity and avatar reaction tensors.
"""

import io
import logging
import struct
from pathlib import Path
from typing import BinaryIO, List, Sequence, Union

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict

from ..codec.latent_codec import LatentCodec, ObservationSpace, encode_parameters
from ..core.checkpoint import ByteReader, decode_tensor, encode_tensor
from ..core.errors import ArtifactIOError, CheckpointFormatError
from ..core.numeric import SeededRng
from ..core.schema import ConditionTriplet, PreferencePair
from .dyadic import DyadicClip

logger = logging.getLogger(__name__)

DATASET_MAGIC = b"AFDS"
PAIRS_MAGIC = b"AFPP"
CONTAINER_VERSION = 1

PathLike = Union[str, Path]


def _write_tensor(array: np.ndarray, out: BinaryIO) -> None:
    encode_tensor(torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32)), out)


def _read_array(reader: ByteReader) -> np.ndarray:
    return decode_tensor(reader).numpy()


def _write_indices(indices: Sequence[int], out: BinaryIO) -> None:
    out.write(struct.pack("<I", len(indices)))
    out.write(struct.pack(f"<{len(indices)}I", *indices))


def _read_indices(reader: ByteReader) -> List[int]:
    count = reader.u32()
    return list(struct.unpack(f"<{count}I", reader.read(4 * count)))


def dataset_to_bytes(clips: Sequence[DyadicClip]) -> bytes:
    out = io.BytesIO()
    out.write(DATASET_MAGIC)
    out.write(struct.pack("<II", CONTAINER_VERSION, len(clips)))
    for clip in clips:
        for array in (
            clip.user_motion,
            clip.user_audio,
            clip.avatar_audio,
            clip.avatar_motion,
            clip.turn_schedule,
        ):
            _write_tensor(array, out)
        _write_indices(clip.smile_events, out)
        _write_indices(clip.stress_peaks, out)
        for array in (clip.user_identity, clip.avatar_identity, clip.avatar_reaction):
            _write_tensor(array, out)
    return out.getvalue()


def dataset_from_bytes(data: bytes, source: str = "<bytes>") -> List[DyadicClip]:
    """
    Parse an AFDS container.

    Raises:
        CheckpointFormatError: On bad magic, version or truncation.
    """
    reader = ByteReader(data, source)
    reader.expect_magic(DATASET_MAGIC)
    reader.expect_version(CONTAINER_VERSION)
    clips = []
    for _ in range(reader.u32()):
        user_motion, user_audio, avatar_audio, avatar_motion, schedule = (
            _read_array(reader) for _ in range(5)
        )
        smile_events = _read_indices(reader)
        stress_peaks = _read_indices(reader)
        user_identity, avatar_identity, reaction = (_read_array(reader) for _ in range(3))
        clips.append(
            DyadicClip(
                user_motion=user_motion,
                user_audio=user_audio,
                avatar_audio=avatar_audio,
                avatar_motion=avatar_motion,
                turn_schedule=schedule.astype(np.int8),
                smile_events=smile_events,
                stress_peaks=stress_peaks,
                user_identity=user_identity,
                avatar_identity=avatar_identity,
                avatar_reaction=reaction,
            )
        )
    if not reader.exhausted:
        raise CheckpointFormatError("truncated", f"{source}: trailing bytes after {len(clips)} clips")
    return clips


def save_dataset(clips: Sequence[DyadicClip], path: PathLike) -> None:
    """
    Write clips to an AFDS file.

    Raises:
        ArtifactIOError: If the file cannot be written.
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(dataset_to_bytes(clips))
    except OSError as e:
        raise ArtifactIOError(f"Cannot write dataset {path}: {e}") from e


def load_dataset(path: PathLike) -> List[DyadicClip]:
    """
    Read clips from an AFDS file.

    Raises:
        ArtifactIOError: If the file cannot be read or is malformed.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise ArtifactIOError(f"Cannot read dataset {path}: {e}") from e
    return dataset_from_bytes(data, str(path))


class LatentClip(BaseModel):
    """
    A clip lifted into motion latents.

    Args:
        user_motion: (N, d) user motion latents.
        avatar_motion: (N, d) avatar motion latents.
        user_audio: (N, d_a) user audio features.
        avatar_audio: (N, d_a) avatar audio features.
        z_s: (d,) avatar identity latent.
        m_s: (d,) avatar reference motion latent (frame 0).
        clip_index: Index of the source clip.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    user_motion: torch.Tensor
    avatar_motion: torch.Tensor
    user_audio: torch.Tensor
    avatar_audio: torch.Tensor
    z_s: torch.Tensor
    m_s: torch.Tensor
    clip_index: int = 0

    @property
    def n_frames(self) -> int:
        return int(self.avatar_motion.shape[0])

    def condition(self, start: int = 0, stop: int = None) -> ConditionTriplet:
        stop = self.n_frames if stop is None else stop
        return ConditionTriplet(
            user_audio=self.user_audio[start:stop],
            user_motion=self.user_motion[start:stop],
            avatar_audio=self.avatar_audio[start:stop],
        )


def embed_motion(
    clip: DyadicClip, codec: LatentCodec, space: ObservationSpace, clip_index: int = 0
) -> LatentClip:
    """
    Lift a clip's motion parameters into motion latents.

    Both parties' parameters are rendered to observations and encoded; the
    avatar's frame-0 latents give z_S and m_S.

    Raises:
        UntrainedCodecError: If the codec has not been trained.
    """
    _, user_latent = encode_parameters(
        codec, space, np.broadcast_to(clip.user_identity, (clip.n_frames, space.id_dim)), clip.user_motion
    )
    identity_latent, avatar_latent = encode_parameters(
        codec,
        space,
        np.broadcast_to(clip.avatar_identity, (clip.n_frames, space.id_dim)),
        clip.avatar_motion,
    )
    dtype = avatar_latent.dtype
    return LatentClip(
        user_motion=user_latent,
        avatar_motion=avatar_latent,
        user_audio=torch.as_tensor(clip.user_audio, dtype=dtype),
        avatar_audio=torch.as_tensor(clip.avatar_audio, dtype=dtype),
        z_s=identity_latent[0].clone(),
        m_s=avatar_latent[0].clone(),
        clip_index=clip_index,
    )


def embed_dataset(
    clips: Sequence[DyadicClip], codec: LatentCodec, space: ObservationSpace
) -> List[LatentClip]:
    return [embed_motion(clip, codec, space, i) for i, clip in enumerate(clips)]


class WindowBatch(BaseModel):
    """
    A batch of training windows.

    Args:
        target: (B, N, d) clean avatar motion latents m_1.
        condition: Batched condition triplet.
        m_s: (B, d) reference motion latents.
        starts: Window start frame per element.
        clip_indices: Source clip per element.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    target: torch.Tensor
    condition: ConditionTriplet
    m_s: torch.Tensor
    starts: List[int]
    clip_indices: List[int]


def sample_windows(
    clips: Sequence[LatentClip], rng: SeededRng, batch_size: int, window: int
) -> WindowBatch:
    """
    Draw `batch_size` windows of `window` frames uniformly over clips and starts.

    Raises:
        ValueError: If there are no clips or a clip is shorter than `window`.
    """
    if not clips:
        raise ValueError("Cannot sample windows from an empty dataset")
    choices = rng.randint(0, len(clips), (batch_size,)).tolist()
    starts, targets, conditions, refs = [], [], [], []
    for index in choices:
        clip = clips[index]
        if clip.n_frames < window:
            raise ValueError(f"Clip {clip.clip_index} has {clip.n_frames} frames, window needs {window}")
        start = rng.randint(0, clip.n_frames - window + 1, ()).item()
        starts.append(start)
        targets.append(clip.avatar_motion[start:start + window])
        conditions.append(clip.condition(start, start + window))
        refs.append(clip.m_s)
    return WindowBatch(
        target=torch.stack(targets),
        condition=ConditionTriplet.stack(conditions),
        m_s=torch.stack(refs),
        starts=starts,
        clip_indices=[clips[i].clip_index for i in choices],
    )


def pairs_to_bytes(pairs: Sequence[PreferencePair]) -> bytes:
    out = io.BytesIO()
    out.write(PAIRS_MAGIC)
    out.write(struct.pack("<II", CONTAINER_VERSION, len(pairs)))
    for pair in pairs:
        out.write(struct.pack("<I", pair.clip_index))
        for tensor in (
            pair.winner,
            pair.loser,
            pair.condition.user_audio,
            pair.condition.user_motion,
            pair.condition.avatar_audio,
            pair.reference_motion,
        ):
            encode_tensor(tensor, out)
    return out.getvalue()


def pairs_from_bytes(data: bytes, source: str = "<bytes>") -> List[PreferencePair]:
    reader = ByteReader(data, source)
    reader.expect_magic(PAIRS_MAGIC)
    reader.expect_version(CONTAINER_VERSION)
    pairs = []
    for _ in range(reader.u32()):
        clip_index = reader.u32()
        winner, loser, user_audio, user_motion, avatar_audio, reference = (
            decode_tensor(reader) for _ in range(6)
        )
        pairs.append(
            PreferencePair(
                winner=winner,
                loser=loser,
                condition=ConditionTriplet(
                    user_audio=user_audio, user_motion=user_motion, avatar_audio=avatar_audio
                ),
                reference_motion=reference,
                clip_index=clip_index,
            )
        )
    if not reader.exhausted:
        raise CheckpointFormatError("truncated", f"{source}: trailing bytes after {len(pairs)} pairs")
    return pairs


def save_pairs(pairs: Sequence[PreferencePair], path: PathLike) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(pairs_to_bytes(pairs))
    except OSError as e:
        raise ArtifactIOError(f"Cannot write preference pairs {path}: {e}") from e


def load_pairs(path: PathLike) -> List[PreferencePair]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise ArtifactIOError(f"Cannot read preference pairs {path}: {e}") from e
    return pairs_from_bytes(data, str(path))
