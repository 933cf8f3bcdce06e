"""
Latent codec module.

This module provides the synthetic observation space (a frozen linear
mixing of identity and motion parameters) and the small auto-encoder
whose latent splits as z = z_S + m, trained by cross-reconstruction
within identity plus a cross-identity reenactment term.
"""

import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from pydantic import BaseModel, Field
from torch import nn
from tqdm import tqdm

from ..core.checkpoint import load_params, read_meta, save_params, split_prefix, with_prefix, write_meta
from ..core.config import TOOL_VERSION, CodecConfig
from ..core.errors import ArtifactMismatchError, NumericAbortError, UntrainedCodecError
from ..core.numeric import SeededRng, backprop, derive_seed
from ..core.params import AdamState, ParamStore, adam_step
from ..models.attention import initialize_parameters

logger = logging.getLogger(__name__)

CODEC_PREFIX = "codec/"
MOTION_DIM = 6

IdentitySequence = Tuple[np.ndarray, np.ndarray]


class ObservationSpace:
    """
    Frozen affine map from (identity, motion) parameters to observations.

    obs = W_id @ id + W_mo @ motion + b, with [W_id W_mo] having orthonormal
    columns drawn from the world seed.

    Args:
        obs_dim: Observation dimension.
        id_dim: Identity parameter dimension.
        motion_dim: Motion parameter dimension.
        world_seed: Seed of the mixing matrices and offset.
    """

    def __init__(self, obs_dim: int = 32, id_dim: int = 8, motion_dim: int = MOTION_DIM, world_seed: int = 1234):
        if id_dim + motion_dim > obs_dim:
            raise ValueError(
                f"Observation dimension {obs_dim} cannot hold {id_dim} identity and "
                f"{motion_dim} motion parameters"
            )
        self.obs_dim = obs_dim
        self.id_dim = id_dim
        self.motion_dim = motion_dim
        self.world_seed = world_seed
        rng = np.random.default_rng(derive_seed(world_seed, "observation-space"))
        q, r = np.linalg.qr(rng.standard_normal((obs_dim, id_dim + motion_dim)))
        # fix column signs so the basis is unique per seed
        q = q * np.sign(np.diag(r))[None, :]
        self.w_id = q[:, :id_dim]
        self.w_mo = q[:, id_dim:]
        self.offset = 0.1 * rng.standard_normal(obs_dim)

    @classmethod
    def from_config(cls, config: CodecConfig) -> "ObservationSpace":
        return cls(config.obs_dim, config.id_dim, MOTION_DIM, config.world_seed)

    def synth_observation(self, id_params: np.ndarray, motion_params: np.ndarray) -> np.ndarray:
        """
        Mix identity and motion parameters into observations.

        Args:
            id_params: (..., id_dim) identity parameters.
            motion_params: (..., motion_dim) motion parameters.

        Returns:
            (..., obs_dim) observations.
        """
        id_params = np.asarray(id_params, dtype=np.float64)
        motion_params = np.asarray(motion_params, dtype=np.float64)
        return id_params @ self.w_id.T + motion_params @ self.w_mo.T + self.offset

    def oracle_motion(self, observations: np.ndarray) -> np.ndarray:
        """Recover the motion parameters of observations exactly."""
        return (np.asarray(observations, dtype=np.float64) - self.offset) @ self.w_mo

    def oracle_identity(self, observations: np.ndarray) -> np.ndarray:
        return (np.asarray(observations, dtype=np.float64) - self.offset) @ self.w_id

    def orthonormality_error(self) -> float:
        w = np.concatenate([self.w_id, self.w_mo], axis=1)
        return float(np.abs(w.T @ w - np.eye(w.shape[1])).max())


def _perceptron(in_dim: int, hidden: int, out_dim: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(in_dim, hidden), nn.GELU(), nn.Linear(hidden, out_dim))


class LatentCodec(nn.Module):
    """
    Encoder/decoder over observations with an additive latent z = z_S + m.

    Args:
        config: Codec settings.
        seed: Seed of the parameter initialisation.
    """

    def __init__(self, config: CodecConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.trunk = nn.Sequential(nn.Linear(config.obs_dim, config.hidden), nn.GELU())
        self.identity_head = nn.Linear(config.hidden, config.latent_dim)
        self.motion_head = nn.Linear(config.hidden, config.latent_dim)
        self.decoder = _perceptron(config.latent_dim, config.hidden, config.obs_dim)
        self.trained = False
        initialize_parameters(self, seed)

    def encode(self, observations: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Split observations into identity and motion latents.

        Returns:
            (z_S, m), each (..., d).
        """
        if not self.trained:
            logger.warning("Encoding with an untrained codec")
        features = self.trunk(observations)
        return self.identity_head(features), self.motion_head(features)

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        """Map a full latent z = z_S + m back to observation space."""
        return self.decoder(latent)

    def reenact(self, source: torch.Tensor, driving: torch.Tensor) -> torch.Tensor:
        """Decode the source's identity latent with the driving frame's motion latent."""
        features_s = self.trunk(source)
        features_d = self.trunk(driving)
        return self.decode(self.identity_head(features_s) + self.motion_head(features_d))

    def parameter_store(self) -> ParamStore:
        return ParamStore.from_module(self)


class CodecTrainingResult(BaseModel):
    """
    Outcome of codec training.

    Args:
        losses: Total loss per step.
        skipped_identities: Identities with fewer than two frames.
    """

    losses: List[float] = Field(default_factory=list)
    skipped_identities: int = 0

    @property
    def initial_loss(self) -> float:
        return self.losses[0] if self.losses else math.nan

    @property
    def final_loss(self) -> float:
        tail = self.losses[-10:]
        return float(np.mean(tail)) if tail else math.nan


def train_codec(
    codec: LatentCodec,
    space: ObservationSpace,
    sequences: Sequence[IdentitySequence],
    steps: Optional[int] = None,
    progress: bool = False,
) -> CodecTrainingResult:
    """
    Train the codec in place.

    Each step reconstructs a driving frame D from z_S(S) + m(D) with S and
    D drawn from the same identity, and reenacts a frame of identity A with
    the motion of identity B against the world's ground-truth observation.

    Args:
        codec: The codec to train.
        space: Observation space generating the frames.
        sequences: (identity parameters, motion parameters (N, 6)) per identity.
        steps: Number of steps; defaults to the codec configuration.
        progress: Show a progress bar.

    Returns:
        The loss trace and the number of skipped identities.

    Raises:
        ValueError: If no identity has two or more frames.
        NumericAbortError: If the loss becomes non-finite.
    """
    config = codec.config
    steps = config.steps if steps is None else steps
    usable = [(np.asarray(i), np.asarray(m)) for i, m in sequences if len(m) >= 2]
    skipped = len(sequences) - len(usable)
    if skipped:
        logger.warning(f"Skipped {skipped} identities with fewer than two frames")
    if not usable:
        raise ValueError("Codec training needs at least one identity with two or more frames")

    dtype = next(codec.parameters()).dtype
    identities = np.stack([i for i, _ in usable])
    motions = [m for _, m in usable]
    observations = [
        torch.as_tensor(space.synth_observation(i, m), dtype=dtype) for i, m in usable
    ]

    store = codec.parameter_store()
    state = AdamState(store, lr=config.lr)
    rng = SeededRng(derive_seed(config.seed, "codec-train"))
    result = CodecTrainingResult(skipped_identities=skipped)
    batch = config.batch_size
    lengths = torch.tensor([len(m) for m in motions], dtype=torch.float64)

    def frames_of(seq: torch.Tensor) -> List[int]:
        return (rng.uniform((len(seq),), torch.float64) * lengths[seq]).long().tolist()

    for step in tqdm(range(steps), desc="codec", disable=not progress):
        seq_index = rng.randint(0, len(usable), (batch,))
        seq = seq_index.tolist()
        src_frames = frames_of(seq_index)
        drv_frames = frames_of(seq_index)
        source = torch.stack([observations[s][f] for s, f in zip(seq, src_frames)])
        driving = torch.stack([observations[s][f] for s, f in zip(seq, drv_frames)])
        loss = ((codec.reenact(source, driving) - driving) ** 2).mean()

        if config.cross_weight > 0 and len(usable) > 1:
            shift = rng.randint(1, len(usable), (batch,))
            other_index = (seq_index + shift) % len(usable)
            other = other_index.tolist()
            other_frames = frames_of(other_index)
            foreign = torch.stack([observations[o][f] for o, f in zip(other, other_frames)])
            target = torch.as_tensor(
                space.synth_observation(
                    identities[seq], np.stack([motions[o][f] for o, f in zip(other, other_frames)])
                ),
                dtype=dtype,
            )
            loss = loss + config.cross_weight * ((codec.reenact(source, foreign) - target) ** 2).mean()

        value = loss.item()
        if not math.isfinite(value):
            raise NumericAbortError(f"Codec loss became {value} at step {step}", step=step)
        result.losses.append(value)
        adam_step(store, backprop(loss, store), state)

    codec.trained = True
    logger.info(
        f"Codec trained for {steps} steps: loss {result.initial_loss:.4g} -> {result.final_loss:.4g}"
    )
    return result


def encode_parameters(
    codec: LatentCodec, space: ObservationSpace, id_params: np.ndarray, motion_params: np.ndarray
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Encode parameter sequences through the observation space.

    Raises:
        UntrainedCodecError: If the codec has not been trained.
    """
    if not codec.trained:
        raise UntrainedCodecError("Embedding motion needs a trained codec")
    dtype = next(codec.parameters()).dtype
    obs = torch.as_tensor(space.synth_observation(id_params, motion_params), dtype=dtype)
    with torch.no_grad():
        return codec.encode(obs)


def decode_parameters(
    codec: LatentCodec, space: ObservationSpace, z_s: torch.Tensor, motion: torch.Tensor
) -> np.ndarray:
    """Decode z_S + m and recover motion parameters with the world oracle."""
    with torch.no_grad():
        obs = codec.decode(z_s + motion)
    return space.oracle_motion(obs.double().numpy())


def save_codec(codec: LatentCodec, path: Union[str, Path], meta: Optional[dict] = None) -> None:
    """Write a codec checkpoint with the "codec/" name prefix and its sidecar."""
    save_params(with_prefix(codec.parameter_store(), CODEC_PREFIX), path)
    header = {"artifact": "codec", "tool_version": TOOL_VERSION, "codec.trained": str(codec.trained).lower()}
    for key, value in codec.config.model_dump().items():
        header[f"codec.{key}"] = str(value)
    if meta:
        header.update(meta)
    write_meta(path, header)


def load_codec(path: Union[str, Path], config: CodecConfig) -> LatentCodec:
    """
    Read a codec checkpoint.

    Raises:
        ArtifactMismatchError: If the checkpoint does not fit `config`.
    """
    codec = LatentCodec(config)
    store = split_prefix(load_params(path), CODEC_PREFIX)
    try:
        store.load_into(codec)
    except (KeyError, ValueError) as e:
        raise ArtifactMismatchError(f"Codec checkpoint {path} does not fit the configuration: {e}") from e
    codec.trained = read_meta(path).get("codec.trained", "false") == "true"
    return codec
