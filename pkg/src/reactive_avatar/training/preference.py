"""
Preference optimisation module.

This module builds winner/loser pairs (ground-truth motion against the
generations of a model that only hears the avatar's own audio), computes
the diffusion-forcing DPO loss against a frozen reference field and
fine-tunes with L_DF + lambda * L_DPO.
"""

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import torch
import torch.nn.functional as F
from pydantic import BaseModel, Field
from tqdm import tqdm

from ..core.config import DPOConfig, ModelConfig, SamplerConfig, TrainConfig
from ..core.errors import ArtifactMismatchError, NumericAbortError
from ..core.field import VectorField
from ..core.numeric import SeededRng, backprop, gaussian
from ..core.params import AdamState, adam_step
from ..core.schema import ConditionTriplet, PreferencePair
from ..models.vector_field import MotionVectorField
from ..sampling.session import stream_clip
from ..utils.csv_out import write_csv
from ..world.dataset import LatentClip
from .diffusion_forcing import (
    DropCounter,
    TrainResult,
    df_step_loss,
    noise_interpolate,
    sample_flow_times,
    step_rng,
    train,
)

logger = logging.getLogger(__name__)

FINETUNE_COLUMNS = ("step", "df_loss", "dpo_loss", "total", "accuracy", "lr", "wall_ms")


def talking_only_config(config: ModelConfig) -> ModelConfig:
    """Return the architecture with both user streams removed from the condition."""
    return config.model_copy(update={"user_motion": False, "user_audio": False})


def train_talking_only(
    clips: Sequence[LatentClip],
    model_config: ModelConfig,
    train_config: TrainConfig,
    seed: int = 0,
    **train_kwargs,
) -> Tuple[MotionVectorField, TrainResult]:
    """
    Train a field whose condition keeps only the avatar audio.

    The user audio and user motion streams are zeroed inside the encoder at
    training and at inference time; the parameter shapes equal the full
    model's.
    """
    model = MotionVectorField(talking_only_config(model_config), seed=seed)
    result = train(model, clips, train_config, **train_kwargs)
    return model, result


def build_pairs(
    clips: Sequence[LatentClip],
    talking_model: VectorField,
    sampler_config: SamplerConfig,
) -> Tuple[List[PreferencePair], int]:
    """
    Pair each clip's ground-truth avatar motion (winner) with the talking-only
    model's generation under the same avatar audio (loser).

    Clips whose generation fails or is not finite are skipped.

    Returns:
        The pairs and the number of skipped clips.
    """
    pairs: List[PreferencePair] = []
    skipped = 0
    size = talking_model.block_size
    for clip in clips:
        n = (clip.n_frames // size) * size
        try:
            if n == 0:
                raise ValueError(f"clip shorter than one block of {size} frames")
            config = sampler_config.model_copy(update={"seed": sampler_config.seed + clip.clip_index})
            loser = stream_clip(talking_model, clip.condition(0, n), clip.z_s, clip.m_s, config)
            if not bool(torch.isfinite(loser).all()):
                raise ValueError("generation is not finite")
        except (ValueError, RuntimeError) as e:
            skipped += 1
            logger.warning(f"Skipping preference pair for clip {clip.clip_index}: {e}")
            continue
        pairs.append(
            PreferencePair(
                winner=clip.avatar_motion[:n].clone(),
                loser=loser.to(clip.avatar_motion.dtype),
                condition=clip.condition(0, n),
                reference_motion=clip.m_s.clone(),
                clip_index=clip.clip_index,
            )
        )
    logger.info(f"Built {len(pairs)} preference pairs, skipped {skipped}")
    return pairs, skipped


@dataclass
class DPOLossOutput:
    """DPO loss with its diagnostics."""

    loss: torch.Tensor
    margin: torch.Tensor
    winner_reward: torch.Tensor
    loser_reward: torch.Tensor
    accuracy: torch.Tensor


def _check_architecture(field: VectorField, ref: VectorField) -> None:
    config, ref_config = getattr(field, "config", None), getattr(ref, "config", None)
    if field.latent_dim != ref.latent_dim or config != ref_config:
        raise ArtifactMismatchError("Reference field architecture differs from the trained field")


def dpo_loss(
    field: VectorField,
    ref: VectorField,
    pair: PreferencePair,
    rng: SeededRng,
    beta: float = 1000.0,
    reduction: str = "sequence",
) -> DPOLossOutput:
    """
    Diffusion-forcing DPO loss.

    Winner and loser are noised from the same m0 with the same per-frame
    flow times. With e the per-frame L1 error of a field against the target
    m - m0, the margin is (e_w - e_ref_w) - (e_l - e_ref_l) and the loss is
    -log sigmoid(-beta * margin).

    Args:
        field: The field being fine-tuned.
        ref: The frozen reference field.
        pair: A pair, unbatched (N, d) or batched (B, N, d).
        rng: Random stream of m0 and the flow times.
        beta: Deviation parameter.
        reduction: "sequence" averages errors over frames before the
                   sigmoid; "frame" applies it per frame and averages.

    Raises:
        ArtifactMismatchError: If the reference architecture differs.
        ValueError: For an unknown reduction.
    """
    _check_architecture(field, ref)
    if reduction not in ("sequence", "frame"):
        raise ValueError(f"Unknown DPO reduction '{reduction}'")
    winner, loser = pair.winner, pair.loser
    m_s = pair.reference_motion
    condition = pair.condition
    if winner.dim() == 2:
        winner, loser, m_s = winner.unsqueeze(0), loser.unsqueeze(0), m_s.unsqueeze(0)
        condition = condition.batched()
    size, n, _ = winner.shape
    m0 = gaussian(rng, winner.shape, winner.dtype)
    times = sample_flow_times(n, rng, "independent", batch=size, dtype=winner.dtype)

    def frame_errors(model: VectorField, target: torch.Tensor) -> torch.Tensor:
        cond = model.encode_condition(condition)
        prediction = model.predict_vector_field(noise_interpolate(target, m0, times), times, cond, m_s)
        return (prediction - (target - m0)).abs().mean(dim=-1)

    err_w, err_l = frame_errors(field, winner), frame_errors(field, loser)
    with torch.no_grad():
        ref_w, ref_l = frame_errors(ref, winner), frame_errors(ref, loser)
    if reduction == "sequence":
        err_w, err_l, ref_w, ref_l = (e.mean(dim=-1) for e in (err_w, err_l, ref_w, ref_l))
    winner_reward = -(err_w - ref_w)
    loser_reward = -(err_l - ref_l)
    margin = (err_w - ref_w) - (err_l - ref_l)
    loss = -F.logsigmoid(-beta * margin).mean()
    return DPOLossOutput(
        loss=loss,
        margin=margin.detach().mean(),
        winner_reward=winner_reward.detach().mean(),
        loser_reward=loser_reward.detach().mean(),
        accuracy=(winner_reward > loser_reward).to(winner.dtype).mean(),
    )


def pair_batch(
    pairs: Sequence[PreferencePair], rng: SeededRng, batch_size: int, window: int, block_size: int
) -> PreferencePair:
    """Crop block-aligned windows of equal length from sampled pairs and batch them."""
    length = min(p.winner.shape[-2] for p in pairs)
    window = max(block_size, (min(window, length) // block_size) * block_size)
    choices = rng.randint(0, len(pairs), (batch_size,)).tolist()
    starts = (rng.uniform((batch_size,), torch.float64) * (length - window + 1)).long().tolist()
    crops = [pairs[c] for c in choices]
    return PreferencePair(
        winner=torch.stack([p.winner[s:s + window] for p, s in zip(crops, starts)]),
        loser=torch.stack([p.loser[s:s + window] for p, s in zip(crops, starts)]),
        condition=ConditionTriplet.stack([p.condition.frames(s, s + window) for p, s in zip(crops, starts)]),
        reference_motion=torch.stack([p.reference_motion for p in crops]),
        clip_index=crops[0].clip_index,
    )


class FinetuneResult(BaseModel):
    """
    Outcome of preference fine-tuning.

    Args:
        df_losses: L_DF per step.
        dpo_losses: L_DPO per step.
        totals: L_DF + lambda * L_DPO per step.
        accuracy: Preference accuracy per step.
        wall_ms: Wall-clock milliseconds per step (zeros without timing).
    """

    df_losses: List[float] = Field(default_factory=list)
    dpo_losses: List[float] = Field(default_factory=list)
    totals: List[float] = Field(default_factory=list)
    accuracy: List[float] = Field(default_factory=list)
    wall_ms: List[float] = Field(default_factory=list)
    counter: DropCounter = Field(default_factory=DropCounter)


def finetune(
    model: VectorField,
    ref: VectorField,
    pairs: Sequence[PreferencePair],
    clips: Sequence[LatentClip],
    dpo_config: DPOConfig,
    train_config: TrainConfig,
    trace_path: Optional[Union[str, Path]] = None,
    record_timing: bool = True,
    progress: bool = False,
    provenance: Optional[dict] = None,
) -> FinetuneResult:
    """
    Fine-tune `model` in place on L_DF + lambda * L_DPO.

    The DF term draws its windows exactly as `train` does with seed
    `dpo_config.seed`, so lambda = 0 reproduces continued DF training.
    The reference is never updated.

    Raises:
        ValueError: If there are no pairs or no clips.
        ArtifactMismatchError: If the reference architecture differs.
        NumericAbortError: If the total loss becomes non-finite.
    """
    if not pairs or not clips:
        raise ValueError("Fine-tuning needs preference pairs and clips")
    _check_architecture(model, ref)
    store = model.parameter_store()
    state = AdamState(store, lr=dpo_config.lr)
    result = FinetuneResult()
    dpo_seed = SeededRng(dpo_config.seed)

    for step in tqdm(range(dpo_config.steps), desc="dpo", disable=not progress):
        started = time.perf_counter()
        rng = step_rng(dpo_config.seed, step)
        df = df_step_loss(
            model, clips, rng, dpo_config.batch_size, train_config.window,
            train_config.p_drop, train_config.time_scheme, result.counter,
        )
        pair_rng = dpo_seed.spawn("dpo-step", step)
        batch = pair_batch(pairs, pair_rng.spawn("batch"), dpo_config.batch_size, train_config.window, model.block_size)
        if dpo_config.lam == 0.0:
            with torch.no_grad():
                preference = dpo_loss(model, ref, batch, pair_rng.spawn("noise"), dpo_config.beta, dpo_config.reduction)
            total = df
        else:
            preference = dpo_loss(model, ref, batch, pair_rng.spawn("noise"), dpo_config.beta, dpo_config.reduction)
            total = df + dpo_config.lam * preference.loss
        value = total.item()
        if not math.isfinite(value):
            raise NumericAbortError(
                f"Fine-tuning loss became {value} at step {step} (batch seed {rng.seed})",
                step=step,
                batch_seed=rng.seed,
            )
        adam_step(store, backprop(total, store), state)
        result.df_losses.append(df.item())
        result.dpo_losses.append(preference.loss.item())
        result.totals.append(value)
        result.accuracy.append(preference.accuracy.item())
        result.wall_ms.append((time.perf_counter() - started) * 1000.0 if record_timing else 0.0)

    if result.accuracy:
        logger.info(
            f"Fine-tuned {dpo_config.steps} steps: L_DPO {result.dpo_losses[0]:.4f} -> "
            f"{result.dpo_losses[-1]:.4f}, accuracy {result.accuracy[-1]:.2f}"
        )
    if trace_path is not None:
        rows = [
            {
                "step": i,
                "df_loss": result.df_losses[i],
                "dpo_loss": result.dpo_losses[i],
                "total": result.totals[i],
                "accuracy": result.accuracy[i],
                "lr": dpo_config.lr,
                "wall_ms": result.wall_ms[i],
            }
            for i in range(len(result.totals))
        ]
        write_csv(trace_path, FINETUNE_COLUMNS, rows, provenance)
    return result
