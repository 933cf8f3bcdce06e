"""
Diffusion-forcing trainer module.

This module trains a VectorField with per-frame independent flow times:
each window is noised along the straight path x_t = t m1 + (1 - t) m0
and the field regresses the target m1 - m0 under an L1 loss, with the
whole window's condition replaced by the null condition with probability
p_drop.
"""

import logging
import math
import time
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import torch
from pydantic import BaseModel, Field
from tqdm import tqdm

from ..core.config import TrainConfig
from ..core.errors import NumericAbortError, ShapeMismatchError
from ..core.field import VectorField
from ..core.numeric import SeededRng, backprop, gaussian
from ..core.params import AdamState, adam_step
from ..core.schema import FlowTimes, as_times_tensor
from ..utils.csv_out import write_csv
from ..world.dataset import LatentClip, WindowBatch, sample_windows

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("step", "loss", "lr", "wall_ms")


def sample_flow_times(
    n: int,
    rng: SeededRng,
    scheme: str = "independent",
    block_size: int = 1,
    batch: Optional[int] = None,
    dtype: torch.dtype = torch.float32,
) -> FlowTimes:
    """
    Draw per-frame flow times.

    Args:
        n: Number of frames.
        rng: Random stream.
        scheme: "independent" draws t_n ~ U[0, 1) per frame; "blockwise"
                draws one value per block and broadcasts it within the block.
        block_size: Frames per block for the blockwise scheme.
        batch: Leading batch size, or None for a single sequence.
        dtype: Floating dtype of the times.

    Raises:
        ValueError: For an unknown scheme.
    """
    lead = () if batch is None else (batch,)
    if scheme == "independent":
        values = rng.uniform(lead + (n,), dtype)
    elif scheme == "blockwise":
        blocks = math.ceil(n / block_size)
        values = rng.uniform(lead + (blocks,), dtype).repeat_interleave(block_size, dim=-1)[..., :n]
    else:
        raise ValueError(f"Unknown flow-time scheme '{scheme}'")
    return FlowTimes(values=values)


def noise_interpolate(
    m1: torch.Tensor, m0: torch.Tensor, times: Union[FlowTimes, torch.Tensor]
) -> torch.Tensor:
    """
    Interpolate per frame between noise and data: t m1 + (1 - t) m0.

    Raises:
        ShapeMismatchError: If m1, m0 and the times disagree in shape.
    """
    t = as_times_tensor(times)
    if m1.shape != m0.shape or tuple(t.shape) != tuple(m1.shape[:-1]):
        raise ShapeMismatchError(
            f"Cannot interpolate m1 {tuple(m1.shape)}, m0 {tuple(m0.shape)} with times {tuple(t.shape)}"
        )
    t = t.to(m1.dtype).unsqueeze(-1)
    return t * m1 + (1.0 - t) * m0


class DropCounter(BaseModel):
    """Counts windows seen by the DF loss and how many used the null condition."""

    windows: int = 0
    dropped: int = 0


def conditions_with_dropout(
    field: VectorField, batch: WindowBatch, rng: SeededRng, p_drop: float, counter: Optional[DropCounter] = None
) -> torch.Tensor:
    """Encode a batch's conditions, replacing each window's by the null condition with probability p_drop."""
    cond = field.encode_condition(batch.condition)
    size, n = batch.target.shape[0], batch.target.shape[1]
    drop = rng.uniform((size,), torch.float64) < p_drop
    if counter is not None:
        counter.windows += size
        counter.dropped += int(drop.sum().item())
    if bool(drop.any()):
        null = field.null_condition(n, size).to(cond.dtype)
        cond = torch.where(drop[:, None, None], null, cond)
    return cond


def df_loss(
    field: VectorField,
    batch: WindowBatch,
    rng: SeededRng,
    p_drop: float = 0.1,
    scheme: str = "independent",
    counter: Optional[DropCounter] = None,
) -> torch.Tensor:
    """
    Diffusion-forcing L1 loss of one batch of windows.

    Args:
        field: The vector field to evaluate.
        batch: Windows of clean latents with their conditions.
        rng: Random stream of the noise, flow times and dropout.
        p_drop: Probability of the null condition per window.
        scheme: Flow-time scheme.
        counter: Optional dropout counter to update.

    Returns:
        The mean absolute error between predicted field and m1 - m0.
    """
    m1 = batch.target
    size, n, _ = m1.shape
    m0 = gaussian(rng, m1.shape, m1.dtype)
    times = sample_flow_times(n, rng, scheme, field.block_size, batch=size, dtype=m1.dtype)
    cond = conditions_with_dropout(field, batch, rng, p_drop, counter)
    noisy = noise_interpolate(m1, m0, times)
    prediction = field.predict_vector_field(noisy, times, cond, batch.m_s.to(m1.dtype))
    return (prediction - (m1 - m0)).abs().mean()


def step_rng(seed: int, step: int) -> SeededRng:
    """Random stream of one DF training step; its seed is the step's batch seed."""
    return SeededRng(seed).spawn("df-step", step)


def field_dtype(field: VectorField, default: torch.dtype) -> torch.dtype:
    """Floating dtype of a field's parameters, or `default` for parameter-free fields."""
    items = field.parameter_store().items()
    return items[0][1].dtype if items else default


def df_step_loss(
    field: VectorField,
    clips: Sequence[LatentClip],
    rng: SeededRng,
    batch_size: int,
    window: int,
    p_drop: float,
    scheme: str,
    counter: Optional[DropCounter] = None,
) -> torch.Tensor:
    """Sample a batch of windows and evaluate the DF loss on it."""
    batch = sample_windows(clips, rng.spawn("batch"), batch_size, window)
    dtype = field_dtype(field, batch.target.dtype)
    batch = WindowBatch(
        target=batch.target.to(dtype),
        condition=batch.condition.to(dtype),
        m_s=batch.m_s.to(dtype),
        starts=batch.starts,
        clip_indices=batch.clip_indices,
    )
    return df_loss(field, batch, rng.spawn("noise"), p_drop, scheme, counter)


class TrainResult(BaseModel):
    """
    Outcome of a training run.

    Args:
        losses: Loss per step.
        wall_ms: Wall-clock milliseconds per step (zeros without timing).
        counter: Dropout counter over the run.
        checkpoints: Paths of periodic checkpoints.
    """

    losses: List[float] = Field(default_factory=list)
    wall_ms: List[float] = Field(default_factory=list)
    counter: DropCounter = Field(default_factory=DropCounter)
    checkpoints: List[str] = Field(default_factory=list)

    def trace_rows(self, lr: float) -> List[dict]:
        return [
            {"step": i, "loss": loss, "lr": lr, "wall_ms": ms}
            for i, (loss, ms) in enumerate(zip(self.losses, self.wall_ms))
        ]


def train(
    field: VectorField,
    clips: Sequence[LatentClip],
    config: TrainConfig,
    trace_path: Optional[Union[str, Path]] = None,
    checkpoint: Optional[Callable[[int], str]] = None,
    record_timing: bool = True,
    progress: bool = False,
    provenance: Optional[dict] = None,
) -> TrainResult:
    """
    Train a vector field in place with Adam over sampled windows.

    Step i draws its batch, noise, flow times and dropout from a stream
    keyed by (seed, i), so equal seeds give bit-identical loss traces.

    Args:
        field: The field to train.
        clips: Embedded clips.
        config: Training settings.
        trace_path: Where to write the step, loss, lr, wall_ms CSV.
        checkpoint: Called with the step every `checkpoint_every` steps;
                    returns the path written.
        record_timing: Record wall-clock times; zeros otherwise.
        progress: Show a progress bar.
        provenance: Leading comment lines of the CSV trace.

    Returns:
        The loss trace and counters.

    Raises:
        ValueError: If `clips` is empty.
        NumericAbortError: If the loss becomes non-finite.
    """
    if not clips:
        raise ValueError("Training needs a non-empty dataset")
    store = field.parameter_store()
    state = AdamState(store, lr=config.lr)
    result = TrainResult()

    for step in tqdm(range(config.steps), desc="df", disable=not progress):
        started = time.perf_counter()
        rng = step_rng(config.seed, step)
        loss = df_step_loss(
            field, clips, rng, config.batch_size, config.window, config.p_drop, config.time_scheme, result.counter
        )
        value = loss.item()
        if not math.isfinite(value):
            raise NumericAbortError(
                f"DF loss became {value} at step {step} (batch seed {rng.seed})",
                step=step,
                batch_seed=rng.seed,
            )
        adam_step(store, backprop(loss, store), state)
        result.losses.append(value)
        result.wall_ms.append((time.perf_counter() - started) * 1000.0 if record_timing else 0.0)

        if (step + 1) % config.log_every == 0:
            recent = result.losses[-config.log_every:]
            logger.info(f"step {step + 1}/{config.steps} mean loss {sum(recent) / len(recent):.5f}")
        if checkpoint is not None and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            result.checkpoints.append(checkpoint(step + 1))

    if result.counter.windows:
        logger.info(
            f"Null condition used for {result.counter.dropped} of {result.counter.windows} windows"
        )
    if trace_path is not None:
        write_csv(trace_path, TRACE_COLUMNS, result.trace_rows(config.lr), provenance)
    return result
