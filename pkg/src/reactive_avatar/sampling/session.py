"""
Streaming sampler module.

This module generates avatar motion block by block: each block starts
from its own seeded noise, is integrated with T Euler steps of the
classifier-free guided field on top of the rolling caches, and is then
appended to the caches by one forward pass of the clean block at t = 1.

Conditional and null branches keep separate caches, so scale 0 yields the
exact unconditional trajectory and scale 1 the exact conditional one.
"""

import io
import logging
import math
import queue
import struct
import threading
import time
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Tuple, Union

import torch

from ..codec.latent_codec import LatentCodec
from ..core.checkpoint import ByteReader, decode_tensor, encode_tensor
from ..core.config import SamplerConfig
from ..core.errors import ArtifactIOError, SessionClosedError, ShapeMismatchError
from ..core.field import VectorField
from ..core.numeric import SeededRng, gaussian
from ..core.schema import ConditionTriplet, LatencyReport
from .cache import KVCacheSet

logger = logging.getLogger(__name__)

LATENCY_DRIFT = 2.0
HANDOFF_POLL_S = 0.05


def block_noise(seed: int, index: int, shape: Tuple[int, ...], dtype: torch.dtype) -> torch.Tensor:
    """Starting noise of block `index`; shared by the streaming and offline samplers."""
    return gaussian(SeededRng(seed).spawn("block", index), shape, dtype)


def guided_velocity(
    field: VectorField,
    noisy: torch.Tensor,
    times: torch.Tensor,
    cond: torch.Tensor,
    null: torch.Tensor,
    m_s: torch.Tensor,
    scale: float,
    cond_caches: Optional[KVCacheSet] = None,
    null_caches: Optional[KVCacheSet] = None,
    start: int = 0,
    history_blocks: Optional[int] = None,
) -> torch.Tensor:
    """
    Classifier-free guided field v_null + s (v_cond - v_null).

    Scale 1 returns v_cond and scale 0 returns v_null without evaluating
    the other branch.
    """
    if scale == 1.0:
        return field.predict_vector_field(noisy, times, cond, m_s, cond_caches, start, history_blocks)
    v_null = field.predict_vector_field(noisy, times, null, m_s, null_caches, start, history_blocks)
    if scale == 0.0:
        return v_null
    v_cond = field.predict_vector_field(noisy, times, cond, m_s, cond_caches, start, history_blocks)
    return v_null + scale * (v_cond - v_null)


def euler_times(step: int, steps: int, shape: Tuple[int, ...], dtype: torch.dtype) -> torch.Tensor:
    """Flow time t_j = j / T of Euler step j on the uniform grid."""
    return torch.full(shape, step / steps, dtype=dtype)


class StreamRecord(NamedTuple):
    index: int
    wall_ns: int
    block: torch.Tensor


class StreamSession:
    """
    One avatar's streaming generation state.

    Args:
        field: The vector field to sample.
        z_s: (d,) identity latent of the avatar.
        m_s: (d,) reference motion latent of the avatar.
        config: Sampler settings.
        codec: Codec used by `decode_block`, if any.
        record_timing: Record wall-clock times; zeros otherwise.
    """

    def __init__(
        self,
        field: VectorField,
        z_s: torch.Tensor,
        m_s: torch.Tensor,
        config: SamplerConfig,
        codec: Optional[LatentCodec] = None,
        record_timing: bool = True,
    ):
        if m_s.shape[-1] != field.latent_dim or z_s.shape[-1] != field.latent_dim:
            raise ShapeMismatchError(
                f"Reference latents {tuple(m_s.shape)} do not match latent dimension {field.latent_dim}"
            )
        self.field = field
        self.config = config
        self.codec = codec
        self.record_timing = record_timing
        self.dtype = m_s.dtype
        self.z_s = z_s
        self.m_s = m_s.reshape(1, -1)
        self.block_size = field.block_size
        self.look_ahead = self._look_ahead_blocks() if config.lookahead_mode == "delayed" else 0
        self.cond_caches = field.new_caches(config.cache_blocks)
        self.null_caches = field.new_caches(config.cache_blocks)
        self.consumed = 0
        self.emitted = 0
        self.closed = False
        self.records: List[StreamRecord] = []
        self.block_ms: List[float] = []
        self.cache_bytes: List[int] = []
        self._pending: List[Tuple[torch.Tensor, torch.Tensor]] = []
        self._pending_ns = 0

    def _look_ahead_blocks(self) -> int:
        config = getattr(self.field, "config", None)
        if config is None:
            return 0
        if config.lookahead_unit == "frame":
            return math.ceil(config.effective_look_ahead / config.block_size)
        return config.effective_look_ahead

    @property
    def cached_blocks(self) -> int:
        return len(self.cond_caches) if self.cond_caches is not None else 0

    def _encode(self, triplet: ConditionTriplet) -> Tuple[torch.Tensor, torch.Tensor]:
        if triplet.length != self.block_size:
            raise ShapeMismatchError(
                f"Condition block has {triplet.length} frames, expected {self.block_size}"
            )
        batched = triplet.batched().to(self.dtype)
        cond = self.field.encode_condition(batched)
        null = self.field.null_condition(self.block_size, 1).to(cond.dtype)
        return cond, null

    def _integrate(self, cond: torch.Tensor, null: torch.Tensor, first_block: int) -> torch.Tensor:
        n = cond.shape[-2]
        blocks = n // self.block_size
        x = torch.cat(
            [
                block_noise(self.config.seed, first_block + k, (1, self.block_size, self.field.latent_dim), self.dtype)
                for k in range(blocks)
            ],
            dim=-2,
        )
        steps = self.config.ode_steps
        start = first_block * self.block_size
        for j in range(steps):
            times = euler_times(j, steps, (1, n), self.dtype)
            v = guided_velocity(
                self.field, x, times, cond, null, self.m_s, self.config.guidance_scale,
                self.cond_caches, self.null_caches, start,
            )
            x = x + v / steps
        return x

    def _commit(self, clean: torch.Tensor, cond: torch.Tensor, null: torch.Tensor, index: int) -> None:
        start = index * self.block_size
        scale = self.config.guidance_scale
        if scale != 0.0:
            self.field.update_caches(self.cond_caches, clean, cond, self.m_s, start, index)
        if scale != 1.0:
            self.field.update_caches(self.null_caches, clean, null, self.m_s, start, index)

    def _emit(self, clean: torch.Tensor, started: int) -> torch.Tensor:
        block = clean[0].detach()
        elapsed = time.perf_counter_ns() - started if self.record_timing else 0
        self.records.append(StreamRecord(self.emitted, elapsed, block))
        self.block_ms.append(elapsed / 1e6)
        self.cache_bytes.append(self.memory_bytes())
        self.emitted += 1
        return block

    def memory_bytes(self) -> int:
        return sum(c.memory_bytes() for c in (self.cond_caches, self.null_caches) if c is not None)

    def push_block(self, cond_block: ConditionTriplet) -> Optional[torch.Tensor]:
        """
        Consume one block of conditions and generate motion.

        In strict mode the block is generated immediately. In delayed mode
        the block `look_ahead` positions earlier is emitted once enough
        conditions are buffered, and None is returned before that.

        Returns:
            The clean (B, d) motion latent block, or None while buffering.

        Raises:
            SessionClosedError: If the session was closed.
            ShapeMismatchError: If the block has the wrong frame count.
        """
        if self.closed:
            raise SessionClosedError("Cannot push a block into a closed session")
        started = time.perf_counter_ns()
        with torch.no_grad():
            cond, null = self._encode(cond_block)
            self.consumed += 1
            if self.look_ahead == 0:
                clean = self._integrate(cond, null, self.emitted)
                self._commit(clean, cond, null, self.emitted)
                return self._emit(clean, started)
            self._pending.append((cond, null))
            if len(self._pending) <= self.look_ahead:
                return None
            return self._emit_pending(started)

    def _emit_pending(self, started: int) -> torch.Tensor:
        conds = torch.cat([c for c, _ in self._pending], dim=-2)
        nulls = torch.cat([n for _, n in self._pending], dim=-2)
        window = self._integrate(conds, nulls, self.emitted)
        cond, null = self._pending.pop(0)
        clean = window[:, : self.block_size]
        self._commit(clean, cond, null, self.emitted)
        return self._emit(clean, started)

    def flush(self) -> List[torch.Tensor]:
        """Emit every block still buffered by the delayed mode."""
        if self.closed:
            raise SessionClosedError("Cannot flush a closed session")
        blocks = []
        with torch.no_grad():
            while self._pending:
                blocks.append(self._emit_pending(time.perf_counter_ns()))
        return blocks

    def decode_block(self, motion_block: torch.Tensor) -> torch.Tensor:
        """
        Decode z_S + m per frame to observations.

        Raises:
            ValueError: If the session has no codec.
        """
        if self.codec is None:
            raise ValueError("Session has no codec to decode with")
        with torch.no_grad():
            latent = self.z_s.to(motion_block.dtype) + motion_block
            return self.codec.decode(latent.to(next(self.codec.parameters()).dtype))

    def latency_report(self, warmup: int = 2) -> LatencyReport:
        """
        Summarise per-block wall-clock times.

        The max/min ratio is taken over blocks after `warmup`; a ratio of
        2 or more is logged as latency drift.

        Raises:
            ValueError: If fewer than two blocks were emitted.
        """
        if self.emitted < 2:
            raise ValueError(f"Latency report needs at least 2 emitted blocks, got {self.emitted}")
        steady = self.block_ms[warmup:] or self.block_ms
        low, high = min(steady), max(steady)
        ratio = high / low if low > 0 else 1.0
        if ratio >= LATENCY_DRIFT:
            logger.warning(f"Per-block latency drifted: max/min = {ratio:.2f} after warmup")
        return LatencyReport(
            block_ms=list(self.block_ms),
            first_block_ms=self.block_ms[0],
            max_min_ratio=ratio,
            warmup=warmup,
            cache_bytes=list(self.cache_bytes),
        )

    def close(self) -> None:
        self.closed = True
        self._pending.clear()
        for caches in (self.cond_caches, self.null_caches):
            if caches is not None:
                caches.clear()


def open_session(
    field: VectorField,
    z_s: torch.Tensor,
    m_s: torch.Tensor,
    config: SamplerConfig,
    codec: Optional[LatentCodec] = None,
    record_timing: bool = True,
) -> StreamSession:
    """
    Open a streaming session with empty caches.

    Raises:
        ShapeMismatchError: If the reference latents do not fit the field.
    """
    return StreamSession(field, z_s, m_s, config, codec, record_timing)


_END = object()


def run_stream(
    session: StreamSession, blocks: Iterable[ConditionTriplet], queue_size: int = 4
) -> List[torch.Tensor]:
    """
    Feed condition blocks from a producer thread through a bounded FIFO.

    The session consumes blocks in delivery order and is flushed when the
    producer finishes. If the session raises, the producer is stopped and
    joined before the error propagates.

    Returns:
        Every emitted block, in order.
    """
    handoff: "queue.Queue" = queue.Queue(maxsize=queue_size)
    stop = threading.Event()
    failure: List[BaseException] = []

    def deliver(item: object) -> bool:
        while not stop.is_set():
            try:
                handoff.put(item, timeout=HANDOFF_POLL_S)
                return True
            except queue.Full:
                continue
        return False

    def produce() -> None:
        try:
            for block in blocks:
                if not deliver(block):
                    return
        except BaseException as e:
            failure.append(e)
        deliver(_END)

    producer = threading.Thread(target=produce, name="condition-producer", daemon=True)
    producer.start()
    emitted = []
    try:
        while True:
            item = handoff.get()
            if item is _END:
                break
            block = session.push_block(item)
            if block is not None:
                emitted.append(block)
    finally:
        stop.set()
        while True:
            try:
                handoff.get_nowait()
            except queue.Empty:
                break
        producer.join()
    if failure:
        raise failure[0]
    emitted.extend(session.flush())
    return emitted


def stream_clip(
    field: VectorField,
    condition: ConditionTriplet,
    z_s: torch.Tensor,
    m_s: torch.Tensor,
    config: SamplerConfig,
    record_timing: bool = False,
) -> torch.Tensor:
    """
    Generate motion for every whole block of an unbatched condition sequence.

    Returns:
        (floor(N / B) * B, d) motion latents.
    """
    session = open_session(field, z_s, m_s, config, record_timing=record_timing)
    blocks = []
    for i in range(condition.length // field.block_size):
        block = session.push_block(condition.block(i, field.block_size))
        if block is not None:
            blocks.append(block)
    blocks.extend(session.flush())
    session.close()
    return torch.cat(blocks, dim=-2)


def stream_dump_bytes(records: Iterable[StreamRecord]) -> bytes:
    """Per block: u32 block index, u64 wall_ns, motion tensor in checkpoint encoding."""
    out = io.BytesIO()
    for record in records:
        out.write(struct.pack("<IQ", record.index, record.wall_ns))
        encode_tensor(record.block, out)
    return out.getvalue()


def write_stream_dump(records: Iterable[StreamRecord], path: Union[str, Path]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(stream_dump_bytes(records))
    except OSError as e:
        raise ArtifactIOError(f"Cannot write stream dump {path}: {e}") from e


def read_stream_dump(path: Union[str, Path]) -> List[StreamRecord]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise ArtifactIOError(f"Cannot read stream dump {path}: {e}") from e
    reader = ByteReader(data, str(path))
    records = []
    while not reader.exhausted:
        index = reader.u32()
        wall_ns = reader.u64()
        records.append(StreamRecord(index, wall_ns, decode_tensor(reader)))
    return records
