"""
Pipeline module.

This module provides the Pipeline class that ties the stages of a run
together: dataset generation, codec training, vector field training for
every variant, preference fine-tuning, streaming and evaluation. Every
artifact is written under one output directory with a provenance sidecar
carrying the digest of the configuration that produced it.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import torch

from .codec.latent_codec import (
    LatentCodec,
    ObservationSpace,
    CodecTrainingResult,
    load_codec,
    save_codec,
    train_codec,
)
from .core.checkpoint import file_digest, read_meta, write_meta
from .core.config import TOOL_VERSION, ConfigManager, RunConfig
from .core.errors import ArtifactIOError, ArtifactMismatchError
from .core.schema import ConditionTriplet, LatencyReport, MetricReport
from .metrics.interaction import evaluate, evaluate_parameters, metric_echo
from .metrics.report import write_report_csv, write_report_text
from .models.vector_field import MotionVectorField, condition_sensitivity, load_model, save_model
from .sampling.session import StreamRecord, open_session, run_stream, write_stream_dump
from .training.diffusion_forcing import TrainResult, train
from .training.preference import FinetuneResult, build_pairs, finetune, talking_only_config, train_talking_only
from .utils.csv_out import write_csv
from .world.dataset import LatentClip, embed_dataset, embed_motion, load_dataset, save_dataset, save_pairs
from .world.dyadic import MOTION_DIM, DyadicClip, generate_clips, identity_sequences

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

VARIANTS = ("full", "no-user-motion", "talking-only", "full-dpo")
LATENCY_COLUMNS = ("block", "wall_ms", "cache_bytes")
MOTION_COLUMNS = ("frame",) + tuple(f"p{i}" for i in range(MOTION_DIM))


@dataclass
class StreamResult:
    """
    Outcome of streaming one clip.

    Args:
        motion: (N, d) generated motion latents, trimmed to the clip frames.
        parameters: (N, 6) decoded motion parameters.
        records: Per-block stream records.
        latency: Latency report, when at least two blocks were emitted.
        blocks: Number of blocks streamed.
    """

    motion: torch.Tensor
    parameters: np.ndarray
    records: List[StreamRecord] = field(default_factory=list)
    latency: Optional[LatencyReport] = None
    blocks: int = 0


def pad_condition(condition: ConditionTriplet, block_size: int) -> ConditionTriplet:
    """Extend a condition to whole blocks by repeating its last frame."""
    n = condition.length
    padded = math.ceil(n / block_size) * block_size
    if padded == n:
        return condition
    last = condition.frames(n - 1, n)
    return ConditionTriplet.concat([condition] + [last] * (padded - n))


class Pipeline:
    """
    Runs the stages of a reactive_avatar experiment over one artifact directory.

    Args:
        config: The resolved run configuration.
        out_dir: Directory holding every artifact of the run.
        force: Accept artifacts whose config digest differs from this run's.
        progress: Show progress bars in training loops.
    """

    def __init__(self, config: RunConfig, out_dir: PathLike, force: bool = False, progress: bool = True):
        self.config = config
        self.out_dir = Path(out_dir)
        self.force = force
        self.progress = progress
        self.digest = ConfigManager.digest(config)
        self.space = ObservationSpace.from_config(config.codec)
        self._clips: Optional[List[DyadicClip]] = None
        self._codec: Optional[LatentCodec] = None
        self._latents: Optional[List[LatentClip]] = None

    @property
    def record_timing(self) -> bool:
        return self.config.run.record_timing

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def provenance(self, artifact: str, config: Optional[RunConfig] = None, **extra: object) -> Dict[str, object]:
        """Provenance entries of an artifact produced under `config` (this run's by default)."""
        digest = self.digest if config is None else ConfigManager.digest(config)
        entries: Dict[str, object] = {"artifact": artifact, "digest": digest, "tool_version": TOOL_VERSION}
        entries.update(extra)
        return entries

    def check_artifact(self, path: Path, config: Optional[RunConfig] = None) -> Dict[str, str]:
        """
        Verify that an artifact exists and was produced by the expected config.

        Returns:
            The artifact's sidecar.

        Raises:
            ArtifactIOError: If the artifact is missing.
            ArtifactMismatchError: If its digest differs and `force` is off.
        """
        if not path.exists():
            raise ArtifactIOError(f"Missing artifact {path}")
        expected = self.digest if config is None else ConfigManager.digest(config)
        meta = read_meta(path)
        stored = meta.get("digest")
        if stored != expected:
            message = f"Artifact {path} has config digest {stored}, this run expects {expected}"
            if not self.force:
                raise ArtifactMismatchError(message + " (use --force to accept it)")
            logger.warning(message)
        return meta

    # Data and codec

    def generate_data(self) -> Path:
        data = self.config.data
        clips = generate_clips(data.seed, data.clip_count, data.clip_frames, self.config.world)
        path = self.path("dataset.afds")
        save_dataset(clips, path)
        write_meta(path, self.provenance("dataset", clips=len(clips)))
        self._clips = clips
        logger.info(f"Wrote {len(clips)} clips to {path} (digest {self.digest})")
        return path

    def clips(self) -> List[DyadicClip]:
        if self._clips is None:
            path = self.path("dataset.afds")
            self.check_artifact(path)
            self._clips = load_dataset(path)
        return self._clips

    def train_codec(self) -> CodecTrainingResult:
        codec = LatentCodec(self.config.codec, seed=self.config.codec.seed)
        result = train_codec(codec, self.space, identity_sequences(self.clips()), progress=self.progress)
        path = self.path("codec.afck")
        save_codec(codec, path, self.provenance("codec", skipped_identities=result.skipped_identities))
        rows = [{"step": i, "loss": loss} for i, loss in enumerate(result.losses)]
        write_csv(self.path("trace-codec.csv"), ("step", "loss"), rows, self.provenance("codec-trace"))
        self._codec = codec
        self._latents = None
        return result

    def codec(self) -> LatentCodec:
        if self._codec is None:
            path = self.path("codec.afck")
            self.check_artifact(path)
            self._codec = load_codec(path, self.config.codec)
        return self._codec

    def latents(self) -> List[LatentClip]:
        if self._latents is None:
            self._latents = embed_dataset(self.clips(), self.codec(), self.space)
        return self._latents

    # Vector fields

    def variant_config(self, variant: str, mask: Optional[str] = None) -> RunConfig:
        """
        Configuration a model variant is trained under.

        Raises:
            ValueError: For an unknown variant.
        """
        if variant not in VARIANTS:
            raise ValueError(f"Unknown model variant '{variant}'")
        model = self.config.model
        if variant == "no-user-motion":
            model = model.model_copy(update={"user_motion": False})
        elif variant == "talking-only":
            model = talking_only_config(model)
        if mask is not None:
            model = model.model_copy(update={"mask_kind": mask})
        return self.config.model_copy(update={"model": model})

    def model_path(self, variant: str, mask: Optional[str] = None) -> Path:
        if mask is None or mask == self.config.model.mask_kind:
            return self.path(f"model-{variant}.afck")
        return self.path(f"model-{variant}-{mask}.afck")

    def _trace_name(self, variant: str, mask: Optional[str]) -> str:
        stem = self.model_path(variant, mask).name[len("model-"):-len(".afck")]
        return f"trace-{stem}.csv"

    def train_model(self, variant: str = "full", mask: Optional[str] = None) -> Tuple[MotionVectorField, TrainResult]:
        """Train one vector field variant and write its checkpoint and loss trace."""
        config = self.variant_config(variant, mask)
        path = self.model_path(variant, mask)
        provenance = self.provenance("model", config, variant=variant)

        def periodic(step: int) -> str:
            target = path.with_name(f"{path.stem}-step{step}{path.suffix}")
            save_model(model, target, {**provenance, "step": step})
            return str(target)

        kwargs = dict(
            trace_path=self.path(self._trace_name(variant, mask)),
            checkpoint=periodic,
            record_timing=self.record_timing,
            progress=self.progress,
            provenance=provenance,
        )
        if variant == "talking-only":
            model, result = train_talking_only(
                self.latents(), config.model, config.train, seed=config.train.seed, **kwargs
            )
        else:
            model = MotionVectorField(config.model, seed=config.train.seed)
            result = train(model, self.latents(), config.train, **kwargs)
        save_model(model, path, provenance)
        probe = self.latents()[0].condition(0, min(self.latents()[0].n_frames, config.train.window))
        logger.info(f"User-stream sensitivity of '{variant}': {condition_sensitivity(model, probe):.3g}")
        return model, result

    def load_model(self, variant: str = "full", mask: Optional[str] = None) -> MotionVectorField:
        config = self.variant_config(variant, mask)
        path = self.model_path(variant, mask)
        self.check_artifact(path, config)
        return load_model(path, config.model)

    def preference_finetune(self) -> FinetuneResult:
        """
        Build preference pairs with the talking-only model and fine-tune the
        full model against a frozen copy of itself.
        """
        base_path = self.model_path("full")
        model = self.load_model("full")
        talking = self.load_model("talking-only")
        pairs, skipped = build_pairs(self.latents(), talking, self.config.sampler)
        pairs_path = self.path("pairs.afpp")
        save_pairs(pairs, pairs_path)
        write_meta(pairs_path, self.provenance("pairs", pairs=len(pairs), skipped=skipped))

        ref = model.frozen_copy()
        ref_digest = file_digest(base_path)
        provenance = self.provenance("model", variant="full-dpo", ref_digest=ref_digest)
        result = finetune(
            model,
            ref,
            pairs,
            self.latents(),
            self.config.dpo,
            self.config.train,
            trace_path=self.path("trace-full-dpo.csv"),
            record_timing=self.record_timing,
            progress=self.progress,
            provenance=provenance,
        )
        save_model(model, self.model_path("full-dpo"), {**provenance, "skipped_pairs": skipped})
        return result

    # Inference

    def stream(
        self,
        variant: str = "full",
        clip_index: int = 0,
        frames: Optional[int] = None,
        dump_path: Optional[PathLike] = None,
    ) -> StreamResult:
        """
        Stream one clip block by block through a session with rolling caches.

        The condition is padded to whole blocks by repeating its last frame,
        so ceil(N / B) blocks are generated; the output is trimmed to N frames.

        Raises:
            IndexError: If the clip does not exist.
        """
        clips = self.clips()
        if not 0 <= clip_index < len(clips):
            raise IndexError(f"Clip {clip_index} does not exist; the dataset has {len(clips)} clips")
        model = self.load_model(variant)
        codec = self.codec()
        latent = embed_motion(clips[clip_index], codec, self.space, clip_index)
        n = latent.n_frames if frames is None else min(frames, latent.n_frames)
        size = model.block_size
        condition = pad_condition(latent.condition(0, n), size)
        blocks = condition.length // size

        session = open_session(
            model, latent.z_s, latent.m_s, self.config.sampler, codec, record_timing=self.record_timing
        )
        emitted = run_stream(session, (condition.block(i, size) for i in range(blocks)))
        motion = torch.cat(emitted, dim=-2)[:n]
        observations = session.decode_block(motion)
        parameters = self.space.oracle_motion(observations.double().numpy())
        latency = session.latency_report() if session.emitted >= 2 else None
        records = list(session.records)
        session.close()

        provenance = self.provenance("stream", variant=variant, clip=clip_index)
        rows = [
            {"block": i, "wall_ms": ms, "cache_bytes": cache}
            for i, (ms, cache) in enumerate(zip(session.block_ms, session.cache_bytes))
        ]
        write_csv(self.path("stream-latency.csv"), LATENCY_COLUMNS, rows, provenance)
        if latency is not None:
            logger.info(
                f"Streamed {blocks} blocks: first block {latency.first_block_ms:.2f} ms, "
                f"max/min after warmup {latency.max_min_ratio:.2f}"
            )
        rows = [{"frame": i, **{f"p{c}": float(v) for c, v in enumerate(row)}} for i, row in enumerate(parameters)]
        write_csv(self.path("stream-motion.csv"), MOTION_COLUMNS, rows, provenance)
        if dump_path is not None:
            write_stream_dump(records, dump_path)
        return StreamResult(motion=motion, parameters=parameters, records=records, latency=latency, blocks=blocks)

    def ground_truth_report(self) -> MetricReport:
        clips = self.clips()
        return evaluate_parameters(
            [c.avatar_motion for c in clips],
            [c.avatar_motion for c in clips],
            [c.user_motion for c in clips],
            self.config.metrics,
            metric_echo(self.config.metrics),
        )

    def evaluate(self, variant: str = "full", mask: Optional[str] = None) -> Dict[str, MetricReport]:
        """
        Score a model variant, next to the ground truth scored against itself,
        and write the report as CSV and as an aligned table.
        """
        model = self.load_model(variant, mask)
        report = evaluate(
            model, self.clips(), self.latents(), self.codec(), self.space, self.config.sampler, self.config.metrics
        )
        reports = {"GT": self.ground_truth_report(), variant: report}
        stem = self.model_path(variant, mask).name[len("model-"):-len(".afck")]
        provenance = self.provenance(
            "report", variant=variant, model_digest=file_digest(self.model_path(variant, mask)), **report.config
        )
        write_report_csv(self.path(f"report-{stem}.csv"), reports, provenance)
        write_report_text(self.path(f"report-{stem}.txt"), reports, provenance)
        return reports
