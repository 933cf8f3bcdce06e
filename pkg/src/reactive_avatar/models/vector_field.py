"""
Motion vector field model.

This module assembles the dual motion encoder and the causal DFoT stack
into the VectorField used for training, streaming and preference
fine-tuning, and reads and writes its self-describing checkpoints.
"""

import logging
from copy import deepcopy
from pathlib import Path
from typing import Dict, Iterable, Optional, Union

import torch
from torch import nn

from ..core.checkpoint import (
    load_params,
    read_meta,
    save_params,
    split_prefix,
    with_prefix,
    write_meta,
)
from ..core.config import TOOL_VERSION, ModelConfig
from ..core.errors import ArtifactMismatchError, CacheMismatchError, ShapeMismatchError
from ..core.field import VectorField
from ..core.params import ParamStore
from ..core.schema import ConditionTriplet, FlowTimes, as_times_tensor
from ..sampling.cache import KVCacheSet
from .attention import initialize_parameters
from .dfot import CausalDFoT, banded_plan, cached_plan, window_plan
from .encoder import DualMotionEncoder

logger = logging.getLogger(__name__)

MODEL_PREFIX = "model/"


def model_header(config: ModelConfig) -> Dict[str, str]:
    """Render a model configuration as `model.*` key = value entries."""
    values = {}
    for key, value in config.model_dump().items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        values[f"model.{key}"] = str(value)
    return values


class MotionVectorField(nn.Module, VectorField):
    """
    The vector field v_theta over motion latents.

    Args:
        config: Model architecture.
        seed: Seed of the parameter initialisation.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.latent_dim = config.latent_dim
        self.block_size = config.block_size
        self.encoder = DualMotionEncoder(config)
        self.dfot = CausalDFoT(config)
        self.null_embedding = nn.Parameter(torch.zeros(config.width))
        initialize_parameters(self, seed)
        self.dfot.zero_head()

    def encode_condition(self, triplet: ConditionTriplet, scope: Optional[str] = None) -> torch.Tensor:
        """
        Fuse a condition triplet into the unified condition (B, N, h).

        Args:
            triplet: Triplet, batched or not.
            scope: Encoder attention scope; defaults to the configured one.
        """
        batched = triplet.batched()
        dtype = self.null_embedding.dtype
        return self.encoder(batched.to(dtype), scope or self.config.encoder_scope)

    def null_condition(self, n: int, batch: int = 1) -> torch.Tensor:
        return self.null_embedding.expand(batch, n, self.config.width)

    def predict_vector_field(
        self,
        noisy: torch.Tensor,
        times: Union[FlowTimes, torch.Tensor],
        cond: torch.Tensor,
        m_s: torch.Tensor,
        caches: Optional[KVCacheSet] = None,
        start: int = 0,
        history_blocks: Optional[int] = None,
    ) -> torch.Tensor:
        """
        Predict the per-frame vector field.

        Raises:
            CacheMismatchError: If the caches were built for another depth.
            ShapeMismatchError: If input shapes disagree.
        """
        t = as_times_tensor(times).to(noisy.dtype)
        n = noisy.shape[-2]
        if noisy.shape[-1] != self.latent_dim or m_s.shape[-1] != self.latent_dim:
            raise ShapeMismatchError(
                f"Expected latents of dimension {self.latent_dim}, got noisy "
                f"{tuple(noisy.shape)} and m_S {tuple(m_s.shape)}"
            )
        if t.shape != noisy.shape[:-1] or cond.shape[-2] != n:
            raise ShapeMismatchError(
                f"Flow times {tuple(t.shape)} or condition {tuple(cond.shape)} do not "
                f"match latents {tuple(noisy.shape)}"
            )
        if caches is not None:
            self._check_caches(caches)
            plan = cached_plan(self.config, n, start, caches.positions())
        elif history_blocks is not None:
            plan = banded_plan(self.config, n, history_blocks)
        else:
            plan = window_plan(self.config, n, start)
        out, _ = self.dfot(noisy, t, cond, m_s, plan, caches)
        return out

    def _check_caches(self, caches: KVCacheSet) -> None:
        if caches.depth != self.config.depth:
            raise CacheMismatchError(
                f"Cache has {caches.depth} layers, model depth is {self.config.depth}"
            )

    def new_caches(self, capacity: int) -> KVCacheSet:
        return KVCacheSet(self.config.depth, capacity)

    def update_caches(
        self,
        caches: Optional[KVCacheSet],
        clean: torch.Tensor,
        cond: torch.Tensor,
        m_s: torch.Tensor,
        start: int,
        block_index: int,
    ) -> None:
        """Run the clean block at t = 1 and append its keys and values."""
        if caches is None:
            return
        self._check_caches(caches)
        n = clean.shape[-2]
        plan = cached_plan(self.config, n, start, caches.positions())
        times = torch.ones(clean.shape[:-1], dtype=clean.dtype)
        _, entries = self.dfot(clean, times, cond, m_s, plan, caches)
        caches.append(block_index, plan.positions, entries)

    def parameter_store(self, frozen: Iterable[str] = ()) -> ParamStore:
        return ParamStore.from_module(self, frozen=frozen)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def header(self) -> Dict[str, str]:
        return model_header(self.config)

    def frozen_copy(self) -> "MotionVectorField":
        """Return a detached copy whose parameters do not require gradients."""
        copy = deepcopy(self)
        for param in copy.parameters():
            param.requires_grad_(False)
        return copy


def condition_sensitivity(field: VectorField, condition: ConditionTriplet) -> float:
    """Max absolute change of the unified condition when both user streams are zeroed."""
    with torch.no_grad():
        full = field.encode_condition(condition)
        muted = field.encode_condition(condition.without_user())
    return float((full - muted).abs().max().item())


def save_model(
    model: MotionVectorField, path: Union[str, Path], meta: Optional[Dict[str, object]] = None
) -> None:
    """
    Write a model checkpoint and its sidecar header.

    The sidecar carries the model configuration, the tool version and any
    extra provenance entries in `meta`.
    """
    save_params(with_prefix(model.parameter_store(), MODEL_PREFIX), path)
    header: Dict[str, object] = {"artifact": "model", "tool_version": TOOL_VERSION}
    header.update(model.header())
    if meta:
        header.update(meta)
    write_meta(path, header)
    logger.info(f"Saved model checkpoint to {path}")


def load_model(
    path: Union[str, Path], config: Optional[ModelConfig] = None, check_header: bool = True
) -> MotionVectorField:
    """
    Read a model checkpoint.

    Args:
        path: Checkpoint file.
        config: Architecture to build; read from the sidecar when None.
        check_header: Reject a sidecar whose architecture differs from `config`.

    Raises:
        ArtifactMismatchError: If the stored architecture differs.
        ArtifactIOError: If the file cannot be read or parsed.
    """
    meta = read_meta(path)
    stored = {k[len("model."):]: v for k, v in meta.items() if k.startswith("model.")}
    if config is None:
        if not stored:
            raise ArtifactMismatchError(f"Checkpoint {path} has no model header")
        config = ModelConfig.model_validate(stored)
    elif check_header and stored:
        expected = {k[len("model."):]: v for k, v in model_header(config).items()}
        differing = sorted(k for k in expected if stored.get(k) != expected[k])
        if differing:
            raise ArtifactMismatchError(
                f"Checkpoint {path} was written for a different architecture: {differing}"
            )
    model = MotionVectorField(config)
    store = split_prefix(load_params(path), MODEL_PREFIX)
    try:
        store.load_into(model)
    except (KeyError, ShapeMismatchError) as e:
        raise ArtifactMismatchError(f"Checkpoint {path} does not fit the model: {e}") from e
    return model
