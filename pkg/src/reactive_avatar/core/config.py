"""
Configuration module.

This module provides the pydantic models for every configurable part of
reactive_avatar and the ConfigManager that loads, saves and digests run
configurations written in the `key = value` format with dotted section
prefixes (e.g. `model.width = 64`).
"""

import hashlib
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..utils.kv_file import dump_kv, load_kv_file
from .errors import ConfigError

TOOL_VERSION = "0.1.0"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class WorldParams(_Section):
    """
    Parameters of the synthetic dyadic world.

    Args:
        reaction_lag: Frames between a user cue and the avatar's reaction.
        reaction_gain: Strength g of the avatar's mirroring, in [0, 1].
        smile_rate: Expected user smile events per frame (Poisson).
        stress_rate: Expected stress peaks per user-speaking frame.
        turn_min: Shortest turn, in frames.
        turn_max: Longest turn, in frames.
        noise_scale: Std of the additive Gaussian noise on every channel.
        speak_threshold: Audio envelope level separating speech from silence.
    """

    reaction_lag: int = Field(5, ge=0)
    reaction_gain: float = Field(0.8, ge=0.0, le=1.0)
    smile_rate: float = Field(0.01, ge=0.0)
    stress_rate: float = Field(0.04, ge=0.0)
    turn_min: int = Field(20, ge=1)
    turn_max: int = Field(60, ge=1)
    noise_scale: float = Field(0.05, ge=0.0)
    speak_threshold: float = Field(0.2, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def _turn_range(self) -> "WorldParams":
        if self.turn_max < self.turn_min:
            raise ValueError("turn_max must be >= turn_min")
        return self


class CodecConfig(_Section):
    """
    Observation space and latent codec settings.

    Args:
        obs_dim: Dimension of synthetic observations.
        id_dim: Dimension of identity parameters.
        latent_dim: Dimension d of identity and motion latents.
        hidden: Width of the codec perceptrons.
        steps: Training steps.
        batch_size: Pairs per training step.
        lr: Adam learning rate.
        cross_weight: Weight of the cross-identity reenactment term.
        world_seed: Seed of the frozen mixing matrices.
        seed: Seed of codec initialisation and batches.
    """

    obs_dim: int = Field(32, ge=2)
    id_dim: int = Field(8, ge=1)
    latent_dim: int = Field(16, ge=1)
    hidden: int = Field(64, ge=1)
    steps: int = Field(3000, ge=0)
    batch_size: int = Field(64, ge=1)
    lr: float = Field(1e-3, gt=0.0)
    cross_weight: float = Field(1.0, ge=0.0)
    world_seed: int = 1234
    seed: int = 0


class ModelConfig(_Section):
    """
    Architecture of the vector field model.

    Args:
        latent_dim: Motion latent dimension d.
        audio_dim: Audio feature dimension.
        width: Model width h.
        heads: Attention heads in the DFoT blocks.
        encoder_heads: Attention heads in the dual motion encoder.
        depth: Number of DFoT blocks.
        ffn_mult: Feed-forward expansion factor.
        block_size: Frames per block.
        look_ahead: Look-ahead l of the self-attention mask.
        lookahead_unit: Whether l counts blocks or frames.
        mask_kind: Self-attention mask ("lookahead", "blockwise", "framewise").
        cond_window: Half width of the condition sliding window.
        encoder_scope: "window" for full attention over the training window,
                       "block" to restrict the encoder to each block.
        user_motion: Whether the user motion stream reaches the encoder.
        user_audio: Whether the user audio stream reaches the encoder.
        time_freq_dim: Size of the sinusoidal flow-time features.
    """

    latent_dim: int = Field(16, ge=1)
    audio_dim: int = Field(4, ge=1)
    width: int = Field(64, ge=2)
    heads: int = Field(4, ge=1)
    encoder_heads: int = Field(4, ge=1)
    depth: int = Field(8, ge=1)
    ffn_mult: int = Field(4, ge=1)
    block_size: int = Field(10, ge=1)
    look_ahead: int = Field(2, ge=0)
    lookahead_unit: Literal["block", "frame"] = "block"
    mask_kind: Literal["lookahead", "blockwise", "framewise"] = "lookahead"
    cond_window: int = Field(2, ge=1)
    encoder_scope: Literal["window", "block"] = "window"
    user_motion: bool = True
    user_audio: bool = True
    time_freq_dim: int = Field(64, ge=2)

    @model_validator(mode="after")
    def _divisibility(self) -> "ModelConfig":
        if self.width % self.heads != 0:
            raise ValueError(f"width {self.width} is not divisible by heads {self.heads}")
        if self.width % self.encoder_heads != 0:
            raise ValueError(
                f"width {self.width} is not divisible by encoder_heads {self.encoder_heads}"
            )
        if (self.width // self.heads) % 2 != 0:
            raise ValueError("per-head width must be even for rotary embedding")
        if self.time_freq_dim % 2 != 0:
            raise ValueError("time_freq_dim must be even")
        return self

    @property
    def effective_look_ahead(self) -> int:
        """Look-ahead actually applied by the configured mask kind."""
        return self.look_ahead if self.mask_kind == "lookahead" else 0

    @property
    def effective_block_size(self) -> int:
        """Block size actually applied by the configured mask kind."""
        return 1 if self.mask_kind == "framewise" else self.block_size


class TrainConfig(_Section):
    """
    Diffusion-forcing training settings.

    Args:
        steps: Optimisation steps.
        batch_size: Windows per step.
        lr: Adam learning rate.
        window: Frames per training window N.
        block_size: Frames per block.
        look_ahead: Look-ahead l.
        p_drop: Probability of replacing a window's condition by the null condition.
        time_scheme: "independent" per-frame flow times or "blockwise" shared ones.
        seed: Seed of initialisation and batch sampling.
        checkpoint_every: Write a checkpoint every this many steps (0 disables).
        log_every: Log a summary every this many steps.
    """

    steps: int = Field(2000, ge=0)
    batch_size: int = Field(8, ge=1)
    lr: float = Field(1e-4, gt=0.0)
    window: int = Field(50, ge=1)
    block_size: int = Field(10, ge=1)
    look_ahead: int = Field(2, ge=0)
    p_drop: float = Field(0.1, ge=0.0, lt=1.0)
    time_scheme: Literal["independent", "blockwise"] = "independent"
    seed: int = 0
    checkpoint_every: int = Field(0, ge=0)
    log_every: int = Field(100, ge=1)

    @model_validator(mode="after")
    def _window_blocks(self) -> "TrainConfig":
        if self.window % self.block_size != 0:
            raise ValueError(
                f"window {self.window} is not divisible by block_size {self.block_size}"
            )
        return self


class SamplerConfig(_Section):
    """
    Streaming sampler settings.

    Args:
        ode_steps: Euler steps T per block.
        guidance_scale: Classifier-free guidance scale s.
        integrator: ODE integrator.
        cache_blocks: Rolling cache capacity M, in blocks.
        lookahead_mode: "strict" denoises one block at a time, "delayed"
                        co-denoises the next l blocks and emits with delay.
        seed: Seed of the noise stream.
    """

    ode_steps: int = Field(10, ge=1)
    guidance_scale: float = Field(2.0, ge=0.0)
    integrator: Literal["euler"] = "euler"
    cache_blocks: int = Field(8, ge=1)
    lookahead_mode: Literal["strict", "delayed"] = "strict"
    seed: int = 0


class DPOConfig(_Section):
    """
    Preference fine-tuning settings.

    Args:
        beta: Deviation parameter.
        lam: Balancing coefficient of the DPO term.
        steps: Fine-tuning steps.
        batch_size: Pairs (and DF windows) per step.
        lr: Adam learning rate.
        reduction: "sequence" averages errors before the sigmoid margin,
                   "frame" applies the sigmoid per frame.
        seed: Seed of pair batches.
    """

    beta: float = Field(1000.0, gt=0.0)
    lam: float = Field(0.1, ge=0.0)
    steps: int = Field(500, ge=0)
    batch_size: int = Field(8, ge=1)
    lr: float = Field(1e-4, gt=0.0)
    reduction: Literal["sequence", "frame"] = "sequence"
    seed: int = 0


class MetricConfig(_Section):
    """
    Interaction metric settings.

    Args:
        k_expression: K-means clusters for expression SID.
        k_pose: K-means clusters for pose SID.
        paper_k: Use the full-scale cluster counts (15, 9) instead.
        restarts: K-means restarts; the best inertia is kept.
        kmeans_seed: Seed of K-means initialisation.
    """

    k_expression: int = Field(4, ge=1)
    k_pose: int = Field(3, ge=1)
    paper_k: bool = False
    restarts: int = Field(5, ge=1)
    kmeans_seed: int = 0

    @property
    def expression_k(self) -> int:
        return 15 if self.paper_k else self.k_expression

    @property
    def pose_k(self) -> int:
        return 9 if self.paper_k else self.k_pose


class DataConfig(_Section):
    """
    Dataset generation settings.

    Args:
        clip_count: Number of clips.
        clip_frames: Frames per clip.
        seed: Base seed; clip i uses a seed derived from it.
    """

    clip_count: int = Field(64, ge=1)
    clip_frames: int = Field(200, ge=2)
    seed: int = 0


class RunSettings(_Section):
    """
    Process-level settings.

    Args:
        seed: Global seed.
        log_level: Logging level name.
        record_timing: Write wall-clock values; False writes zeros so outputs
                       are byte-identical across runs.
        threads: torch intra-op threads.
    """

    seed: int = 0
    log_level: str = "INFO"
    record_timing: bool = True
    threads: int = Field(1, ge=1)


class RunConfig(_Section):
    """Complete configuration of a reactive_avatar run."""

    world: WorldParams = Field(default_factory=WorldParams)
    codec: CodecConfig = Field(default_factory=CodecConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    dpo: DPOConfig = Field(default_factory=DPOConfig)
    metrics: MetricConfig = Field(default_factory=MetricConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    run: RunSettings = Field(default_factory=RunSettings)

    @model_validator(mode="after")
    def _consistent_blocks(self) -> "RunConfig":
        if self.train.block_size != self.model.block_size:
            raise ValueError("train.block_size must equal model.block_size")
        if self.train.look_ahead != self.model.look_ahead:
            raise ValueError("train.look_ahead must equal model.look_ahead")
        if self.data.clip_frames < self.train.window:
            raise ValueError("data.clip_frames must be at least train.window")
        if self.codec.latent_dim != self.model.latent_dim:
            raise ValueError("codec.latent_dim must equal model.latent_dim")
        return self


class ConfigManager:
    """Manager for loading, saving and digesting run configurations."""

    SECTIONS = tuple(RunConfig.model_fields)

    @staticmethod
    def from_flat(values: Dict[str, Any]) -> RunConfig:
        """
        Build a RunConfig from dotted keys.

        Raises:
            ConfigError: On unknown sections or keys, or invalid values.
        """
        nested: Dict[str, Dict[str, Any]] = {}
        for key, value in values.items():
            if "." not in key:
                raise ConfigError(f"Key '{key}' has no section prefix")
            section, field = key.split(".", 1)
            if section not in ConfigManager.SECTIONS:
                raise ConfigError(f"Unknown config section '{section}' in key '{key}'")
            nested.setdefault(section, {})[field] = value
        try:
            return RunConfig.model_validate(nested)
        except ValidationError as e:
            raise ConfigError(f"Invalid configuration: {e}") from e

    @staticmethod
    def load_config(config_path: Optional[Union[str, Path]] = None) -> RunConfig:
        """
        Load a run configuration.

        Args:
            config_path: Path to a `key = value` file. None gives the defaults.

        Returns:
            The validated configuration.

        Raises:
            ConfigError: If the file is missing, malformed or invalid.
        """
        if config_path is None:
            return RunConfig()
        try:
            values = load_kv_file(config_path)
        except FileNotFoundError as e:
            raise ConfigError(f"Config file not found: {config_path}") from e
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return ConfigManager.from_flat(values)

    @staticmethod
    def to_flat(config: RunConfig) -> Dict[str, str]:
        """Render a configuration as sorted dotted keys with string values."""
        flat: Dict[str, str] = {}
        for section in ConfigManager.SECTIONS:
            for field, value in getattr(config, section).model_dump().items():
                if isinstance(value, bool):
                    value = "true" if value else "false"
                flat[f"{section}.{field}"] = str(value)
        return dict(sorted(flat.items()))

    @staticmethod
    def save_config(config: RunConfig, config_path: Union[str, Path]) -> None:
        """Write a configuration as a canonical `key = value` file."""
        path = Path(config_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dump_kv(ConfigManager.to_flat(config)), encoding="utf-8")

    @staticmethod
    def digest(config: RunConfig) -> str:
        """Return the 64-bit run digest (16 hex digits) of a configuration."""
        text = dump_kv(ConfigManager.to_flat(config))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    @staticmethod
    def with_seed(config: RunConfig, seed: int) -> RunConfig:
        """Return a copy whose global and per-section seeds follow `seed`."""
        updated = config.model_copy(deep=True)
        updated.run.seed = seed
        updated.data.seed = seed
        updated.train.seed = seed
        updated.sampler.seed = seed
        updated.dpo.seed = seed
        updated.codec.seed = seed
        return updated

    @staticmethod
    def get_section(name: str, config: Optional[RunConfig] = None) -> _Section:
        """
        Get one section of a configuration.

        Raises:
            KeyError: If the section does not exist.
        """
        if config is None:
            config = RunConfig()
        if name not in ConfigManager.SECTIONS:
            raise KeyError(f"No configuration section '{name}'")
        return getattr(config, name)
