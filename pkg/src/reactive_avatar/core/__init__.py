"""
Core package for reactive_avatar.

This module provides the numeric substrate, attention masks, configuration,
errors, checkpoint IO and the vector-field interface shared by every
other package.
"""

from .config import ConfigManager, RunConfig
from .errors import (
    ArtifactIOError,
    ArtifactMismatchError,
    CheckpointFormatError,
    ConfigError,
    NumericAbortError,
    ReactiveAvatarError,
)
from .field import ConstantField, TargetField, VectorField
from .masking import AttentionMask, build_lookahead_mask, build_sliding_window_mask, causality_probe
from .numeric import SeededRng, backprop, finite_diff_grad, gaussian, masked_attention
from .params import AdamState, ParamStore, adam_step
from .schema import ConditionTriplet, FlowTimes, LatencyReport, MetricReport, PreferencePair

__all__ = [
    "ConfigManager",
    "RunConfig",
    "ReactiveAvatarError",
    "ConfigError",
    "NumericAbortError",
    "ArtifactMismatchError",
    "ArtifactIOError",
    "CheckpointFormatError",
    "VectorField",
    "ConstantField",
    "TargetField",
    "AttentionMask",
    "build_lookahead_mask",
    "build_sliding_window_mask",
    "causality_probe",
    "SeededRng",
    "gaussian",
    "masked_attention",
    "backprop",
    "finite_diff_grad",
    "ParamStore",
    "AdamState",
    "adam_step",
    "ConditionTriplet",
    "FlowTimes",
    "PreferencePair",
    "LatencyReport",
    "MetricReport",
]
