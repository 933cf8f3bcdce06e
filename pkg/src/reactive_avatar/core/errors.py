"""
Error types module.

This module defines the exception hierarchy used across reactive_avatar.
Every error class carries the process exit code the CLI maps it to.
"""

from typing import Optional


class ReactiveAvatarError(Exception):
    """Base class for all reactive_avatar errors."""

    exit_code: int = 1


class ConfigError(ReactiveAvatarError, ValueError):
    """Raised when a run configuration is missing, malformed or invalid."""

    exit_code = 2


class NumericAbortError(ReactiveAvatarError, RuntimeError):
    """
    Raised when an optimisation loop produces a non-finite loss.

    Args:
        message: Human readable description.
        step: The optimisation step at which the loss became non-finite.
        batch_seed: Seed of the batch that produced it.
    """

    exit_code = 3

    def __init__(self, message: str, step: int = -1, batch_seed: Optional[int] = None):
        super().__init__(message)
        self.step = step
        self.batch_seed = batch_seed


class ArtifactMismatchError(ReactiveAvatarError):
    """Raised when an artifact was produced by a different config or architecture."""

    exit_code = 4


class ArtifactIOError(ReactiveAvatarError, IOError):
    """Raised when an artifact cannot be read or written."""

    exit_code = 5


class CheckpointFormatError(ArtifactIOError):
    """
    Raised when a binary container fails validation.

    Args:
        code: Machine readable failure code ("bad-magic", "bad-version",
              "truncated", "duplicate-name", "bad-dtype").
        message: Human readable description.
    """

    def __init__(self, code: str, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code


class ShapeMismatchError(ValueError):
    """Raised when tensors handed to an operation have incompatible shapes."""


class DegenerateMaskError(ValueError):
    """Raised when an attention mask leaves a query row with no admissible key."""


class CacheMismatchError(ValueError):
    """Raised when a KV cache does not match the model it is used with."""


class SessionClosedError(RuntimeError):
    """Raised when a closed streaming session is used."""


class UntrainedCodecError(RuntimeError):
    """Raised when an operation needs a trained latent codec."""
