"""Exception types shared across the package."""

from __future__ import annotations


class LfaError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(LfaError):
    """A configuration violates one of its invariants."""


class ShapeError(LfaError):
    """Tensor/array shapes do not match the operation contract."""


class ParameterError(LfaError):
    """A scalar argument is outside its documented domain."""


class GenerationError(LfaError):
    """Synthetic data generation could not satisfy its constraints."""


class ManifestError(LfaError):
    """A dataset manifest is malformed or inconsistent."""


class CheckpointError(LfaError):
    """Base class for checkpoint serialization failures."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""


class CheckpointIntegrityError(CheckpointError):
    """Checkpoint file is truncated or structurally corrupt."""


class TrainingDiverged(LfaError):
    """A loss became non-finite during training."""

    def __init__(self, loss_name: str, epoch: int, step: int):
        self.loss_name = loss_name
        self.epoch = epoch
        self.step = step
        super().__init__(
            f"non-finite loss '{loss_name}' at epoch {epoch}, step {step}; training aborted"
        )
