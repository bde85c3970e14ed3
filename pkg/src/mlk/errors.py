"""Exception types shared across the package."""


class MlkError(Exception):
    """Base class for all library errors."""


class DimensionError(MlkError):
    """Array shape or grid dimension mismatch."""


class ConfigError(MlkError):
    """Invalid configuration value or combination."""


class DegenerateRangeError(MlkError):
    """NRMSE normalization range is zero while the arrays differ."""


class SizeMismatchError(MlkError):
    """Serialized payload size disagrees with its manifest or header."""


class FormatError(MlkError):
    """Corrupt or unsupported container/codec bytes."""


class TrainingDivergedError(MlkError):
    """Autoencoder training produced a non-finite loss."""

    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss
