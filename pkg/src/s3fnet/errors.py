"""Exception types shared across the package."""


class S3FError(Exception):
    """Base class for all package errors."""


class ShapeError(S3FError, ValueError):
    """An array argument has the wrong rank, extent, or an empty axis."""


class ConfigError(S3FError, ValueError):
    """A configuration value or combination of values is invalid."""


class DataError(S3FError, ValueError):
    """A dataset or data file violates its contract."""


class IdxFormatError(DataError):
    """Base class for IDX parse failures."""


class IdxBadMagicError(IdxFormatError):
    """IDX file magic number does not match the expected constant."""


class IdxTruncatedError(IdxFormatError):
    """IDX file ends before the payload promised by its header."""


class IdxCountMismatchError(IdxFormatError):
    """Image and label files disagree on the sample count."""


class StateError(S3FError, RuntimeError):
    """An operation was called on an object in the wrong state."""


class IntegrityError(S3FError, RuntimeError):
    """A stored artifact fails its internal consistency check."""


class TrainingDivergedError(S3FError, RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, epoch: int, batch: int, learning_rate: float):
        self.epoch = epoch
        self.batch = batch
        self.learning_rate = learning_rate
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch}, "
            f"learning rate {learning_rate:.3e}"
        )
