"""Exception hierarchy shared across the package."""


class AudioRankError(Exception):
    """Base class for all errors raised by audiorank."""


class ShapeMismatch(AudioRankError, ValueError):
    pass


class DimensionMismatch(ShapeMismatch):
    pass


class LengthMismatch(ShapeMismatch):
    pass


class NonSquareBatch(ShapeMismatch):
    pass


class DegenerateVector(AudioRankError, ValueError):
    """A vector whose norm is below the degeneracy threshold.

    ``index`` holds the offending row when raised from a batched routine.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class EmptyInput(AudioRankError, ValueError):
    pass


class NonPositiveTemperature(AudioRankError, ValueError):
    pass


class NonFiniteInput(AudioRankError, ValueError):
    pass


class OutOfDomain(AudioRankError, ValueError):
    pass


class InvalidDimension(AudioRankError, ValueError):
    pass


class StaleCache(AudioRankError, RuntimeError):
    pass


class BatchTooLarge(AudioRankError, ValueError):
    pass


class StepOutOfRange(AudioRankError, ValueError):
    pass


class NonFiniteGradient(AudioRankError, FloatingPointError):
    pass


class NonFiniteLoss(AudioRankError, FloatingPointError):
    def __init__(self, epoch, batch, value):
        super().__init__(
            f"non-finite loss {value!r} at epoch {epoch}, batch {batch}"
        )
        self.epoch = epoch
        self.batch = batch
        self.value = value


class ConfigError(AudioRankError, ValueError):
    pass


class FormatError(AudioRankError, ValueError):
    pass


class NonFinitePayload(FormatError):
    def __init__(self, row, col):
        super().__init__(f"non-finite value at row {row}, col {col}")
        self.row = row
        self.col = col


class IndexOutOfRange(AudioRankError, IndexError):
    pass


class MissingSplit(AudioRankError, ValueError):
    pass


class MissingCaption(AudioRankError, ValueError):
    pass


class DuplicateItemId(AudioRankError, ValueError):
    pass


class InvalidSpec(AudioRankError, ValueError):
    pass


class EmptyRelevantSet(AudioRankError, ValueError):
    pass


class ZeroVariance(AudioRankError, ValueError):
    pass


class InvalidDf(AudioRankError, ValueError):
    pass
