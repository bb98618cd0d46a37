"""Exception types shared across the package."""


class LatentRecourseError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatchError(LatentRecourseError, ValueError):
    """Operands have incompatible shapes for the requested op."""


class LogDomainError(LatentRecourseError, ValueError):
    """log() received a non-positive input."""


class NonScalarLossError(LatentRecourseError, ValueError):
    """backward() was asked to differentiate a non-scalar node."""


class SchemaError(LatentRecourseError, ValueError):
    """Raw data does not conform to the feature schema."""


class UnknownCategoryError(SchemaError):
    """A categorical value is outside the declared category list."""


class MissingValueError(SchemaError):
    """A required cell is empty."""


class NonNumericValueError(SchemaError):
    """A continuous cell failed to parse as a number."""


class SchemaFitError(SchemaError):
    """Statistics cannot be fitted (too few rows or a degenerate column)."""


class SchemaFingerprintError(LatentRecourseError, ValueError):
    """Model and data were built against different feature schemas."""


class ModelFileError(LatentRecourseError, ValueError):
    """A model container file is unreadable."""


class ModelFileVersionError(ModelFileError):
    """Container was written by an incompatible format version."""


class ModelFileTruncatedError(ModelFileError):
    """Container ends before the declared payload does."""


class VicinityExhaustedError(LatentRecourseError, RuntimeError):
    """No training label fell inside the hard vicinity within the retry budget.

    Usually means the vicinity radius k is too small for the label density.
    """


class GenerationError(LatentRecourseError, RuntimeError):
    """Counterfactual generation failed (for example a non-finite decode)."""


class TrainingDivergedError(LatentRecourseError, RuntimeError):
    """A training loss became non-finite.

    ``last_good`` carries the most recent finite-loss model state when one
    exists, so callers can salvage a checkpoint.
    """

    def __init__(self, message: str, last_good=None):
        super().__init__(message)
        self.last_good = last_good
