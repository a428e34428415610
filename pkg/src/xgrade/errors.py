"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4. Everything else is a plain bug.
"""


class XGradeError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(XGradeError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigError(XGradeError):
    """A config file or config object is malformed or inconsistent."""


class DataError(XGradeError):
    """A manifest, image file, or prediction file cannot be used."""


class NumericError(XGradeError):
    """Non-finite values were produced or supplied where finite ones are required."""


class CheckpointError(XGradeError):
    """A checkpoint file is malformed or incompatible with the network."""


class UndefinedMetricError(XGradeError):
    """The requested metric is undefined for the given counts (e.g. no positives)."""
