"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError (and
subclasses) -> 3, DivergenceError -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration value or combination (e.g. d does not divide T)."""


class DataError(ValueError):
    """Input data violates a documented invariant."""


class FormatError(DataError):
    """On-disk artifact is malformed (bad magic, truncation, ragged CSV)."""


class AtlasCoverageError(DataError):
    """An atlas label in 1..n occupies zero voxels."""


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested operation."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""
