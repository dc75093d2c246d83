"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
InvariantError (and subclasses) -> 4.
"""


class SimselError(Exception):
    """Base class for all package errors."""


class ConfigError(SimselError):
    """Bad configuration: unknown keys, invalid values, missing settings."""


class DataError(SimselError):
    """Bad or unexpected on-disk data: malformed files, shape mismatches."""


class InvariantError(SimselError):
    """A documented invariant or contract was violated."""


class TrainingDiverged(InvariantError):
    """Training produced a non-finite loss."""
