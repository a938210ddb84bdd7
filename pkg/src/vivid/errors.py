"""Exception types shared across the package.

Each carries the CLI exit code it maps to.
"""


class VividError(Exception):
    exit_code = 1


class InputError(VividError, ValueError):
    """Rejected input: wrong dims, non-finite values, mismatched shapes."""

    exit_code = 3


class ConfigError(VividError):
    exit_code = 2


class DataError(VividError):
    """A dataset on disk violates the layout or the pair invariants."""

    exit_code = 3


class CheckpointError(VividError):
    exit_code = 3


class NumericalError(VividError, FloatingPointError):
    exit_code = 4
