"""Exception types shared across the package.

Each class maps to one CLI exit code (see :mod:`hybridmask.cli`).
"""


class HybridMaskError(Exception):
    """Base class for all package errors."""


class RejectedInputError(HybridMaskError, ValueError):
    """An argument violates an operation's preconditions."""


class ConfigError(HybridMaskError, ValueError):
    """A configuration is invalid or infeasible."""


class NumericFailure(HybridMaskError, ArithmeticError):
    """A loss, activation or update became non-finite."""

    def __init__(self, message, where=None):
        super().__init__(message if where is None else f"{where}: {message}")
        self.where = where


class LoadError(HybridMaskError, OSError):
    """A file is missing or malformed."""

    def __init__(self, message, path=None):
        super().__init__(message if path is None else f"{path}: {message}")
        self.path = path
