"""Exceptions raised across the package."""
from typing import Any, Optional


class MopgError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MopgError, ValueError):
    """Invalid configuration or mismatched dimensions.

    ``line`` is the 1-based line of the offending key in an experiment file,
    when it could be located.
    """

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f'line {line}: {message}'
        super().__init__(message)


class ArgumentError(MopgError, ValueError):
    """An operation was called with an out-of-range or empty argument."""


class UnsupportedEnvironmentError(MopgError):
    """The environment cannot serve the request (e.g. it has no tabular model)."""


class StreamReuseError(MopgError):
    """An rng-stream key was issued twice within one ledger."""


class TrainingAborted(MopgError):
    """Training stopped early; carries the partial run log and the failing record."""

    def __init__(self, message: str, run_log: Any = None, record: Any = None):
        super().__init__(message)
        self.run_log = run_log
        self.record = record
