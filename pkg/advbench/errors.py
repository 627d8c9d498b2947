"""
Exception hierarchy for advbench.

Every error raised on purpose by the package derives from AdvBenchError,
so the CLI can turn any of them into a diagnostic and a nonzero exit code.
"""

from typing import Optional


class AdvBenchError(Exception):
    """Base class for all advbench errors."""
    pass


class ConfigError(AdvBenchError):
    """Raised when a configuration, shape or catalog lookup is invalid."""
    pass


class MissingFieldError(ConfigError):
    """Raised when a required run setting was given neither by file nor by flag."""

    def __init__(self, field: str):
        super().__init__(f"Missing required setting '{field}'")
        self.field = field


class InputError(AdvBenchError):
    """Raised when runtime input values are out of their legal range."""
    pass


class FormatError(AdvBenchError):
    """Raised when an ADVW archive or IDX file is malformed."""

    def __init__(self, message: str, offset: Optional[int] = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(AdvBenchError):
    """Raised when training diverges."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class CandidateError(AdvBenchError):
    """Raised when fewer attack candidates qualify than were requested."""

    def __init__(self, requested: int, available: int):
        super().__init__(
            f"Requested {requested} candidates but only {available} qualify"
        )
        self.requested = requested
        self.available = available


class ReportError(AdvBenchError):
    """Raised when a report cannot be written or parsed."""
    pass
