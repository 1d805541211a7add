"""Exception hierarchy shared across the package."""

from __future__ import annotations


class ErrmaxError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ErrmaxError):
    """Invalid, unknown, or inconsistent configuration."""


class InvalidSpecError(ErrmaxError):
    """A structural argument (layer dims, oracle kind, fractions) is malformed."""


class ShapeError(ErrmaxError):
    """An array argument has the wrong dimension."""


class StaleTraceError(ErrmaxError):
    """A forward trace no longer matches the model it was recorded from."""


class TrainingDivergedError(ErrmaxError):
    """Training loss became NaN/Inf. Carries the epoch where it happened."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


class DomainError(ErrmaxError):
    """An input lies outside the valid domain of an operation."""


class KnockedOutError(DomainError):
    """Barrier at or below spot: the option is already knocked out."""


class GradientProbeError(ErrmaxError):
    """Oracle evaluation failed at a finite-difference probe point."""

    def __init__(self, coordinate: int, message: str):
        self.coordinate = coordinate
        super().__init__(message)


class SamplingStarvationError(ErrmaxError):
    """Rejection sampling exhausted its draw budget before accepting enough points."""


class LabelingError(ErrmaxError):
    """Oracle evaluation failed while labeling a sample. Carries the sample index."""

    def __init__(self, index: int, message: str):
        self.index = index
        super().__init__(message)


class IncompatibleSetsError(ErrmaxError):
    """Two labeled sets cannot be combined (dimension or normalizer mismatch)."""


class ParseError(ErrmaxError):
    """A persisted artifact is malformed. Carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class AscentError(ErrmaxError):
    """Gradient ascent failed mid-run. Carries the offending iterate."""

    def __init__(self, iterate, message: str):
        self.iterate = iterate
        super().__init__(message)


class ManifestError(ErrmaxError):
    """A referenced artifact is missing or does not match its recorded hash."""
