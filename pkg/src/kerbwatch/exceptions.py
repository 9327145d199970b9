"""Exception hierarchy shared by every kerbwatch module."""


class KerbwatchError(Exception):
    """Base class for all library errors."""


class InvariantViolation(KerbwatchError, ValueError):
    """A value object was constructed with fields that break its invariants."""


class DomainError(KerbwatchError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DegenerateConfigurationError(KerbwatchError, ValueError):
    """Calibration points cannot define a homography (e.g. collinear triple)."""


class SingularSystemError(KerbwatchError, ArithmeticError):
    """The linear system behind a homography solve is numerically singular."""


class HorizonSingularityError(KerbwatchError, ArithmeticError):
    """A point maps onto the horizon line (homogeneous w ~ 0)."""


class CorrectionFailedError(KerbwatchError, ArithmeticError):
    """Iterative lens-distortion inversion did not converge."""

    def __init__(self, message, last_iterate):
        super().__init__(message)
        self.last_iterate = last_iterate


class StreamFormatError(KerbwatchError, ValueError):
    """The detection stream header is missing fields or has the wrong version."""


class StreamOrderError(KerbwatchError):
    """A detection timestamp regressed beyond the reorder tolerance."""


class ConfigError(KerbwatchError, ValueError):
    """Configuration could not be loaded.

    Exactly one of ``field`` (missing/malformed key) or ``invariant``
    (semantic check that failed) is set.
    """

    def __init__(self, message, *, field=None, invariant=None):
        super().__init__(message)
        self.field = field
        self.invariant = invariant


class SinkUnavailable(KerbwatchError, ConnectionError):
    """A telemetry sink could not accept a message right now."""
