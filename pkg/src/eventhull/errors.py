"""Exception types shared across the package."""


class EventHullError(Exception):
    """Base class for all package errors."""


class DomainError(EventHullError, ValueError):
    """An argument violates a documented precondition."""


class ExtrapolationError(DomainError):
    """A timestamp falls outside the trajectory's time range."""


class ParseError(EventHullError, ValueError):
    """A file could not be parsed; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ReconstructionFailedError(EventHullError, RuntimeError):
    """No enclosed cavity was found in the carved volume."""


class NumericalAbortError(EventHullError, RuntimeError):
    """An optimization produced a non-finite loss."""
