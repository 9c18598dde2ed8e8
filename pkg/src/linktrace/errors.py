"""Exception taxonomy for fitting and estimation."""
from __future__ import annotations


class LinktraceError(Exception):
    """Base class for library errors."""


class InvalidArgument(LinktraceError, ValueError):
    """A precondition on an operation's inputs was violated."""


class NonIdentifiable(LinktraceError):
    """The data carry no information about one or more parameters.

    Raised e.g. when a portion has zero observed members, or when the
    conditional pattern distribution is degenerate (single venue).
    """


class Diverged(LinktraceError):
    """The size estimate left its admissible range during optimization.

    Carries the best partial state seen so far in ``partial``.
    """

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class DegenerateWorld(LinktraceError):
    """A bootstrap pseudo-population could not be constructed."""


class UndefinedEstimate(LinktraceError):
    """An estimator's divisor is zero or missing."""


class ConfigError(LinktraceError):
    """A configuration or input file violates the documented schema.

    ``location`` names the offending field path or line number.
    """

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)
