"""Exception hierarchy shared by all twinseg modules."""

from __future__ import annotations


class TwinsegError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(TwinsegError):
    """Two grids/vectors that must share a shape do not."""


class SumMismatch(TwinsegError):
    """RLE counts do not add up to width*height."""


class ParseError(TwinsegError):
    """A trace record could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(TwinsegError):
    """A parsed record violates a structural invariant."""

    def __init__(self, message: str, field: str | None = None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class ProviderError(TwinsegError):
    """An upstream perception provider failed mid-stream."""


class SpecError(TwinsegError):
    """A synthetic scenario description is inconsistent."""


class NonContiguousFrame(TwinsegError):
    """Twin update received a frame index that does not follow the last one."""


class MissingCapability(TwinsegError):
    """An operation needs data (e.g. depth) the current trace does not carry."""


class PlanInvalid(TwinsegError):
    """An execution plan failed validation; carries the reason list."""

    def __init__(self, reasons: list[str]):
        super().__init__("; ".join(reasons))
        self.reasons = list(reasons)


class ProviderUnreachable(TwinsegError):
    """The chat-completion endpoint could not be reached or answered badly."""


class DslSyntaxError(TwinsegError):
    """Predicate program source is not well-formed; carries a byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ArityError(TwinsegError):
    """A DSL form got the wrong number of arguments."""


class UnknownPredicate(TwinsegError):
    """A DSL form head is not in the supported inventory."""


class SemanticProviderError(TwinsegError):
    """The chat-backed semantic selector failed; callers may fall back."""


class UnknownTrackId(TwinsegError):
    """A reasoning result referenced an id absent from the scene graph."""


class LengthMismatch(TwinsegError):
    """Prediction and ground-truth sequences differ in length."""
