"""
Error hierarchy for the forge pipeline.

Validation errors map to CLI exit code 2, I/O errors to exit code 3.
"""

from typing import Optional


class ForgeError(Exception):
    """Base class for every error raised by the pipeline"""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class ForgeValidationError(ForgeError, ValueError):
    """An input violates a documented invariant"""


class ClipValidationError(ForgeValidationError):
    pass


class ShapeMismatchError(ForgeValidationError):
    pass


class DimensionMismatchError(ForgeValidationError):
    pass


class CorpusTooSmallError(ForgeValidationError):
    pass


class UnknownLabelError(ForgeValidationError):
    pass


class UnknownCorruptionError(ForgeValidationError):
    pass


class UntrainedModelError(ForgeValidationError):
    pass


class DegenerateCorpusError(ForgeValidationError):
    pass


class NonFiniteObjectiveError(ForgeValidationError):
    pass


class FrameIndexError(ForgeValidationError, IndexError):
    pass


class ForgeIOError(ForgeError, OSError):
    """A file is missing, unreadable or malformed"""


class ClipParseError(ForgeIOError):
    pass


class ReportError(ForgeIOError):
    pass


def with_context(error: ForgeError, context: str) -> ForgeError:
    """Return a copy of `error` whose message is prefixed with `context`"""
    wrapped = type(error)(f"{context}: {error}", field=error.field)
    wrapped.__cause__ = error
    return wrapped
