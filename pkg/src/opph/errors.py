"""Exception types shared across the package."""


class OpphError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(OpphError, ValueError):
    """An argument violates a documented precondition (bad dimensions, ranges, ...)."""


class FormatError(OpphError, ValueError):
    """A file or byte stream does not conform to its documented format."""


class TruncationError(FormatError):
    """A byte stream ended before the payload its header promised."""


class ParseError(FormatError):
    """A text record could not be parsed; carries the offending location."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        loc = ""
        if path is not None:
            loc += f"{path}"
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.line = line
        self.path = path


class DegenerateCorrelationError(OpphError, ValueError):
    """Pearson correlation is undefined because one series has zero variance."""
