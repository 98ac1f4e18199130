"""Exception hierarchy shared by every nl2econ module."""


class Nl2EconError(Exception):
    """Base class for all nl2econ failures."""


class ValidationError(Nl2EconError, ValueError):
    """An invariant, parameter or contract was violated."""


class ParseError(ValidationError):
    """An input file does not follow its documented layout."""

    def __init__(self, path, line_no, message):
        """Initialize the parse error.

        Args:
            path: File being parsed
            line_no: 1-based line number of the offending line (None if not line-specific)
            message: What went wrong
        """
        self.path = str(path)
        self.line_no = line_no
        where = f"{self.path}:{line_no}" if line_no is not None else self.path
        super().__init__(f"{where}: {message}")


class StageError(Nl2EconError):
    """A pipeline stage failed; the original exception is chained as __cause__."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {cause}")

    @property
    def is_validation(self) -> bool:
        """True when the underlying failure was a validation error."""
        return isinstance(self.__cause__, ValidationError)
