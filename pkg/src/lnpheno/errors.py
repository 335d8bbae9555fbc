"""Exception hierarchy shared by all pipeline stages."""


class LNPhenoError(Exception):
    """Base class for package errors."""


class ConfigError(LNPhenoError):
    """A configuration file or parameter is invalid."""


class DataError(LNPhenoError):
    """Input data violates a schema or a precondition."""


class CohortFormatError(DataError):
    """A JSONL row could not be parsed or validated."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")
