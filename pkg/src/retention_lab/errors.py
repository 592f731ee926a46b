"""Exception types. Each maps to a CLI exit code."""


class RetentionLabError(Exception):
    exit_code = 1


class ConfigError(RetentionLabError, ValueError):
    exit_code = 2


class ValidationError(RetentionLabError, ValueError):
    """A single record or value violates a domain rule."""

    exit_code = 3

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class DataError(RetentionLabError, ValueError):
    exit_code = 3


class SchemaError(DataError):
    def __init__(self, message: str, column: str | None = None):
        super().__init__(message)
        self.column = column


class RowError(DataError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ModelIntegrityError(RetentionLabError):
    exit_code = 4


class InvariantError(RetentionLabError):
    exit_code = 4
