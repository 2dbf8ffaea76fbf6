"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's preconditions."""


class SchemaError(InvalidInputError):
    """Raised when a CSV file is missing a required column."""

    def __init__(self, column, path=None):
        self.column = column
        self.path = path
        where = f" in {path}" if path is not None else ""
        super().__init__(f"missing column {column!r}{where}")


class UndefinedMetricError(ValueError):
    """Raised when a metric is undefined for the given labels (e.g. AUC with one class)."""


class ConfigError(InvalidInputError):
    """Raised for malformed or inconsistent experiment configuration."""
