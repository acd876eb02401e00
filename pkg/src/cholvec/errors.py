"""Exception types shared across the package."""


class CholvecError(Exception):
    """Base class for package-specific errors."""


class NonSPDFactor(CholvecError):
    """A factored approximation has a (near-)zero diagonal entry where strict
    positive-definiteness is required."""


class Breakdown(CholvecError):
    """Conjugate gradient encountered a nonpositive curvature denominator."""


class ParseError(CholvecError):
    """CSV ingestion failed; carries the 1-based row/column location."""

    def __init__(self, message, row=None, column=None):
        if row is not None:
            message = f"{message} (row {row}, column {column})"
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyDataset(CholvecError):
    """The ingested file contains no usable data rows."""


class ConfigError(CholvecError):
    """A run configuration failed validation; carries the offending field."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
