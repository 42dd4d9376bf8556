"""Exception types shared across the package."""


class SchemaError(ValueError):
    """Input does not match the schema registry (columns, vocabularies, codes)."""

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class ValidationError(SchemaError):
    """A value parsed fine but violates a domain constraint (e.g. negative distance)."""


class DataError(ValueError):
    """Numeric data unusable for fitting (non-finite values, empty input)."""


class ShapeError(ValueError):
    """Array dimensions disagree with what a model or metric expects."""


class NumericalError(ArithmeticError):
    """An optimizer produced a non-finite loss or score."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} at iteration {iteration}"
        super().__init__(message)
        self.iteration = iteration


class ConfigError(ValueError):
    """Invalid run configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
