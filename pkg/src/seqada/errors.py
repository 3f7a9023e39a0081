"""Exception types shared across the package."""


class SeqadaError(Exception):
    """Base class for all errors raised by seqada."""


class DimensionError(SeqadaError, ValueError):
    """Operand shapes do not agree."""


class NumericDomainError(SeqadaError, ArithmeticError):
    """An op received a value outside its mathematical domain."""


class ContractError(SeqadaError, ValueError):
    """A documented precondition of a call was violated."""


class ConfigError(SeqadaError, ValueError):
    """Invalid configuration value. ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class BudgetError(SeqadaError, ValueError):
    """Annotation request exceeds the remaining budget or the pool size."""


class UnknownIdError(SeqadaError, KeyError):
    """A sample id is not present in the pool it was looked up in."""


class DuplicateIdError(SeqadaError, ValueError):
    """The same sample id was requested more than once."""


class CsvFormatError(SeqadaError, ValueError):
    """Base class for malformed dataset CSV input. ``row`` is 1-based."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class ColumnCountError(CsvFormatError):
    pass


class NonNumericFeatureError(CsvFormatError):
    pass


class UnknownDomainError(CsvFormatError):
    pass


class SchemaError(SeqadaError, ValueError):
    """A metrics file does not match the expected columns or version."""
