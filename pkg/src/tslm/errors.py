"""Exception hierarchy shared by every pipeline stage."""


class TSLMError(Exception):
    """Base class for all package errors."""


class ShapeError(TSLMError, ValueError):
    pass


class ParameterError(TSLMError, ValueError):
    pass


class NumericError(TSLMError, ArithmeticError):
    pass


class ContractError(TSLMError, ValueError):
    pass


class EmptyLossError(NumericError):
    pass


class FormatError(TSLMError, ValueError):
    pass


class MigrationError(FormatError):
    pass


class DataError(FormatError):
    """Malformed dataset file; carries the offending 1-based line number."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class InjectionError(TSLMError, ValueError):
    pass


class GenerationError(TSLMError, RuntimeError):
    pass


class TransportError(TSLMError, IOError):
    pass


class ProtocolError(TSLMError, ValueError):
    pass


class ParseError(TSLMError, ValueError):
    pass
