"""Exception hierarchy shared across the package."""


class AmimvError(Exception):
    """Base class for all package errors."""


class DimensionError(AmimvError):
    """Shapes do not satisfy an operation's contract."""


class ValidationError(AmimvError):
    """Input data violates a domain precondition."""


class FormatError(AmimvError):
    """A file does not conform to the expected binary format."""


class ContractError(AmimvError):
    """An API contract was violated by the caller."""


class NumericError(AmimvError):
    """Training produced a non-finite value."""
