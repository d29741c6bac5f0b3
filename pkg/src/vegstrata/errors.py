"""Exception hierarchy shared across the package."""


class VegstrataError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(VegstrataError):
    """A file does not follow the expected schema (missing columns, bad header)."""


class ParseError(VegstrataError):
    """A cell or value could not be parsed."""


class ValidationError(VegstrataError):
    """Data violates a documented invariant (e.g. point outside the plot disk)."""


class DomainError(VegstrataError):
    """Argument outside the mathematical domain of a function."""


class DegeneracyError(VegstrataError):
    """A fit collapsed to a degenerate configuration."""


class ContractError(VegstrataError):
    """An API precondition was violated by the caller."""


class NumericError(VegstrataError):
    """Non-finite values encountered where finite ones are required."""


class FittingError(VegstrataError):
    """A fitting procedure cannot be carried out on the given data."""


class CheckpointError(VegstrataError):
    """A model checkpoint is unreadable or incompatible."""
