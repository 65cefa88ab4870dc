"""Exception taxonomy shared across the package.

Exit-code mapping used by the CLI: ParseError/ValidationError/ContractViolation -> 1,
OSError -> 2, NumericalError -> 3.
"""


class AbsanetError(Exception):
    """Base class for all package errors."""


class ParseError(AbsanetError):
    """Malformed input data (bad JSON line, bad config line)."""


class ValidationError(AbsanetError):
    """Schema, invariant, or configuration violation."""


class ContractViolation(AbsanetError):
    """An operation was called with inputs violating its preconditions."""


class NumericalError(AbsanetError):
    """Non-finite values encountered where finite ones are required."""
