"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ValidationError -> 2, NumericError -> 3,
OSError -> 4.
"""


class MetaquillError(Exception):
    pass


class ValidationError(MetaquillError, ValueError):
    """Bad shapes, bad config, bad data."""


class NumericError(MetaquillError, ArithmeticError):
    """NaN/Inf produced; computation must abort, never propagate silently."""
