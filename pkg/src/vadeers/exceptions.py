"""Exception hierarchy shared across the package.

Exit-code mapping for the CLI lives in ``vadeers.cli``: usage errors exit 1,
``DataError`` exits 2, ``NumericError`` exits 3.
"""


class VadeersError(Exception):
    """Base class for all package errors."""


class ContractViolation(VadeersError, ValueError):
    """An operation was called with arguments violating its contract
    (shape mismatch, invalid range, broken invariant)."""


class NumericError(VadeersError, ArithmeticError):
    """A computation produced non-finite values or diverged."""


class DataError(VadeersError, ValueError):
    """Malformed input data: bad CSV cell, duplicate id, width mismatch."""


class CheckpointError(VadeersError, ValueError):
    """Checkpoint file is unreadable, has the wrong version, or its
    dimensions do not match what the caller expects."""


class UndefinedMetricError(VadeersError, ValueError):
    """A metric is mathematically undefined for the given input,
    e.g. Pearson correlation of a constant vector."""
