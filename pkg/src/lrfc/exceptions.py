"""Exception types shared across the package.

The CLI maps these onto exit codes: ValidationError -> 2, everything
else raised here -> 1.
"""

from __future__ import annotations


class ValidationError(ValueError):
    """Malformed input: bad config values, scheme/model mismatch, bad files."""


class NumericError(RuntimeError):
    """A numerical procedure failed (non-convergence, NaN loss, ...)."""

    def __init__(self, message: str, *, detail: float | int | None = None):
        super().__init__(message)
        self.detail = detail


class SearchFailure(RuntimeError):
    """No constraint-satisfying scheme was found.

    ``partial`` optionally carries whatever record was assembled before
    the failure so callers can still report it.
    """

    def __init__(self, message: str, *, partial=None):
        super().__init__(message)
        self.partial = partial
