"""Exception hierarchy shared across the package.

Service and CLI layers map these onto HTTP statuses and exit codes, so new
error types should subclass one of the two branches: ``ConfigError`` for
bad requests, ``NumericFailure`` for computations that started and failed.
"""
from __future__ import annotations

__all__ = [
    "PamError",
    "ConfigError",
    "SingularSiteError",
    "SnapshotFormatError",
    "DivergentMomentError",
    "NumericFailure",
    "ConvergenceError",
    "NonMonotoneError",
    "StabilityError",
    "MethodDisagreement",
    "TruncationError",
]


class PamError(Exception):
    """Base class for all package errors."""


class ConfigError(PamError, ValueError):
    """Invalid parameters or inconsistent request."""


class SingularSiteError(PamError):
    """An operation consumed a -inf entry it is not defined for."""

    def __init__(self, site, message: str | None = None):
        self.site = tuple(int(c) for c in site)
        super().__init__(message or f"field is -inf at site {self.site}")


class SnapshotFormatError(PamError):
    """Malformed snapshot file: bad header or payload size mismatch."""


class DivergentMomentError(ConfigError):
    """Exponential moment H(t) is +inf for the requested argument."""


class NumericFailure(PamError):
    """A numeric routine failed to produce a trustworthy result."""


class ConvergenceError(NumericFailure):
    """Iteration exceeded its budget; carries the residual trace."""

    def __init__(self, message: str, trace=None):
        self.trace = list(trace) if trace is not None else []
        super().__init__(message)


class NonMonotoneError(ConvergenceError):
    """A descent that is asserted monotone increased its objective."""


class StabilityError(NumericFailure):
    """Time stepping produced NaN/overflow or violated a stability bound."""


class MethodDisagreement(NumericFailure):
    """Two independent methods disagree beyond tolerance."""

    def __init__(self, message: str, values: dict):
        self.values = dict(values)
        super().__init__(f"{message}: {self.values}")


class TruncationError(NumericFailure):
    """Finite-box truncation detected (mass piled up near the boundary)."""
