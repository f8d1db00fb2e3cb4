"""Exception hierarchy shared across the package.

Every error raised by ccgnav derives from :class:`CcgNavError`, so callers can
catch the whole family with one clause. Numerical failures carry the
diagnostic quantity that triggered them (pivot index, residual, ...).
"""

from __future__ import annotations


class CcgNavError(Exception):
    """Base class for all ccgnav errors."""


class InvalidArgumentError(CcgNavError, ValueError):
    """An argument violates a documented precondition."""


class FactorizationError(CcgNavError):
    """Cholesky factorization hit a non-positive pivot."""

    def __init__(self, message: str, pivot_index: int):
        super().__init__(message)
        self.pivot_index = pivot_index


class RankError(CcgNavError):
    """A matrix does not have the rank an operation requires."""


class ConvergenceError(CcgNavError):
    """An iterative solver exhausted its budget."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class ConvexityError(CcgNavError):
    """A Hessian that must be positive definite numerically is not."""


class EstimationError(CcgNavError):
    """The sliding-window estimator cannot produce a valid estimate."""


class ConstructionError(CcgNavError):
    """A set construction produced an infeasible or inconsistent object."""


class IndeterminateError(CcgNavError):
    """A feasibility/membership decision could not be resolved either way."""


class InfeasibleQPError(CcgNavError):
    """The safety QP admits no solution (zero row with positive bound)."""


class DegenerateDirectionError(CcgNavError):
    """The smooth filter received a zero constraint direction."""


class ConfigError(CcgNavError):
    """A scenario configuration failed validation."""
