"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SieveError(Exception):
    """Base class for all package errors."""


class DomainError(SieveError, ValueError):
    """A point lies outside the domain of a basis or of a fitted function."""


class RankError(SieveError, ArithmeticError):
    """A matrix needed by the estimator is singular or numerically rank deficient."""


class NoCandidatesError(SieveError, ValueError):
    """The admissible set of sieve dimensions is empty."""


class ZeroVarianceError(SieveError, ArithmeticError):
    """A studentization needs a strictly positive standard deviation."""


class FailureBudgetError(SieveError, RuntimeError):
    """Too many Monte Carlo replications failed in one table cell."""
