"""Exception hierarchy shared by all modules.

Every error raised deliberately by this package derives from HierControlError,
so callers (and the CLI) can map failures onto exit codes without string
matching.  Validation problems carry the offending key or node so messages
stay actionable.
"""

from __future__ import annotations


class HierControlError(Exception):
    """Base class for all package errors."""


class ValidationError(HierControlError):
    """A scenario / configuration value violates its constraint."""


class GeometryError(HierControlError):
    """Region geometry is inconsistent (inclusions, overlaps, resolution)."""


class GridMismatchError(HierControlError):
    """Two objects built on different grids were combined."""


class CoefficientError(HierControlError):
    """A coefficient field violates ellipticity, symmetry or shape rules."""


class WeightDomainError(HierControlError):
    """A Carleman weight was requested where it is singular (t = 0 or t = T)."""


class EtaConstructionError(HierControlError):
    """The weight profile eta could not be built with the requested focus."""


class SolverError(HierControlError):
    """A time-stepping solve failed (non-finite values, Dirichlet violation)."""


class BlowUpError(SolverError):
    """The quasi-linear forward solve left the trust region.

    Carries the slice index at which the relative update exceeded the
    divergence threshold.
    """

    def __init__(self, message: str, slice_index: int):
        super().__init__(message)
        self.slice_index = slice_index


class NonConvergenceError(HierControlError):
    """An iterative loop hit its iteration cap; carries the residual history."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class ConditioningError(HierControlError):
    """Conjugate gradients stagnated; the operator is numerically degenerate."""


class OracleError(HierControlError):
    """An independent verification oracle could not be assembled or solved."""
