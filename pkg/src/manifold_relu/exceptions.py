"""Exception hierarchy shared by every module of the package."""


class ManifoldReluError(Exception):
    """Base class for all package errors."""


class PreconditionError(ManifoldReluError, ValueError):
    """An argument violates a documented precondition."""


class InputShapeError(PreconditionError):
    """Array dimensions do not match what the network or model expects."""


class DomainError(PreconditionError):
    """A point lies outside the domain where an operation is defined."""


class BudgetInfeasibleError(PreconditionError):
    """Derived tolerances contradict each other (for example a ramp narrower than its error)."""


class ReachViolationError(PreconditionError):
    """A chart radius is too large for the manifold's reach."""


class NumericOverflowError(ManifoldReluError, ArithmeticError):
    """A non-finite value appeared during evaluation or differentiation."""


class ResourceError(ManifoldReluError, MemoryError):
    """A construction would exceed a configured size cap."""

    def __init__(self, message, required=None):
        super().__init__(message)
        self.required = required


class CoverageError(ManifoldReluError, RuntimeError):
    """A point is not covered by any chart, or a cover could not be completed."""


class GeometryError(ManifoldReluError, RuntimeError):
    """A chart inverse failed to converge or left its chart."""
