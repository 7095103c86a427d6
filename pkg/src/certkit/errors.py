"""Exception hierarchy shared by all certkit modules."""


class CertkitError(Exception):
    """Base class for every error raised by certkit."""


class DimensionError(CertkitError, ValueError):
    """Matrix or vector shapes are inconsistent."""


class ShapeError(CertkitError, ValueError):
    """A matrix lacks a required structural property (e.g. symmetry)."""


class StructureError(CertkitError, ValueError):
    """A model does not have the block structure an operation needs."""


class InstabilityError(CertkitError):
    """A matrix that must be Schur stable has spectral radius >= 1."""

    def __init__(self, message, radius=None):
        super().__init__(message)
        self.radius = radius


class SingularityError(CertkitError):
    """A matrix that must be inverted (or be positive definite) is singular."""


class ConvergenceError(CertkitError):
    """An iterative solver hit its iteration cap.

    The last :class:`~certkit.matops.SolverReport` is attached as ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class GridError(CertkitError, ValueError):
    """Grid bounds or quantization are misconfigured."""


class SynthesisInfeasible(CertkitError):
    """No controlled-invariant subset of the target exists on this grid."""


class OutOfDomainError(CertkitError):
    """A state lies outside the grid or outside the controller's winning set."""
