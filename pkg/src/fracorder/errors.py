"""Exception and warning classes raised across the package."""

from __future__ import annotations


class FracOrderError(Exception):
    """Base class for all library errors."""


class DomainError(FracOrderError):
    """Series arguments fall outside the admitted series domain."""


class NonConvergence(FracOrderError):
    """A truncated series did not reach tolerance within its degree budget."""


class StepSizeError(FracOrderError):
    """Time grid too coarse for the requested ODE tolerance."""


class ResolutionError(FracOrderError):
    """Estimated eigenvalue discretization error above threshold."""


class NormalizationError(FracOrderError):
    """Eigenfunction cannot be normalized by its value at x = 0."""


class UnsupportedCase(FracOrderError):
    """No closed form exists for the requested configuration."""


class TailError(FracOrderError):
    """No admissible mode count meets the tail tolerance."""


class RadiusError(FracOrderError):
    """Power expansion evaluated outside its radius of convergence."""


class WindowError(FracOrderError):
    """Observation window too short for the requested transform points."""


class SignViolation(FracOrderError):
    """Alternating sign law of the power coefficients is violated."""


class NoiseFloorError(FracOrderError):
    """Leading exponent cannot be resolved above the noise floor."""


class MaxIterError(FracOrderError):
    """Iterative fit hit its iteration cap before converging.

    ``result`` holds the last iterate when the fit can report one.
    """

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class DegenerateOrderError(FracOrderError):
    """Two fitted orders collapsed onto each other."""


class AllFitsFailed(FracOrderError):
    """Every candidate model order failed to fit."""


class ConfigError(FracOrderError, ValueError):
    """Run configuration cannot be parsed or violates a precondition."""


class QuadratureWarning(UserWarning):
    """Trapezoid and Simpson projections disagree."""


class AssumptionWarning(UserWarning):
    """Input data violate a hypothesis under which identification is guaranteed."""
