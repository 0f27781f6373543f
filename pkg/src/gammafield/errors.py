"""Exception hierarchy.

Input problems derive from :class:`ConfigurationError` (CLI exit code 2);
numerical failures derive from :class:`NumericalError` (CLI exit code 3).
"""


class GammaFieldError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GammaFieldError, ValueError):
    """Invalid parameters, malformed configs, violated preconditions."""


class DomainError(ConfigurationError):
    """Argument outside the mathematical domain of an operation."""


class DivergenceError(DomainError):
    """A singular integral was requested outside its convergence range."""


class StatisticsError(ConfigurationError):
    """Too few samples or design points for a statistical procedure."""


class NumericalError(GammaFieldError, ArithmeticError):
    """A computation could not reach its stated accuracy."""


class IntegrabilityError(NumericalError):
    """Quadrature of a caller-supplied function did not converge."""


class RankUndeterminedError(NumericalError):
    """No Laguerre coefficient above tolerance up to the requested order."""

    def __init__(self, message, coeffs=None):
        super().__init__(message)
        self.coeffs = coeffs


class SimulationInfeasibleError(NumericalError):
    """Neither circulant embedding nor the dense fallback produced a sampler."""


class DiscretizationError(NumericalError):
    """A discretized operator violated a structural property (e.g. positivity)."""


class ConvergenceError(NumericalError):
    """A series was evaluated outside its disc of convergence."""


class AccuracyError(NumericalError):
    """An inversion or quadrature missed its tolerance."""


class ResolutionError(NumericalError):
    """A quadrature grid is too coarse for the requested accuracy."""


class EvaluationError(NumericalError):
    """A subordinating function returned non-finite values."""
