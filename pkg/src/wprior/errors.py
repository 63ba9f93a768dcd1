"""Exception types shared across the package."""


class WPriorError(Exception):
    """Base class for all package errors."""


class DomainError(WPriorError, ValueError):
    """A parameter value lies outside the family's open parameter domain."""


class SingularityError(WPriorError, ArithmeticError):
    """A Fisher or Hessian matrix is singular or has non-finite entries."""


class ConvergenceError(WPriorError, RuntimeError):
    """An optimizer failed to converge; ``best`` holds the best point found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class NormalizationError(WPriorError, ArithmeticError):
    """A prior could not be normalized over its truncation domain."""


class MCFailure(WPriorError, RuntimeError):
    """Too many non-finite Monte Carlo samples."""


class ConfigError(WPriorError, ValueError):
    """Invalid experiment configuration. ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
