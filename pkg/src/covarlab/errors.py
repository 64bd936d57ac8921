"""Exception types shared across the package."""


class CovarlabError(Exception):
    """Base class for every error raised by covarlab."""


class QuadratureError(CovarlabError, ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance.

    Attributes
    ----------
    estimate : float
        Best value obtained.
    error : float
        Achieved absolute error estimate.
    """

    def __init__(self, message, estimate=float("nan"), error=float("inf")):
        super().__init__(f"{message} (estimate={estimate!r}, error={error!r})")
        self.estimate = estimate
        self.error = error


class PreconditionError(CovarlabError, ValueError):
    """An operation was called outside its mathematical preconditions."""


class DomainError(CovarlabError, ValueError):
    """Input values lie outside the domain of a function (e.g. log of a nonpositive value)."""


class UndefinedLimitError(CovarlabError, ValueError):
    """The requested limit does not exist finitely (e.g. g(0+) for a singular kernel)."""


class ContractError(CovarlabError, ValueError):
    """Shape or grid mismatch between arguments."""


class ConfigurationError(CovarlabError, ValueError):
    """A configuration is invalid or would exceed the resource budget."""


class NumericalFailure(CovarlabError, ArithmeticError):
    """A dense linear-algebra step failed (e.g. covariance not positive semidefinite)."""

    def __init__(self, message, min_eigenvalue=float("nan")):
        super().__init__(f"{message} (min eigenvalue estimate {min_eigenvalue:.3e})")
        self.min_eigenvalue = min_eigenvalue


class HypothesisViolation(CovarlabError):
    """A convergence study was requested for a configuration failing the theorem's assumptions."""

    def __init__(self, failures, audit=None):
        super().__init__("assumption audit failed: " + "; ".join(failures))
        self.failures = list(failures)
        self.audit = audit
