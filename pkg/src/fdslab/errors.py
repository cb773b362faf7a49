"""Exception hierarchy shared across the package."""


class FdslabError(Exception):
    """Base class for all package-specific errors."""


class DomainError(FdslabError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SingularityError(DomainError):
    """Evaluation requested at a time where the field or schedule is singular."""


class TheoremDomainError(DomainError):
    """The residual/divergence identity is undefined (interpolant weight alpha_t = 0)."""


class ConfigError(FdslabError, ValueError):
    """Invalid configuration value."""


class TrainingError(FdslabError, RuntimeError):
    """Training diverged or otherwise failed."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class IntegrationError(FdslabError, RuntimeError):
    """Non-finite state or field output encountered during ODE integration."""


class RefinementError(FdslabError, RuntimeError):
    """Non-finite divergence encountered while scoring refinement candidates."""
