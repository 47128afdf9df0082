"""Exception hierarchy shared by the solver, filter and CLI layers."""


class DiscvarError(Exception):
    """Base class for all package errors."""


class ConfigError(DiscvarError, ValueError):
    """Invalid configuration or argument (bad grid, bad prior, bad shapes)."""


class InvalidParameterError(ConfigError):
    """ODE parameter outside the model's domain (e.g. pendulum length <= 0)."""


class IntegrationError(DiscvarError, ArithmeticError):
    """The one-step solver produced non-finite values."""

    def __init__(self, message, time=None, component=None, step=None):
        super().__init__(message)
        self.time = time
        self.component = component
        self.step = step


class ModelError(DiscvarError, ArithmeticError):
    """Numerically non positive-definite observation covariance."""


class FilterCollapseError(DiscvarError, ArithmeticError):
    """Every particle weight underflowed to zero at some observation."""

    def __init__(self, message, time_index=None):
        super().__init__(message)
        self.time_index = time_index


class SearchError(DiscvarError):
    """Every hyperparameter cell of a grid search evaluated to -inf."""
