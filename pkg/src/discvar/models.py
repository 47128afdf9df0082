"""Benchmark ODE systems and a name registry for the CLI."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, InvalidParameterError
from .ode_core import OdeSystem

G = 9.81

# Default initial conditions; override in configs.
DEFAULT_X0 = {
    "pendulum": (1.0, 0.0),
    "fitzhugh-nagumo": (-1.0, 1.0),
    "linear-test": (1.0,),
}


def _pendulum_rhs(x, theta):
    length = theta[..., 0]
    return np.stack([x[..., 1], -(G / length) * np.sin(x[..., 0])], axis=-1)


def _fn_rhs(x, theta):
    v, r = x[..., 0], x[..., 1]
    a, b, c = theta[..., 0], theta[..., 1], theta[..., 2]
    return np.stack([c * (v - v**3 / 3 + r), -(1 / c) * (v - a + b * r)], axis=-1)


def _linear_rhs(x, theta):
    return theta[..., :1] * x


def _positive_length(theta):
    return theta[..., 0] > 0


def _nonzero_c(theta):
    return theta[..., 2] != 0


def _zero_rhs(x, theta):
    return np.zeros_like(x)


def pendulum_field(x, theta):
    """Pendulum right-hand side ``(y2, -(g/L) sin y1)`` with ``theta = (L,)``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if not np.all(theta[..., 0] > 0):
        raise InvalidParameterError(f"pendulum length must be positive, got {theta[..., 0]}")
    return _pendulum_rhs(np.asarray(x, dtype=float), theta)


def fn_field(x, theta):
    """FitzHugh-Nagumo right-hand side with ``theta = (a, b, c)``."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta[..., 2] == 0):
        raise InvalidParameterError("FitzHugh-Nagumo parameter c must be nonzero")
    return _fn_rhs(np.asarray(x, dtype=float), theta)


PENDULUM = OdeSystem("pendulum", 2, 1, _pendulum_rhs, ("L",), _positive_length)
FITZHUGH_NAGUMO = OdeSystem("fitzhugh-nagumo", 2, 3, _fn_rhs, ("a", "b", "c"), _nonzero_c)
LINEAR_TEST = OdeSystem("linear-test", 1, 1, _linear_rhs, ("rate",))


def zero_system(dimension: int = 2) -> OdeSystem:
    """``f == 0`` in ``dimension`` states, one dummy parameter."""
    return OdeSystem(f"zero{dimension}", dimension, 1, _zero_rhs, ("unused",))


REGISTRY = {
    "pendulum": PENDULUM,
    "fitzhugh-nagumo": FITZHUGH_NAGUMO,
    "linear-test": LINEAR_TEST,
}


def get_system(name: str) -> OdeSystem:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown system {name!r}; choose from {sorted(REGISTRY)}") from None


def pendulum_energy(x, length):
    """``0.5 y2^2 - (g/L) cos y1``; conserved by the exact flow."""
    x = np.asarray(x, dtype=float)
    return 0.5 * x[..., 1] ** 2 - (G / length) * np.cos(x[..., 0])
