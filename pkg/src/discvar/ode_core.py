"""ODE systems, one-step solvers and the local-error estimator.

The working solver is explicit Euler. Runge's method (the explicit
trapezoidal rule) serves as the higher-order companion whose difference
from Euler estimates the local error of each step. A classical RK4 with a
much finer step produces reference trajectories.

Vector fields follow a batch convention: ``field(x, theta)`` accepts
``x`` of shape ``(..., d_X)`` and ``theta`` of shape ``(..., d)`` and
returns an array shaped like ``x``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, IntegrationError, InvalidParameterError

__all__ = [
    "OdeSystem",
    "SolverGrid",
    "LocalErrorEstimate",
    "euler_step",
    "runge_step",
    "estimate_local_error",
    "integrate_interval",
    "integrate_steps",
    "integrate_batch",
    "euler_trajectory",
    "reference_solution",
]

GRID_RTOL = 1e-9


@dataclass(frozen=True)
class OdeSystem:
    """Autonomous ODE ``dx/dt = f(x, theta)``.

    ``param_check`` maps a parameter array ``(..., d)`` to a boolean mask of
    admissible rows; ``None`` means every parameter is admissible.
    """

    name: str
    dimension: int
    param_dimension: int
    vector_field: Callable[[np.ndarray, np.ndarray], np.ndarray]
    param_names: tuple[str, ...] = ()
    param_check: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ConfigError("state dimension must be positive")
        if self.param_dimension < 0:
            raise ConfigError("parameter dimension must be nonnegative")
        if not self.param_names:
            names = tuple(f"theta{i + 1}" for i in range(self.param_dimension))
            object.__setattr__(self, "param_names", names)

    def __call__(self, x, theta):
        return self.vector_field(np.asarray(x, dtype=float), np.asarray(theta, dtype=float))

    def valid_params(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.param_check is None:
            return np.ones(theta.shape[:-1], dtype=bool)
        return np.asarray(self.param_check(theta), dtype=bool) & np.all(np.isfinite(theta), axis=-1)

    def check_params(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape[-1] != self.param_dimension:
            raise ConfigError(
                f"{self.name}: expected {self.param_dimension} parameters, got {theta.shape[-1]}"
            )
        if not np.all(self.valid_params(theta)):
            raise InvalidParameterError(f"{self.name}: parameter {theta.tolist()} outside the model domain")
        return theta


@dataclass(frozen=True)
class SolverGrid:
    """Fine solver grid aligned with the observation times.

    Observation ``i`` sits at ``t_i = t_0 + i*k*h``. The solver starts at
    ``t_start <= t_0``; the stretch before the first observation must also
    be a whole number of steps (``warmup_steps``).
    """

    h: float
    k: int
    observation_times: tuple[float, ...]
    t_start: float = 0.0
    warmup_steps: int = field(init=False)

    def __post_init__(self):
        times = tuple(float(t) for t in self.observation_times)
        object.__setattr__(self, "observation_times", times)
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ConfigError(f"step size must be positive, got {self.h}")
        if int(self.k) != self.k or self.k < 1:
            raise ConfigError(f"steps per interval must be a positive integer, got {self.k}")
        object.__setattr__(self, "k", int(self.k))
        if not times:
            raise ConfigError("at least one observation time is required")
        span = self.k * self.h
        for a, b in zip(times, times[1:]):
            if not b > a:
                raise ConfigError("observation times must be strictly increasing")
            if abs((b - a) - span) > GRID_RTOL * max(span, abs(b - a)):
                raise ConfigError(
                    f"interval [{a}, {b}] is not k*h = {self.k}*{self.h}; interpolation is not supported"
                )
        lead = times[0] - self.t_start
        if lead < -GRID_RTOL * max(1.0, abs(times[0])):
            raise ConfigError("t_start must not exceed the first observation time")
        n0 = round(lead / self.h)
        if abs(n0 * self.h - lead) > GRID_RTOL * max(self.h, abs(lead)):
            raise ConfigError(
                f"first observation t={times[0]} is not a whole number of steps h={self.h} after t_start={self.t_start}"
            )
        object.__setattr__(self, "warmup_steps", int(n0))

    @classmethod
    def from_times(cls, h: float, times: Sequence[float], t_start: float | None = None, k: int | None = None):
        """Build a grid, inferring ``k`` from the observation spacing."""
        times = [float(t) for t in times]
        if t_start is None:
            t_start = times[0]
        if k is None:
            if len(times) < 2:
                k = 1
            else:
                k = round((times[1] - times[0]) / h)
                if k < 1:
                    raise ConfigError("observation spacing is shorter than one solver step")
        return cls(h=h, k=k, observation_times=tuple(times), t_start=t_start)

    @property
    def n_intervals(self) -> int:
        return len(self.observation_times) - 1

    def steps_to(self, i: int) -> int:
        """Number of solver steps that end at observation ``i`` from the previous one."""
        return self.warmup_steps if i == 0 else self.k

    def fine_time(self, i: int, j: int) -> float:
        return self.observation_times[i] + j * self.h


@dataclass(frozen=True)
class LocalErrorEstimate:
    value: np.ndarray
    componentwise_abs: np.ndarray


def _rhs(x, theta, sys, t, step=None):
    with np.errstate(all="ignore"):
        f = sys.vector_field(x, theta)
    bad = ~np.isfinite(f)
    if np.any(bad):
        comp = int(np.flatnonzero(bad)[0])
        raise IntegrationError(
            f"{sys.name}: non-finite vector field at t={t}, component {comp}",
            time=t, component=comp, step=step,
        )
    return f


def _as_state(x, sys):
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.dimension,):
        raise ConfigError(f"{sys.name}: state must have shape ({sys.dimension},), got {x.shape}")
    return x


def euler_step(x, theta, h, sys: OdeSystem, t=None):
    """One explicit Euler step ``x + h f(x, theta)``."""
    if not h > 0:
        raise ConfigError("step size must be positive")
    x = _as_state(x, sys)
    theta = sys.check_params(theta)
    return x + h * _rhs(x, theta, sys, t)


def runge_step(x, theta, h, sys: OdeSystem, t=None):
    """One step of Runge's method (explicit trapezoidal / Heun)."""
    if not h > 0:
        raise ConfigError("step size must be positive")
    x = _as_state(x, sys)
    theta = sys.check_params(theta)
    f0 = _rhs(x, theta, sys, t)
    f1 = _rhs(x + h * f0, theta, sys, t)
    return x + (h / 2) * (f0 + f1)


def _step_pair(x, theta, h, sys, t, step=None):
    f0 = _rhs(x, theta, sys, t, step)
    x_euler = x + h * f0
    f1 = _rhs(x_euler, theta, sys, t, step)
    x_runge = x + (h / 2) * (f0 + f1)
    return x_euler, x_euler - x_runge


def estimate_local_error(x, theta, h, sys: OdeSystem, t=None) -> LocalErrorEstimate:
    """Euler minus Runge at ``x``: the local-error proxy driving the prior."""
    if not h > 0:
        raise ConfigError("step size must be positive")
    x = _as_state(x, sys)
    theta = sys.check_params(theta)
    _, err = _step_pair(x, theta, h, sys, t)
    return LocalErrorEstimate(err, np.abs(err))


def integrate_steps(x, theta, h, n_steps, sys: OdeSystem, t0=0.0):
    """Run ``n_steps`` Euler steps; return the end state and per-step estimates.

    Each estimate is taken at the pre-step state of the Euler trajectory.
    """
    x = _as_state(x, sys)
    theta = sys.check_params(theta)
    estimates = []
    for j in range(n_steps):
        x, err = _step_pair(x, theta, h, sys, t0 + j * h, step=j)
        estimates.append(LocalErrorEstimate(err, np.abs(err)))
    return x, estimates


def integrate_interval(x, theta, grid: SolverGrid, i: int, sys: OdeSystem):
    """Advance from observation ``i`` to ``i + 1`` with ``grid.k`` Euler steps."""
    if not 0 <= i < grid.n_intervals:
        raise ConfigError(f"interval index {i} outside [0, {grid.n_intervals - 1}]")
    return integrate_steps(x, theta, grid.h, grid.k, sys, t0=grid.observation_times[i])


def integrate_batch(x, theta, h, n_steps, sys: OdeSystem):
    """Vectorized Euler over a batch of states.

    Parameters
    ----------
    x : ndarray (B, d_X)
    theta : ndarray (B, d)
    h : float
    n_steps : int

    Returns
    -------
    x_end : ndarray (B, d_X)
    abs_err : ndarray (B, n_steps, d_X)
        ``|Euler - Runge|`` at each pre-step state.
    ok : ndarray (B,) of bool
        False where the trajectory went non-finite; those rows of ``x_end``
        and ``abs_err`` are NaN.
    """
    x = np.array(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    b = x.shape[0]
    abs_err = np.empty((b, n_steps, x.shape[1]))
    ok = np.ones(b, dtype=bool)
    with np.errstate(all="ignore"):
        for j in range(n_steps):
            f0 = sys.vector_field(x, theta)
            x_euler = x + h * f0
            f1 = sys.vector_field(x_euler, theta)
            x_runge = x + (h / 2) * (f0 + f1)
            abs_err[:, j] = np.abs(x_euler - x_runge)
            x = x_euler
            ok &= np.all(np.isfinite(x), axis=1) & np.all(np.isfinite(abs_err[:, j]), axis=1)
    if not np.all(ok):
        x[~ok] = np.nan
        abs_err[~ok] = np.nan
    return x, abs_err, ok


def euler_trajectory(x0, theta, grid: SolverGrid, sys: OdeSystem):
    """Euler solution at every observation time, starting from ``grid.t_start``."""
    x = _as_state(x0, sys)
    theta = sys.check_params(theta)
    out = []
    for i in range(len(grid.observation_times)):
        n = grid.steps_to(i)
        xb, _, ok = integrate_batch(x[None], theta[None], grid.h, n, sys)
        if not ok[0]:
            raise IntegrationError(f"{sys.name}: Euler trajectory diverged before t={grid.observation_times[i]}",
                                   time=grid.observation_times[i])
        x = xb[0]
        out.append(x)
    return np.array(out)


def _rk4(x, theta, dt, n, sys, t0):
    f = sys.vector_field
    half, sixth = dt / 2, dt / 6
    with np.errstate(all="ignore"):
        for _ in range(n):
            k1 = f(x, theta)
            k2 = f(x + half * k1, theta)
            k3 = f(x + half * k2, theta)
            k4 = f(x + dt * k3, theta)
            x = x + sixth * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(x)):
        comp = int(np.flatnonzero(~np.isfinite(x))[0])
        raise IntegrationError(f"{sys.name}: reference solution diverged before t={t0 + n * dt}",
                               time=t0 + n * dt, component=comp)
    return x


def reference_solution(x0, theta, times, sys: OdeSystem, h_ref: float = 5e-4, t_start: float = 0.0):
    """High-accuracy RK4 solution evaluated at ``times``.

    Each gap between consecutive requested times is split into the
    smallest whole number of equal steps not exceeding ``h_ref``.
    """
    if not h_ref > 0:
        raise ConfigError("reference step must be positive")
    x = _as_state(x0, sys)
    theta = sys.check_params(theta)
    times = [float(t) for t in times]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ConfigError("times must be sorted ascending")
    if times and times[0] < t_start:
        raise ConfigError("times must not precede the initial time")
    key = (sys, tuple(x.tolist()), tuple(theta.tolist()), tuple(times), float(h_ref), float(t_start))
    return _reference_cached(*key).copy()


@functools.lru_cache(maxsize=64)
def _reference_cached(sys, x0, theta, times, h_ref, t_start):
    x = np.array(x0)
    theta = np.array(theta)
    out = []
    t = t_start
    for target in times:
        gap = target - t
        if gap > 0:
            n = max(1, math.ceil(gap / h_ref - 1e-9))
            x = _rk4(x, theta, gap / n, n, sys, t)
        out.append(x.copy())
        t = target
    return np.array(out).reshape(len(times), sys.dimension)
