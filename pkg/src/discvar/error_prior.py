"""Markov prior on discretization-error standard deviations.

Across one fine solver step the error scale evolves as::

    sigma <- m * sigma + |L_est|,        m ~ Gamma(shape=alpha, scale=beta)

where ``L_est`` is the Euler-minus-Runge local-error estimate at the
pre-step state. An observation interval chains ``k`` such steps with
independent multipliers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _streams
from .errors import ConfigError
from .ode_core import OdeSystem, integrate_batch

__all__ = [
    "GammaMultiplierPrior",
    "InitialSigmaPrior",
    "RateCheckReport",
    "sample_multiplier",
    "transition_sigma",
    "propagate_interval",
    "rate_check",
]


@dataclass(frozen=True)
class GammaMultiplierPrior:
    """``m ~ Gamma(alpha, beta)`` in shape-scale form, so ``E[m] = alpha*beta``."""

    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float, np.floating, np.integer)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"Gamma {name} must be a positive finite number, got {v!r}")

    @property
    def mean(self) -> float:
        return self.alpha * self.beta

    @property
    def var(self) -> float:
        return self.alpha * self.beta**2

    def frobenius_gap(self, dimension: int) -> float:
        """Closed form of ``E||I - m I||_F^2`` for a ``dimension``-square identity."""
        mean = self.mean
        return dimension * ((1 - mean) ** 2 + self.var)

    @classmethod
    def for_step(cls, h: float, coeff: float = 1.0) -> "GammaMultiplierPrior":
        """Unit-mean prior with scale ``coeff*h**2``; its Frobenius gap is ``d*coeff*h**2``."""
        beta = coeff * h * h
        return cls(alpha=1.0 / beta, beta=beta)


def sample_multiplier(prior: GammaMultiplierPrior, rng: np.random.Generator, size=None):
    return rng.gamma(prior.alpha, prior.beta, size=size)


@dataclass(frozen=True)
class InitialSigmaPrior:
    """Law of the error scale at the solver start time.

    ``zero``: point mass at 0. ``fixed``: point mass at ``sigma0``.
    ``scaled``: point mass at ``c0 * h**exponent`` in every component.
    """

    mode: str = "zero"
    sigma0: tuple[float, ...] | None = None
    c0: float = 1.0
    exponent: float = math.inf

    def __post_init__(self):
        if self.mode not in ("zero", "fixed", "scaled"):
            raise ConfigError(f"unknown initial sigma mode {self.mode!r}")
        if self.mode == "fixed":
            if self.sigma0 is None:
                raise ConfigError("fixed initial prior needs sigma0")
            s = np.asarray(self.sigma0, dtype=float)
            if np.any(~np.isfinite(s)) or np.any(s < 0):
                raise ConfigError("sigma0 must be finite and nonnegative")
            object.__setattr__(self, "sigma0", tuple(float(v) for v in np.atleast_1d(s)))
        if self.mode == "scaled" and not (self.c0 >= 0 and self.exponent >= 0):
            raise ConfigError("scaled initial prior needs c0 >= 0 and exponent >= 0")

    def sample(self, n: int, dimension: int, h: float | None = None, rng=None) -> np.ndarray:
        if self.mode == "zero":
            return np.zeros((n, dimension))
        if self.mode == "fixed":
            s = np.asarray(self.sigma0, dtype=float)
            if s.size == 1:
                s = np.full(dimension, s.item())
            if s.shape != (dimension,):
                raise ConfigError(f"sigma0 has {s.size} components, state has {dimension}")
            return np.tile(s, (n, 1))
        if h is None:
            raise ConfigError("scaled initial prior needs the step size h")
        level = 0.0 if math.isinf(self.exponent) else self.c0 * h**self.exponent
        return np.full((n, dimension), level)


def transition_sigma(sigma, m, abs_local_error):
    """One fine step: ``m * sigma + |L_est|`` componentwise.

    ``m`` may be a scalar or an array broadcasting against the leading axes
    of ``sigma``.
    """
    sigma = np.asarray(sigma, dtype=float)
    abs_local_error = np.asarray(abs_local_error, dtype=float)
    if sigma.shape[-1] != abs_local_error.shape[-1]:
        raise ConfigError(
            f"dimension mismatch: sigma has {sigma.shape[-1]} components, local error {abs_local_error.shape[-1]}"
        )
    m = np.asarray(m, dtype=float)
    if np.any(m <= 0):
        raise ConfigError("multiplier must be positive")
    if m.ndim:
        m = m[..., None]
    return m * sigma + abs_local_error


def _propagate(sigma, abs_errors, m):
    # sigma (B, d); abs_errors (B, k, d) or (k, d); m (B, k)
    for j in range(m.shape[1]):
        sigma = m[:, j, None] * sigma + abs_errors[..., j, :]
    return sigma


def propagate_interval(sigma, abs_errors, prior: GammaMultiplierPrior, rng: np.random.Generator):
    """Chain ``k`` transitions with independent multiplier draws.

    Parameters
    ----------
    sigma : ndarray (d,) or (B, d)
    abs_errors : ndarray (k, d) shared by every row, or (B, k, d)
    prior : GammaMultiplierPrior
    rng : numpy Generator; one ``(B, k)`` block of multipliers is drawn.
    """
    sigma = np.asarray(sigma, dtype=float)
    abs_errors = np.asarray(abs_errors, dtype=float)
    single = sigma.ndim == 1
    sig = np.atleast_2d(sigma)
    if abs_errors.ndim < 2 or abs_errors.shape[-1] != sig.shape[-1]:
        raise ConfigError("abs_errors must have shape (k, d) or (B, k, d) matching sigma")
    if abs_errors.ndim == 3 and abs_errors.shape[0] != sig.shape[0]:
        raise ConfigError("per-row abs_errors must match the number of sigma rows")
    k = abs_errors.shape[-2]
    m = sample_multiplier(prior, rng, size=(sig.shape[0], k))
    out = _propagate(sig, abs_errors, m)
    return out[0] if single else out


@dataclass
class RateCheckReport:
    h: np.ndarray
    mean_sq_norm: np.ndarray
    std_error: np.ndarray
    slope: float | None
    expected_slope: float
    degenerate: bool = False
    note: str = field(
        default="local errors come from the Euler-minus-Runge estimate, not the exact local error"
    )

    def rows(self):
        for h, e, s in zip(self.h, self.mean_sq_norm, self.std_error):
            yield float(h), float(e), float(s)


def rate_check(
    sys: OdeSystem,
    theta,
    x0,
    h_list: Sequence[float],
    init: InitialSigmaPrior | None = None,
    mc_samples: int = 2000,
    seed: int = 0,
    scale_coeff: float = 1.0,
    t_end: float = 1.0,
    order: float = 1.0,
) -> RateCheckReport:
    """Monte Carlo estimate of ``E||sigma(t_end)||^2`` across step sizes.

    For each ``h`` the multiplier prior is ``GammaMultiplierPrior.for_step(h,
    scale_coeff)``, which keeps ``E||I - M||_F^2`` proportional to ``h^2``.
    The fitted log-log slope should approach ``2*min(order, exponent)``.
    """
    h_list = [float(h) for h in h_list]
    if len(h_list) < 3:
        raise ConfigError("rate check needs at least 3 step sizes")
    init = init or InitialSigmaPrior()
    theta = sys.check_params(theta)
    x0 = np.asarray(x0, dtype=float)
    est, err = [], []
    for idx, h in enumerate(h_list):
        n = round(t_end / h)
        if n < 1 or abs(n * h - t_end) > 1e-9 * t_end:
            raise ConfigError(f"t_end={t_end} is not a whole number of steps h={h}")
        _, abs_err, ok = integrate_batch(x0[None], theta[None], h, n, sys)
        if not ok[0]:
            raise ConfigError(f"reference Euler trajectory diverged at h={h}")
        rng = _streams.stream(seed, _streams.RATE, idx)
        sigma = init.sample(mc_samples, sys.dimension, h=h, rng=rng)
        prior = GammaMultiplierPrior.for_step(h, scale_coeff)
        sigma = propagate_interval(sigma, abs_err[0], prior, rng)
        sq = np.sum(sigma**2, axis=1)
        est.append(sq.mean())
        err.append(sq.std(ddof=1) / math.sqrt(mc_samples))
    est = np.array(est)
    err = np.array(err)
    expected = 2 * min(order, init.exponent if init.mode == "scaled" else math.inf)
    if init.mode == "fixed" and np.any(np.asarray(init.sigma0) > 0):
        expected = 0.0
    if np.all(est == 0):
        return RateCheckReport(np.array(h_list), est, err, None, expected, degenerate=True)
    if np.any(est <= 0):
        raise ConfigError("mixed zero and positive estimates; cannot fit a log-log slope")
    slope = float(np.polyfit(np.log(h_list), np.log(est), 1)[0])
    return RateCheckReport(np.array(h_list), est, err, slope, expected)
