"""Joint posterior over ODE parameters and error scales.

The parameter vector rides along in every particle with a constant
transition (a self-organizing state-space model). Each particle carries
its own Euler state, advanced interval by interval, and its own local-error
estimates feed its sigma transition. Resampling moves
``(sigma, theta, x)`` together, so parameters are only ever selected,
never perturbed (unless the optional jitter is switched on).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import _streams
from .error_prior import GammaMultiplierPrior, InitialSigmaPrior
from .errors import ConfigError
from .observation import ObservationOperator, ObservationSet, log_likelihood
from .ode_core import OdeSystem, SolverGrid, integrate_batch
from .particle_engine import Ensemble, FilterConfig, _check_obs, _initial, predict, reweight

__all__ = [
    "Normal",
    "TruncatedNormal",
    "PointMass",
    "ParamPrior",
    "JointResult",
    "sample_param_prior",
    "run_joint_filter",
    "posterior_param_summary",
]

MIN_ACCEPTANCE = 1e-6


@dataclass(frozen=True)
class Normal:
    mu: float
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise ConfigError("normal prior needs sd > 0")

    def sample(self, rng, n):
        return self.mu + self.sd * rng.standard_normal(n)


def _phi(z):
    return 0.5 * (1 + math.erf(z / math.sqrt(2)))


@dataclass(frozen=True)
class TruncatedNormal:
    """``N(mu, sd^2)`` restricted to ``[lo, hi]``; sampled by rejection."""

    mu: float
    sd: float
    lo: float
    hi: float

    def __post_init__(self):
        if not self.sd > 0:
            raise ConfigError("truncated normal prior needs sd > 0")
        if not self.lo < self.hi:
            raise ConfigError("truncated normal prior needs lo < hi")

    @property
    def acceptance(self) -> float:
        return _phi((self.hi - self.mu) / self.sd) - _phi((self.lo - self.mu) / self.sd)

    def sample(self, rng, n):
        if self.acceptance < MIN_ACCEPTANCE:
            raise ConfigError(
                f"truncation [{self.lo}, {self.hi}] keeps only {self.acceptance:.2e} of N({self.mu}, {self.sd}^2)"
            )
        out = np.empty(n)
        filled = 0
        while filled < n:
            batch = max(16, int(1.2 * (n - filled) / self.acceptance))
            draw = self.mu + self.sd * rng.standard_normal(batch)
            draw = draw[(draw >= self.lo) & (draw <= self.hi)]
            take = min(len(draw), n - filled)
            out[filled:filled + take] = draw[:take]
            filled += take
        return out


@dataclass(frozen=True)
class PointMass:
    value: float

    def sample(self, rng, n):
        return np.full(n, float(self.value))


@dataclass(frozen=True)
class ParamPrior:
    """Independent marginals, one per ODE parameter."""

    marginals: tuple

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(self.marginals))

    @property
    def dimension(self) -> int:
        return len(self.marginals)

    @classmethod
    def point(cls, theta: Sequence[float]) -> "ParamPrior":
        return cls(tuple(PointMass(float(v)) for v in theta))


def sample_param_prior(prior: ParamPrior, rng: np.random.Generator, n: int | None = None):
    """Draw parameter vectors; shape ``(d,)`` if ``n`` is None else ``(n, d)``."""
    size = 1 if n is None else n
    cols = [m.sample(rng, size) for m in prior.marginals]
    out = np.stack(cols, axis=-1) if cols else np.empty((size, 0))
    return out[0] if n is None else out


@dataclass
class JointResult:
    times: np.ndarray
    theta: np.ndarray  # (K, d) posterior cloud after the last observation
    sigma: np.ndarray  # smoothed, (n_times, K, d_X)
    log_marginal: float
    theta_initial: np.ndarray  # prior draws, (K, d)
    ensemble: Ensemble
    log_increments: np.ndarray

    @property
    def n_unique_theta(self) -> int:
        return len(np.unique(self.theta, axis=0))


def run_joint_filter(sys: OdeSystem, obs: ObservationSet, grid: SolverGrid, prior: GammaMultiplierPrior,
                     init_prior: InitialSigmaPrior, param_prior: ParamPrior, op: ObservationOperator,
                     config: FilterConfig, x0, ignore_error: bool = False,
                     theta_jitter: Sequence[float] | None = None) -> JointResult:
    """Particle filter on the augmented state ``(sigma, theta, x)``.

    Particles whose parameters fall outside the model domain, or whose
    Euler trajectory diverges, get zero weight at their next correction.
    ``ignore_error`` forces sigma to zero throughout (the baseline that
    trusts the Euler solution). ``theta_jitter`` adds Gaussian roughening
    with the given per-component scale at every prediction; it is off by
    default and departs from the plain constant transition.
    """
    _check_obs(obs, grid)
    if param_prior.dimension != sys.param_dimension:
        raise ConfigError(f"{sys.name} has {sys.param_dimension} parameters, prior has {param_prior.dimension}")
    streams = config.streams
    K = config.n_particles
    d = sys.param_dimension
    theta = np.concatenate(
        streams.map_blocks(lambda sl, rng: sample_param_prior(param_prior, rng, sl.stop - sl.start),
                           K, _streams.PARAMS),
        axis=0,
    ).reshape(K, d)
    theta0 = theta.copy()
    ens = _initial(init_prior, K, sys.dimension, grid.h, config, ignore_error)
    x = np.tile(np.asarray(x0, dtype=float), (K, 1))
    ens = replace(ens, states=dict(ens.states, theta=theta, x=x))
    jitter = None if theta_jitter is None else np.asarray(theta_jitter, dtype=float)
    incs = []
    for s in range(len(grid.observation_times)):
        n = grid.steps_to(s)
        if jitter is not None and s > 0:
            ens = _jitter(ens, jitter, streams, s)
        theta = ens.states["theta"]
        valid = sys.valid_params(theta)

        def advance(sl, x=ens.states["x"], theta=theta, valid=valid):
            xb, ab, ok = integrate_batch(x[sl], np.where(valid[sl, None], theta[sl], np.nan), grid.h, n, sys)
            return xb, ab, ok & valid[sl]

        parts = streams.map_slices(advance, K)
        x = np.concatenate([p[0] for p in parts])
        abs_err = np.concatenate([p[1] for p in parts])
        ok = np.concatenate([p[2] for p in parts])
        a = np.zeros_like(abs_err) if ignore_error else np.where(ok[:, None, None], abs_err, 0.0)
        ens = predict(ens, a, prior, streams, s)
        ens = replace(ens, states=dict(ens.states, x=x))
        log_u = np.full(K, -np.inf)
        if np.any(ok):
            log_u[ok] = log_likelihood(obs.values[s], x[ok], ens.sigma[ok], op)
        ens, inc, _ = reweight(ens, log_u, streams.rng(_streams.RESAMPLE, s), config.resampling, time_index=s)
        incs.append(inc)
    return JointResult(obs.times, ens.states["theta"], ens.smoothed("sigma"), ens.log_marginal, theta0, ens,
                       np.array(incs))


def _jitter(ens, scale, streams, s):
    theta = ens.states["theta"]
    parts = streams.map_blocks(
        lambda sl, rng: theta[sl] + scale * rng.standard_normal(theta[sl].shape), len(theta), _streams.JITTER, s
    )
    return replace(ens, states=dict(ens.states, theta=np.concatenate(parts)))


def posterior_param_summary(cloud, names: Sequence[str] | None = None, bins: int = 30,
                            weights=None, quantiles=(0.025, 0.25, 0.5, 0.75, 0.975)):
    """Per-parameter mean, std, quantiles and histogram of a parameter cloud."""
    cloud = np.asarray(cloud, dtype=float)
    if cloud.ndim == 1:
        cloud = cloud[:, None]
    if cloud.shape[0] == 0:
        raise ConfigError("empty parameter cloud")
    K, d = cloud.shape
    w = np.full(K, 1.0 / K) if weights is None else np.asarray(weights, dtype=float) / np.sum(weights)
    names = list(names) if names else [f"theta{i + 1}" for i in range(d)]
    out = {}
    for c, name in enumerate(names):
        v = cloud[:, c]
        mean = float(np.sum(w * v))
        std = float(math.sqrt(max(np.sum(w * (v - mean) ** 2), 0.0)))
        order = np.argsort(v)
        cw = np.cumsum(w[order])
        qs = {f"q{round(q * 1000):03d}": float(v[order][min(np.searchsorted(cw, q), K - 1)]) for q in quantiles}
        lo, hi = v.min(), v.max()
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        counts, edges = np.histogram(v, bins=bins, range=(lo, hi), weights=w * K)
        out[name] = {
            "mean": mean,
            "std": std,
            "quantiles": qs,
            "histogram": {"counts": counts.tolist(), "edges": edges.tolist()},
        }
    return out
