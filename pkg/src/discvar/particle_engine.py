"""Bootstrap particle filter over discretization-error scales.

With the ODE parameter fixed, the latent state at each observation time
is the vector ``sigma`` of error standard deviations. Each observation is
processed by propagating every particle through the Markov prior
(prediction), weighting by the inflated Gaussian density (correction),
and resampling. Resampling indices are stored so that whole particle
paths can be re-threaded afterwards (smoothing by simultaneous
resampling), optionally restricted to a fixed lag.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from . import _streams
from ._streams import Streams
from .error_prior import GammaMultiplierPrior, InitialSigmaPrior, propagate_interval
from .errors import ConfigError, FilterCollapseError, IntegrationError
from .observation import ObservationOperator, ObservationSet, log_likelihood
from .ode_core import OdeSystem, SolverGrid, integrate_batch

log = logging.getLogger(__name__)

__all__ = [
    "FilterConfig",
    "Ensemble",
    "FilterResult",
    "init_ensemble",
    "predict",
    "reweight",
    "correct",
    "smooth_update",
    "resample_indices",
    "run_filter",
    "credible_band",
    "sigma_summary",
]

SCHEMES = ("multinomial", "systematic")


@dataclass(frozen=True)
class FilterConfig:
    """Particle count, smoothing lag (``None`` = full), resampling scheme, seed, workers."""

    n_particles: int = 1000
    lag: int | None = None
    resampling: str = "multinomial"
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if int(self.n_particles) < 1:
            raise ConfigError("need at least one particle")
        if self.lag is not None and self.lag < 0:
            raise ConfigError("lag must be >= 0")
        if self.resampling not in SCHEMES:
            raise ConfigError(f"resampling must be one of {SCHEMES}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @property
    def streams(self) -> Streams:
        return Streams(self.seed, self.threads)


@dataclass
class Ensemble:
    """Current particle states plus the stored filtering history.

    ``states`` maps a name (``"sigma"``, and for joint runs ``"theta"``
    and ``"x"``) to an array whose first axis indexes particles.
    ``history[s]`` is the snapshot of ``history_keys`` right after the
    resampling for observation ``s``; ``ancestry[s]`` holds that
    resampling's indices. Smoothed paths are rebuilt from the two on
    demand, see :meth:`smoothed`.
    """

    states: dict
    weights: np.ndarray
    log_marginal: float = 0.0
    step: int = -1
    lag: int | None = None
    history: list = field(default_factory=list)
    ancestry: list = field(default_factory=list)
    history_keys: tuple = ("sigma",)
    last_weights: np.ndarray | None = None

    @property
    def n_particles(self) -> int:
        return len(self.weights)

    @property
    def sigma(self) -> np.ndarray:
        return self.states["sigma"]

    def smoothed(self, key: str = "sigma") -> np.ndarray:
        """Stack of smoothed particle clouds, shape ``(n_times, K, ...)``.

        Entry ``j`` has been re-indexed by every later resampling ``s`` with
        ``j < s <= j + lag`` (all later ones when ``lag`` is None).
        """
        n = len(self.history)
        if n == 0:
            return np.empty((0,) + self.states[key].shape)
        K = self.n_particles
        out = np.empty((n,) + self.history[0][key].shape)
        if self.lag is None:
            idx = np.arange(K)
            out[n - 1] = self.history[n - 1][key]
            for j in range(n - 2, -1, -1):
                idx = self.ancestry[j + 1][idx]
                out[j] = self.history[j][key][idx]
            return out
        for j in range(n):
            idx = np.arange(K)
            for s in range(min(j + self.lag, n - 1), j, -1):
                idx = self.ancestry[s][idx]
            out[j] = self.history[j][key][idx]
        return out


@dataclass
class FilterResult:
    times: np.ndarray
    sigma: np.ndarray  # smoothed, (n_times, K, d_X)
    log_marginal: float
    x_num: np.ndarray  # numerical solution at the observation times
    ensemble: Ensemble
    log_increments: np.ndarray


def init_ensemble(init_prior: InitialSigmaPrior, n_particles: int, dimension: int,
                  rng=None, h: float | None = None, lag: int | None = None) -> Ensemble:
    """``n_particles`` draws from the initial sigma law with uniform weights."""
    if n_particles < 1:
        raise ConfigError("need at least one particle")
    sigma = init_prior.sample(n_particles, dimension, h=h, rng=rng)
    return Ensemble({"sigma": sigma}, np.full(n_particles, 1.0 / n_particles), lag=lag)


def predict(ens: Ensemble, abs_errors, prior: GammaMultiplierPrior, streams: Streams, step: int) -> Ensemble:
    """Advance every particle's sigma through one observation interval.

    ``abs_errors`` is ``(k, d)`` when all particles share one trajectory or
    ``(K, k, d)`` when each particle has its own. Particle block ``b``
    draws its multipliers from the substream ``(PREDICT, step, b)``.
    """
    abs_errors = np.asarray(abs_errors, dtype=float)
    sigma = ens.sigma
    K = ens.n_particles
    if abs_errors.shape[-2] == 0:
        return ens
    shared = abs_errors.ndim == 2

    def work(sl, rng):
        a = abs_errors if shared else abs_errors[sl]
        return propagate_interval(sigma[sl], a, prior, rng)

    new_sigma = np.concatenate(streams.map_blocks(work, K, _streams.PREDICT, step), axis=0)
    states = dict(ens.states, sigma=new_sigma)
    return replace(ens, states=states)


def resample_indices(weights, rng: np.random.Generator, scheme: str = "multinomial") -> np.ndarray:
    """Indices drawn from ``Categorical(weights)``."""
    w = np.asarray(weights, dtype=float)
    K = len(w)
    c = np.cumsum(w)
    c /= c[-1]
    if scheme == "multinomial":
        u = rng.random(K)
    elif scheme == "systematic":
        u = (rng.random() + np.arange(K)) / K
    else:
        raise ConfigError(f"unknown resampling scheme {scheme!r}")
    return np.minimum(np.searchsorted(c, u, side="right"), K - 1)


def smooth_update(ens: Ensemble, indices, lag: int | None = None) -> Ensemble:
    """Resample the current states by ``indices`` and record the step.

    Past entries within the lag window are re-threaded through
    ``indices`` as well; ``lag=0`` leaves them untouched. The stored
    history is not copied, only the index array is appended.
    """
    indices = np.asarray(indices, dtype=np.intp)
    K = ens.n_particles
    if indices.shape != (K,) or indices.min() < 0 or indices.max() >= K:
        raise ConfigError("resampling indices must be K integers in [0, K)")
    states = {k: v[indices] for k, v in ens.states.items()}
    snap = {k: states[k] for k in ens.history_keys}
    return replace(
        ens,
        states=states,
        weights=np.full(K, 1.0 / K),
        lag=lag,
        history=ens.history + [snap],
        ancestry=ens.ancestry + [indices],
    )


def reweight(ens: Ensemble, log_u, rng: np.random.Generator, scheme: str = "multinomial",
             time_index: int | None = None):
    """Correction from unnormalized log weights, then resampling.

    Returns ``(ensemble, log_increment, indices)`` where ``log_increment``
    is ``log(mean(u))``, the factor this observation contributes to the
    marginal-likelihood estimate.
    """
    log_u = np.where(np.isnan(log_u), -np.inf, np.asarray(log_u, dtype=float))
    if not np.any(np.isfinite(log_u)):
        raise FilterCollapseError(f"all particle weights are zero at observation {time_index}",
                                  time_index=time_index)
    total = logsumexp(log_u)
    w = np.exp(log_u - total)
    w /= w.sum()
    inc = float(total - math.log(len(log_u)))
    idx = resample_indices(w, rng, scheme)
    new = smooth_update(ens, idx, ens.lag)
    new.log_marginal = ens.log_marginal + inc
    new.step = ens.step + 1
    new.last_weights = w
    return new, inc, idx


def correct(ens: Ensemble, y, x_num, op: ObservationOperator, rng: np.random.Generator,
            scheme: str = "multinomial", time_index: int | None = None):
    """Weight particles by the inflated Gaussian density of ``y`` and resample.

    ``x_num`` is the numerical state, shared ``(d_X,)`` or per particle
    ``(K, d_X)``. Returns ``(ensemble, log_increment)``.
    """
    x_num = np.broadcast_to(np.asarray(x_num, dtype=float), ens.sigma.shape)
    log_u = log_likelihood(y, x_num, ens.sigma, op)
    new, inc, _ = reweight(ens, log_u, rng, scheme, time_index)
    return new, inc


def _check_obs(obs: ObservationSet, grid: SolverGrid):
    if len(obs.times) != len(grid.observation_times) or not np.allclose(
        obs.times, grid.observation_times, rtol=1e-9, atol=1e-12
    ):
        raise ConfigError("observation times do not match the solver grid")


def run_filter(sys: OdeSystem, theta, obs: ObservationSet, grid: SolverGrid, prior: GammaMultiplierPrior,
               init_prior: InitialSigmaPrior, op: ObservationOperator, config: FilterConfig, x0,
               ignore_error: bool = False) -> FilterResult:
    """Filter and smooth the error scales along the Euler trajectory of ``theta``.

    The single Euler trajectory and its local-error estimates are shared by
    every particle. With ``ignore_error`` the local errors and initial
    scales are forced to zero, which turns the run into the plain Gaussian
    likelihood of the Euler solution.
    """
    _check_obs(obs, grid)
    theta = sys.check_params(theta)
    streams = config.streams
    K = config.n_particles
    ens = _initial(init_prior, K, sys.dimension, grid.h, config, ignore_error)
    x = np.asarray(x0, dtype=float)[None]
    xs, incs = [], []
    for s in range(len(grid.observation_times)):
        x, abs_err, ok = integrate_batch(x, theta[None], grid.h, grid.steps_to(s), sys)
        if not ok[0]:
            raise IntegrationError(f"{sys.name}: Euler trajectory diverged before t={grid.observation_times[s]}",
                                   time=grid.observation_times[s], step=s)
        a = np.zeros_like(abs_err) if ignore_error else abs_err
        ens = predict(ens, np.broadcast_to(a, (K,) + a.shape[1:]), prior, streams, s)
        ens, inc = correct(ens, obs.values[s], x[0], op, streams.rng(_streams.RESAMPLE, s),
                           config.resampling, time_index=s)
        xs.append(x[0])
        incs.append(inc)
    return FilterResult(obs.times, ens.smoothed("sigma"), ens.log_marginal, np.array(xs), ens, np.array(incs))


def _initial(init_prior, K, dimension, h, config, ignore_error):
    if ignore_error:
        init_prior = InitialSigmaPrior()
    parts = config.streams.map_blocks(
        lambda sl, rng: init_prior.sample(sl.stop - sl.start, dimension, h=h, rng=rng), K, _streams.INIT
    )
    sigma = np.concatenate(parts, axis=0)
    return Ensemble({"sigma": sigma}, np.full(K, 1.0 / K), lag=config.lag)


def credible_band(sigma_cloud, component: int, level: float = 0.95, rng=None, n_draws: int | None = None):
    """Posterior-predictive band of the error ``r ~ N(0, sigma_c^2)``.

    For every time, ``n_draws`` (default: the particle count) particles are
    picked uniformly from the cloud, one ``r`` is drawn per pick, and the
    empirical ``(1 -/+ level)/2`` quantiles are returned.

    Returns
    -------
    lower, upper : ndarray (n_times,)
    """
    if not 0 < level < 1:
        raise ConfigError("level must lie in (0, 1)")
    cloud = np.asarray(sigma_cloud, dtype=float)
    if cloud.ndim == 2:
        cloud = cloud[None]
    if cloud.shape[1] == 0:
        raise ConfigError("empty particle cloud")
    rng = rng if rng is not None else np.random.default_rng()
    n_times, K = cloud.shape[:2]
    n = n_draws or K
    pick = rng.integers(0, K, size=(n_times, n))
    s = np.take_along_axis(cloud[:, :, component], pick, axis=1)
    r = s * rng.standard_normal((n_times, n))
    lo, hi = (1 - level) / 2, (1 + level) / 2
    return np.quantile(r, lo, axis=1), np.quantile(r, hi, axis=1)


def sigma_summary(sigma_cloud):
    """Per (time, component) 2.5/50/97.5 percentiles and mean of the sigma cloud."""
    cloud = np.asarray(sigma_cloud, dtype=float)
    q = np.quantile(cloud, [0.025, 0.5, 0.975], axis=1)
    return {"q025": q[0], "q500": q[1], "q975": q[2], "mean": cloud.mean(axis=1)}
