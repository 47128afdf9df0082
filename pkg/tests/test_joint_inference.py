import math

import numpy as np
import pytest
from scipy.stats import norm, truncnorm

from discvar.error_prior import GammaMultiplierPrior, InitialSigmaPrior
from discvar.errors import ConfigError
from discvar.joint_inference import (Normal, ParamPrior, PointMass, TruncatedNormal, posterior_param_summary,
                                     run_joint_filter, sample_param_prior)
from discvar.models import FITZHUGH_NAGUMO, PENDULUM
from discvar.observation import ObservationOperator, generate_observations
from discvar.ode_core import SolverGrid
from discvar.particle_engine import FilterConfig, run_filter


@pytest.fixture(scope="module")
def pendulum():
    op = ObservationOperator.diagonal([3.0, 3.0], [2.0, 2.0])
    times = np.arange(11.0, 21.0)
    obs = generate_observations([1.0, 0.0], [4.0], op, times, PENDULUM, np.random.default_rng(0), t_start=11.0)
    return obs, SolverGrid.from_times(0.05, times), op


@pytest.mark.parametrize("mu,sd,lo,hi", [(1.0, 1.0, -0.1, 1.0), (0.0, 0.9, -1.5, 1.5), (1.0, 1.0, 0.1, 2.0)])
def test_truncated_normal_matches_scipy(mu, sd, lo, hi):
    d = TruncatedNormal(mu, sd, lo, hi)
    x = d.sample(np.random.default_rng(1), 200_000)
    assert x.min() >= lo and x.max() <= hi
    ref = truncnorm((lo - mu) / sd, (hi - mu) / sd, loc=mu, scale=sd)
    assert abs(x.mean() - ref.mean()) < 4 * ref.std() / math.sqrt(len(x))
    assert d.acceptance == pytest.approx(norm.cdf(hi, mu, sd) - norm.cdf(lo, mu, sd), rel=1e-12)


def test_marginal_validation():
    with pytest.raises(ConfigError):
        TruncatedNormal(0.0, 1.0, 40.0, 41.0).sample(np.random.default_rng(0), 5)
    with pytest.raises(ConfigError):
        TruncatedNormal(0.0, 1.0, 1.0, 1.0)
    with pytest.raises(ConfigError):
        Normal(0.0, 0.0)


def test_sample_param_prior_shapes():
    prior = ParamPrior((Normal(0, 1), PointMass(2.0), TruncatedNormal(0, 1, 0, 1)))
    rng = np.random.default_rng(0)
    assert sample_param_prior(prior, rng).shape == (3,)
    draws = sample_param_prior(prior, rng, 50)
    assert draws.shape == (50, 3) and np.all(draws[:, 1] == 2.0)


def test_point_mass_equals_fixed_run(pendulum):
    obs, grid, op = pendulum
    lam = GammaMultiplierPrior(400.0, 0.0025)
    cfg = FilterConfig(1500, seed=4, lag=3)
    fixed = run_filter(PENDULUM, [4.0], obs, grid, lam, InitialSigmaPrior(), op, cfg, [1.0, 0.0])
    joint = run_joint_filter(PENDULUM, obs, grid, lam, InitialSigmaPrior(), ParamPrior.point([4.0]), op, cfg,
                             [1.0, 0.0])
    assert np.array_equal(fixed.sigma, joint.sigma)
    assert fixed.log_marginal == joint.log_marginal
    assert np.array_equal(fixed.log_increments, joint.log_increments)
    assert joint.n_unique_theta == 1


def test_invalid_parameters_get_zero_weight(pendulum):
    obs, grid, op = pendulum
    prior = ParamPrior((Normal(0.5, 2.0),))  # most of the mass is at L <= 0
    res = run_joint_filter(PENDULUM, obs, grid, GammaMultiplierPrior(400.0, 0.0025), InitialSigmaPrior(),
                           prior, op, FilterConfig(2000, seed=1), [1.0, 0.0])
    assert np.any(res.theta_initial <= 0)
    assert np.all(res.theta > 0)
    assert np.isfinite(res.log_marginal)


def test_diverging_particles_dropped():
    op = ObservationOperator.diagonal([1.0, 1.0], [1.0, 1.0])
    times = np.arange(10.0, 16.0)
    obs = generate_observations([-1.0, 1.0], [0.5, 0.2, 1.0], op, times, FITZHUGH_NAGUMO, np.random.default_rng(2))
    grid = SolverGrid.from_times(0.2, times)
    # negative c from the wide prior makes many Euler paths blow up
    prior = ParamPrior((Normal(0.5, 0.1), Normal(0.2, 0.1), Normal(0.0, 2.0)))
    res = run_joint_filter(FITZHUGH_NAGUMO, obs, grid, GammaMultiplierPrior(2.0, 0.5), InitialSigmaPrior(),
                           prior, op, FilterConfig(1000), [-1.0, 1.0])
    assert np.all(np.isfinite(res.ensemble.states["x"]))
    assert np.all(res.theta[:, 2] != 0)


def test_joint_is_thread_independent(pendulum):
    obs, grid, op = pendulum
    args = (PENDULUM, obs, grid, GammaMultiplierPrior(400.0, 0.0025), InitialSigmaPrior(),
            ParamPrior((Normal(3.0, 2.0),)), op)
    a = run_joint_filter(*args, FilterConfig(2100, seed=8, threads=1), [1.0, 0.0])
    b = run_joint_filter(*args, FilterConfig(2100, seed=8, threads=3), [1.0, 0.0])
    assert np.array_equal(a.theta, b.theta) and np.array_equal(a.sigma, b.sigma)


def test_baseline_is_narrower(pendulum):
    obs, grid, op = pendulum
    args = (PENDULUM, obs, grid, GammaMultiplierPrior(400.0, 0.0025), InitialSigmaPrior(),
            ParamPrior((Normal(3.0, 2.0),)), op, FilterConfig(3000, seed=2), [1.0, 0.0])
    full = run_joint_filter(*args)
    base = run_joint_filter(*args, ignore_error=True)
    assert np.all(base.sigma == 0)
    assert full.theta.std() > base.theta.std()


def test_jitter_is_seeded_and_moves_parameters(pendulum):
    obs, grid, op = pendulum
    args = (PENDULUM, obs, grid, GammaMultiplierPrior(400.0, 0.0025), InitialSigmaPrior(),
            ParamPrior((Normal(3.0, 2.0),)), op, FilterConfig(500, seed=2), [1.0, 0.0])
    a = run_joint_filter(*args, theta_jitter=[0.01])
    b = run_joint_filter(*args, theta_jitter=[0.01])
    plain = run_joint_filter(*args)
    assert np.array_equal(a.theta, b.theta)
    assert a.n_unique_theta > plain.n_unique_theta


def test_prior_dimension_checked(pendulum):
    obs, grid, op = pendulum
    with pytest.raises(ConfigError):
        run_joint_filter(PENDULUM, obs, grid, GammaMultiplierPrior(1, 1), InitialSigmaPrior(),
                         ParamPrior((Normal(0, 1), Normal(0, 1))), op, FilterConfig(10), [1.0, 0.0])


def test_posterior_summary_example():
    s = posterior_param_summary(np.array([[1.0], [2.0], [3.0], [4.0]]), ["L"], bins=4)
    assert s["L"]["mean"] == 2.5
    assert s["L"]["std"] == pytest.approx(math.sqrt(1.25))
    assert s["L"]["quantiles"]["q500"] == 2.0
    assert sum(s["L"]["histogram"]["counts"]) == pytest.approx(4)
    w = posterior_param_summary(np.array([0.0, 10.0]), weights=[3.0, 1.0])
    assert w["theta1"]["mean"] == pytest.approx(2.5)
    with pytest.raises(ConfigError):
        posterior_param_summary(np.empty((0, 1)))
