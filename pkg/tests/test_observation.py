import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from discvar.errors import ConfigError
from discvar.models import LINEAR_TEST, PENDULUM, zero_system
from discvar.observation import (ObservationOperator, ObservationSet, effective_covariance, exact_errors,
                                 generate_observations, log_likelihood)
from discvar.ode_core import SolverGrid


def test_scalar_likelihood_example():
    op = ObservationOperator([[1.0]], [[1.0]])
    assert log_likelihood([0.0], [0.0], [0.0], op) == pytest.approx(-0.5 * math.log(2 * math.pi), rel=1e-14)
    # sigma = 1 doubles the variance
    expected = -0.5 * math.log(2 * math.pi * 2) - 0.25
    assert log_likelihood([1.0], [0.0], [1.0], op) == pytest.approx(expected, rel=1e-14)


def test_matches_scipy_general_operator(rng):
    H = np.array([[1.0, 0.5], [0.0, 2.0], [1.0, -1.0]])
    A = rng.normal(size=(3, 3))
    G = A @ A.T + 0.5 * np.eye(3)
    op = ObservationOperator(H, G)
    x = rng.normal(size=(50, 2))
    sigma = np.abs(rng.normal(size=(50, 2)))
    y = rng.normal(size=3)
    got = log_likelihood(y, x, sigma, op)
    for i in range(50):
        cov = G + H @ np.diag(sigma[i] ** 2) @ H.T
        assert got[i] == pytest.approx(multivariate_normal(H @ x[i], cov).logpdf(y), rel=1e-10)
    np.testing.assert_allclose(effective_covariance(sigma[3], op), G + H @ np.diag(sigma[3] ** 2) @ H.T)


def test_shared_state_broadcasts():
    op = ObservationOperator.diagonal([3.0, 3.0], [1.0, 1.0])
    sig = np.array([[0.0, 0.0], [0.1, 0.2]])
    batched = log_likelihood([1.0, 2.0], [0.2, 0.3], sig, op)
    assert batched.shape == (2,)
    assert batched[1] == log_likelihood([1.0, 2.0], [0.2, 0.3], sig[1], op)


def test_overflowed_sigma_gives_minus_inf():
    op = ObservationOperator.diagonal([1.0, 1.0], [1.0, 1.0])
    out = log_likelihood([0.0, 0.0], np.zeros((3, 2)), np.array([[0.0, 0.0], [np.inf, 0.0], [1e200, 0.0]]), op)
    assert np.isfinite(out[0]) and out[1] == -np.inf and out[2] == -np.inf


def test_operator_validation():
    with pytest.raises(ConfigError):
        ObservationOperator([[1.0, 2.0], [2.0, 4.0]], np.eye(2))
    with pytest.raises(ConfigError):
        ObservationOperator(np.eye(2), [[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ConfigError):
        ObservationOperator(np.eye(2), [[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(ConfigError):
        ObservationOperator(np.eye(2), np.eye(3))
    op = ObservationOperator.diagonal([1.0], [1.0])
    with pytest.raises(ConfigError):
        log_likelihood([1.0, 2.0], [0.0], [0.0], op)


def test_generated_noise_has_covariance_gamma():
    G = np.array([[4.0, 1.2], [1.2, 1.0]])
    op = ObservationOperator(np.eye(2), G)
    times = np.arange(20000) * 5e-4  # one reference step per gap keeps this fast
    obs = generate_observations([1.0, -2.0], [0.0], op, times, zero_system(2), np.random.default_rng(5))
    resid = obs.values - np.array([1.0, -2.0])
    n = len(times)
    assert np.all(np.abs(resid.mean(axis=0)) < 4 * np.sqrt(np.diag(G) / n))
    emp = np.cov(resid.T)
    # entrywise standard error of the sample covariance of a Gaussian
    se = np.sqrt((G**2 + np.outer(np.diag(G), np.diag(G))) / n)
    assert np.all(np.abs(emp - G) < 4 * se)


def test_generate_observations_reproducible():
    op = ObservationOperator.diagonal([3.0, 3.0], [1.0, 1.0])
    a = generate_observations([1.0, 0.0], [3.0], op, [1.0, 2.0], PENDULUM, np.random.default_rng(1), t_start=0.0)
    b = generate_observations([1.0, 0.0], [3.0], op, [1.0, 2.0], PENDULUM, np.random.default_rng(1), t_start=0.0)
    assert np.array_equal(a.values, b.values)


def test_exact_errors_closed_form():
    grid = SolverGrid(h=0.1, k=1, observation_times=(0.0, 0.1))
    r = exact_errors([1.0], [1.0], grid, LINEAR_TEST)
    assert r[0, 0] == 0.0
    assert r[1, 0] == pytest.approx(math.exp(0.1) - 1.1, abs=1e-10)
    assert r[1, 0] == pytest.approx(0.0051709181, abs=1e-10)


def test_observation_csv_roundtrip(tmp_path):
    obs = ObservationSet([1.0, 2.0, 3.0], [[0.123456789123, -1.0], [2.5, 3.0], [1e-12, 7.0]])
    path = obs.to_csv(tmp_path / "obs.csv")
    text = path.read_bytes()
    assert text.startswith(b"t,y1,y2\n") and b"\r" not in text
    back = ObservationSet.from_csv(path)
    np.testing.assert_allclose(back.values, obs.values, rtol=1e-8)
    assert back.times.tolist() == [1.0, 2.0, 3.0]
    (tmp_path / "bad.csv").write_text("time,y1\n1,2\n")
    with pytest.raises(ConfigError):
        ObservationSet.from_csv(tmp_path / "bad.csv")
    with pytest.raises(ConfigError):
        ObservationSet([1.0, 2.0], [[1.0]])
    with pytest.raises(ConfigError):
        ObservationSet([1.0], [[np.nan]])
