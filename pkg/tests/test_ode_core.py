import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from discvar.errors import ConfigError, IntegrationError
from discvar.models import LINEAR_TEST, PENDULUM, zero_system
from discvar.ode_core import (OdeSystem, SolverGrid, estimate_local_error, euler_step, euler_trajectory,
                              integrate_batch, integrate_interval, integrate_steps, reference_solution,
                              runge_step)

ZERO2 = zero_system(2)
CONST = OdeSystem("const", 2, 1, lambda x, th: np.broadcast_to(np.array([0.3, -1.7]), x.shape).copy())
RECIP = OdeSystem("recip", 1, 1, lambda x, th: 1.0 / x)


def test_euler_examples():
    assert np.array_equal(euler_step([1.0, 2.0], [0.0], 0.05, ZERO2), [1.0, 2.0])
    x = euler_step([1.0, 0.0], [3.0], 0.05, PENDULUM)
    assert x[0] == 1.0
    assert x[1] == pytest.approx(-(9.81 / 3) * math.sin(1.0) * 0.05, rel=1e-14)
    # 3.27 * 0.8414709848 * 0.05
    assert x[1] == pytest.approx(-0.13758051, abs=1e-8)
    assert euler_step([1.0], [1.0], 0.1, LINEAR_TEST)[0] == pytest.approx(1.1, rel=1e-15)


def test_runge_examples():
    assert runge_step([3.0, 0.0], [0.0], 0.1, ZERO2).tolist() == [3.0, 0.0]
    assert runge_step([1.0], [1.0], 0.1, LINEAR_TEST)[0] == pytest.approx(1.105, rel=1e-15)
    x = np.array([0.5, 0.25])
    assert np.array_equal(runge_step(x, [0.0], 0.1, CONST), euler_step(x, [0.0], 0.1, CONST))


def test_local_error_examples():
    est = estimate_local_error([1.0, 2.0], [0.0], 0.05, ZERO2)
    assert est.value.tolist() == [0.0, 0.0] and est.componentwise_abs.tolist() == [0.0, 0.0]
    est = estimate_local_error([1.0], [1.0], 0.1, LINEAR_TEST)
    assert est.value[0] == pytest.approx(-0.005, abs=1e-15)
    assert est.componentwise_abs[0] == pytest.approx(0.005, abs=1e-15)
    assert estimate_local_error([0.1, 0.2], [0.0], 0.3, CONST).componentwise_abs.tolist() == [0.0, 0.0]


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.5, 10), st.floats(1e-3, 0.5))
def test_local_error_is_euler_minus_runge(a, b, length, h):
    x = np.array([a, b])
    est = estimate_local_error(x, [length], h, PENDULUM)
    diff = euler_step(x, [length], h, PENDULUM) - runge_step(x, [length], h, PENDULUM)
    assert np.array_equal(est.value, diff)
    assert np.array_equal(est.componentwise_abs, np.abs(diff))
    assert np.all(est.componentwise_abs >= 0)


def test_integrate_interval_examples():
    grid = SolverGrid(h=0.1, k=2, observation_times=(0.0, 0.2))
    x, ests = integrate_interval([1.0], [1.0], grid, 0, LINEAR_TEST)
    assert x[0] == pytest.approx(1.21, rel=1e-14)
    assert [e.componentwise_abs[0] for e in ests] == pytest.approx([0.005, 0.0055], rel=1e-12)
    grid1 = SolverGrid(h=0.1, k=1, observation_times=(0.0, 0.1))
    x1, e1 = integrate_interval([1.0], [1.0], grid1, 0, LINEAR_TEST)
    assert np.array_equal(x1, euler_step([1.0], [1.0], 0.1, LINEAR_TEST))
    assert len(e1) == 1
    xz, ez = integrate_interval([1.0, -1.0], [0.0], SolverGrid(0.1, 5, (0.0, 0.5)), 0, ZERO2)
    assert xz.tolist() == [1.0, -1.0] and all(np.all(e.value == 0) for e in ez)
    with pytest.raises(ConfigError):
        integrate_interval([1.0], [1.0], grid, 1, LINEAR_TEST)


def test_stepping_is_associative():
    x6, e6 = integrate_steps([1.0, 0.3], [2.0], 0.05, 6, PENDULUM)
    xa, ea = integrate_steps([1.0, 0.3], [2.0], 0.05, 3, PENDULUM)
    xb, eb = integrate_steps(xa, [2.0], 0.05, 3, PENDULUM)
    assert np.array_equal(x6, xb)
    assert all(np.array_equal(p.value, q.value) for p, q in zip(e6, ea + eb))


def test_batch_matches_single_trajectory():
    x, ests = integrate_steps([1.0, 0.0], [3.0], 0.05, 20, PENDULUM)
    xb, ab, ok = integrate_batch(np.array([[1.0, 0.0]]), np.array([[3.0]]), 0.05, 20, PENDULUM)
    assert ok[0]
    np.testing.assert_allclose(xb[0], x, rtol=1e-15, atol=1e-15)
    np.testing.assert_allclose(ab[0], [e.componentwise_abs for e in ests], rtol=1e-12, atol=1e-18)


def test_batch_flags_divergence():
    x0 = np.array([[1.0], [1.0]])
    xb, ab, ok = integrate_batch(x0, np.array([[1.0], [800.0]]), 1.0, 200, LINEAR_TEST)
    assert ok.tolist() == [True, False]
    assert np.all(np.isnan(xb[1])) and np.all(np.isfinite(xb[0]))


def test_nonfinite_field_reports_location():
    with pytest.raises(IntegrationError) as info:
        euler_step([0.0], [0.0], 0.1, RECIP, t=2.5)
    assert info.value.time == 2.5 and info.value.component == 0


def _order_slope(method, hs):
    errs = []
    for h in hs:
        n = round(1 / h)
        x, worst = 1.0, 0.0
        for j in range(n):
            x = method(np.array([x]), [1.0], h, LINEAR_TEST)[0]
            worst = max(worst, abs(x - math.exp((j + 1) * h)))
        errs.append(worst)
    return np.polyfit(np.log(hs), np.log(errs), 1)[0]


def test_convergence_orders():
    hs = [0.1, 0.05, 0.025, 0.0125]
    assert abs(_order_slope(euler_step, hs) - 1) <= 0.15
    assert abs(_order_slope(runge_step, hs) - 2) <= 0.15


def test_reference_examples():
    ref = reference_solution([1.0, 2.0], [0.0], [0.0, 1.0, 7.5], ZERO2)
    assert np.array_equal(ref, [[1.0, 2.0]] * 3)
    assert reference_solution([1.0], [1.0], [1.0], LINEAR_TEST)[0, 0] == pytest.approx(math.e, abs=1e-8)
    t = np.linspace(0.5, 10, 20)
    ref = reference_solution([0.01, 0.0], [9.81], t, PENDULUM)
    # small-angle limit: harmonic oscillator with unit frequency
    assert np.max(np.abs(ref[:, 0] - 0.01 * np.cos(t))) / 0.01 < 1e-3


def test_reference_validates_times():
    with pytest.raises(ConfigError):
        reference_solution([1.0], [1.0], [1.0, 0.5], LINEAR_TEST)
    with pytest.raises(ConfigError):
        reference_solution([1.0], [1.0], [0.5], LINEAR_TEST, t_start=1.0)


def test_reference_is_cached_but_returns_copies():
    a = reference_solution([1.0], [1.0], [1.0], LINEAR_TEST)
    a[0, 0] = -5
    assert reference_solution([1.0], [1.0], [1.0], LINEAR_TEST)[0, 0] == pytest.approx(math.e, abs=1e-8)


def test_grid_validation():
    g = SolverGrid.from_times(0.05, np.arange(1, 41.0))
    assert g.k == 20 and g.warmup_steps == 0 and g.n_intervals == 39
    g = SolverGrid.from_times(0.2, np.arange(10, 101.0), t_start=0.0)
    assert g.k == 5 and g.warmup_steps == 50 and g.steps_to(0) == 50 and g.steps_to(3) == 5
    with pytest.raises(ConfigError):
        SolverGrid.from_times(0.3, [0.0, 1.0, 2.0])
    with pytest.raises(ConfigError):
        SolverGrid(0.1, 2, (0.0, 0.2, 0.5))
    with pytest.raises(ConfigError):
        SolverGrid(0.1, 2, (0.0, 0.2), t_start=0.05 + 0.01)
    with pytest.raises(ConfigError):
        SolverGrid(0.1, 2, (0.4, 0.2))
    with pytest.raises(ConfigError):
        SolverGrid(-0.1, 2, (0.0, 0.2))


def test_euler_trajectory_matches_steps():
    grid = SolverGrid.from_times(0.1, [0.3, 0.5], t_start=0.0)
    traj = euler_trajectory([1.0], [1.0], grid, LINEAR_TEST)
    assert traj[:, 0] == pytest.approx([1.1**3, 1.1**5], rel=1e-14)
