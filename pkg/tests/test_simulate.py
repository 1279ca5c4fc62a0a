import math

import numpy as np
import pytest

from src.config import Config
from src.exceptions import DataError, SimulationError
from src.models import RegressionCaseSpec, builtin_regression
from src.simulate import (
    Rng,
    Trajectory,
    ensemble,
    ensemble_endpoints,
    euler_path,
    regression_sample,
    regression_sample_theta,
    standard_normal,
)


def _constant(value, s=1):
    return lambda t: np.full((np.size(t), s), value, dtype=np.float64)


def test_normals_have_unit_moments():
    z = Rng(1).normals(200_000)
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1.0) < 0.01


def test_normals_handed_out_in_draw_order():
    whole = Rng(5).normals(7)
    rng = Rng(5)
    parts = np.concatenate([rng.normals(3), rng.normals(4)])
    assert whole.tobytes() == parts.tobytes()


def test_streams_are_independent_and_reproducible():
    assert Rng(9, 0).normals(4).tobytes() == Rng(9, 0).normals(4).tobytes()
    assert not np.array_equal(Rng(9, 0).normals(4), Rng(9, 1).normals(4))
    assert not np.array_equal(Rng(9).normals(4), Rng(10).normals(4))
    with pytest.raises(ValueError):
        Rng(-1)


def test_first_euler_step_by_hand(ex1):
    path = euler_path(ex1, ex1.theta_true, 1.0, 0.2, 200, Rng(3))
    h = 0.001
    z0 = standard_normal(Rng(3))
    expected = 1.0 + 2.0 * (0.5 - 1.0) * h + 0.4 * math.sqrt(h) * z0
    assert path.values[1, 0] == pytest.approx(expected, rel=1e-14)
    assert path.n == 200
    assert path.h == pytest.approx(h)


def test_euler_is_deterministic(short_ex1_trajectory, ex1):
    again = euler_path(ex1, ex1.theta_true, 1.0, 0.2, 200, Rng(3))
    assert again.values.tobytes() == short_ex1_trajectory.values.tobytes()


def test_longer_horizon_extends_the_same_path(ex1):
    short = euler_path(ex1, ex1.theta_true, 1.0, 0.1, 101, Rng(4))
    long = euler_path(ex1, ex1.theta_true, 1.0, 0.2, 202, Rng(4))
    np.testing.assert_allclose(long.values[:102], short.values, rtol=1e-12, atol=1e-14)


def test_zero_coefficients_keep_the_initial_state(make_model):
    model = make_model(lambda t, x, th: 0.0, lambda t, x, th: 0.0)
    path = euler_path(model, _constant(0.0), 2.5, 1.0, 10, Rng(0))
    np.testing.assert_array_equal(path.x, 2.5)


def test_provider_with_wrong_width_is_rejected(ex1):
    with pytest.raises(DataError):
        euler_path(ex1, _constant(0.4, s=2), 1.0, 0.2, 10, Rng(0))


def test_overflow_raises_simulation_error(make_model):
    model = make_model(lambda t, x, th: x * x, lambda t, x, th: 0.0, T=5.0)
    with pytest.raises(SimulationError) as info:
        euler_path(model, _constant(0.0), 10.0, 5.0, 50, Rng(0))
    assert 1 <= info.value.step <= 11
    assert info.value.trajectory is None


def test_ensemble_overflow_names_the_trajectory(make_model):
    model = make_model(lambda t, x, th: x * x, lambda t, x, th: 0.0, T=5.0)
    with pytest.raises(SimulationError) as info:
        ensemble_endpoints(model, _constant(0.0), 10.0, 5.0, 50, 3, seed=1)
    assert info.value.trajectory == 0


def test_ensemble_path_i_uses_stream_i(ex1):
    paths = ensemble(ex1, ex1.theta_true, 1.0, 0.1, 50, 4, seed=7)
    assert len(paths) == 4
    for i, path in enumerate(paths):
        single = euler_path(ex1, ex1.theta_true, 1.0, 0.1, 50, Rng(7, i))
        assert path.values.tobytes() == single.values.tobytes()


def _assert_covariance_within_3_se(residuals, expected):
    expected = np.asarray(expected)
    n = residuals.shape[0]
    observed = np.cov(residuals.T)
    for i in range(2):
        for j in range(2):
            se = math.sqrt((expected[i, i] * expected[j, j] + expected[i, j] ** 2) / n)
            assert abs(observed[i, j] - expected[i, j]) <= 3.0 * se, (i, j)


def test_ensemble_does_not_depend_on_block_size(ex1, monkeypatch):
    full = ensemble_endpoints(ex1, ex1.theta_true, 1.0, 0.1, 40, 10, seed=2)
    monkeypatch.setattr(Config, "ENSEMBLE_CHUNK_SIZE", 3)
    blocked = ensemble_endpoints(ex1, ex1.theta_true, 1.0, 0.1, 40, 10, seed=2)
    assert full.tobytes() == blocked.tobytes()
    paths = ensemble(ex1, ex1.theta_true, 1.0, 0.1, 40, 10, seed=2)
    np.testing.assert_array_equal(full[:, 0], [p.values[-1, 0] for p in paths])


@pytest.mark.slow
def test_ornstein_uhlenbeck_endpoint_moments(make_model):
    kappa, mu, sigma, x0, T = 2.0, 0.5, 0.5, 1.0, 1.0
    model = make_model(lambda t, x, th: kappa * (mu - x), lambda t, x, th: th[0], T=T, h=0.005)
    end = ensemble_endpoints(model, _constant(sigma), x0, T, 200, 10_000, seed=11)[:, 0]
    mean = mu + (x0 - mu) * math.exp(-kappa * T)
    var = sigma ** 2 * (1.0 - math.exp(-2.0 * kappa * T)) / (2.0 * kappa)
    assert end.mean() == pytest.approx(mean, abs=0.02)
    assert end.var() == pytest.approx(var, rel=0.05)


def test_trajectory_validation():
    with pytest.raises(DataError):
        Trajectory(np.array([0.0, 0.1]), np.array([1.0, 2.0, 3.0]), 0.1)
    with pytest.raises(DataError):
        Trajectory(np.array([0.0]), np.array([1.0]), 0.1)


def test_subsample_keeps_every_step(short_ex1_trajectory):
    coarse = short_ex1_trajectory.subsample(5)
    assert coarse.n == 40
    assert coarse.h == pytest.approx(0.005)
    np.testing.assert_array_equal(coarse.x, short_ex1_trajectory.x[::5])
    assert short_ex1_trajectory.subsample(1) is short_ex1_trajectory
    assert short_ex1_trajectory.head(10).n == 10


def test_regression_case1_shape_and_covariance():
    case = builtin_regression("case1")
    data = regression_sample(case, Rng(0))
    assert data.n == 3000
    m1, m2 = case.means(data.times)
    residuals = data.values - np.column_stack([m1, m2])
    np.testing.assert_allclose(np.cov(residuals.T), [[0.01, 0.0075], [0.0075, 0.0225]], atol=0.002)


def test_cholesky_covariance_on_a_large_sample():
    n = 100_000
    times = np.linspace(0.0, 1.0, n)
    theta = np.tile([0.5, 1.0, 0.1, 0.15, 0.5], (n, 1))
    residuals = regression_sample_theta(times, theta, Rng(0)).values - np.array([0.5, 1.0])
    _assert_covariance_within_3_se(residuals, [[0.01, 0.0075], [0.0075, 0.0225]])


def test_zero_correlation_gives_independent_components():
    n = 100_000
    times = np.linspace(0.0, 1.0, n)
    theta = np.tile([0.0, 0.0, 0.3, 2.0, 0.0], (n, 1))
    values = regression_sample_theta(times, theta, Rng(3)).values
    assert abs(np.corrcoef(values.T)[0, 1]) < 0.01


def test_regression_with_zero_covariance_returns_the_means():
    case = RegressionCaseSpec(name="flat", sigma1=0.0, sigma2=0.0, n=50)
    data = regression_sample(case, Rng(0))
    m1, m2 = case.means(data.times)
    np.testing.assert_array_equal(data.values, np.column_stack([m1, m2]))


def test_regression_is_reproducible():
    case = builtin_regression("case3")
    assert regression_sample(case, Rng(8)).values.tobytes() == regression_sample(case, Rng(8)).values.tobytes()


def test_theta_sampler_shares_random_numbers_with_case_sampler():
    case = builtin_regression("case2")
    times = case.times()
    from_case = regression_sample(case, Rng(6))
    from_theta = regression_sample_theta(times, case.true_theta(times), Rng(6))
    np.testing.assert_allclose(from_theta.values, from_case.values, rtol=1e-12, atol=1e-12)


def test_theta_sampler_uses_absolute_standard_deviations():
    times = np.linspace(0.0, 1.0, 20)
    theta = np.tile([0.0, 0.0, -0.2, 0.3, 0.1], (20, 1))
    flipped = theta.copy()
    flipped[:, 2] = 0.2
    a = regression_sample_theta(times, theta, Rng(1)).values
    b = regression_sample_theta(times, flipped, Rng(1)).values
    np.testing.assert_array_equal(a, b)
