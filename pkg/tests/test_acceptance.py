"""Acceptance-scale runs; deselect with ``-m "not slow"``"""

import math

import numpy as np
import pytest

from src.cli import main
from src.evaluate import compare_ensembles, ks_two_sample, r2
from src.likelihood import SdeObjective
from src.models import builtin_sde
from src.neuralnet import default_spec, network_provider, theta_on_grid
from src.simulate import Rng, ensemble_endpoints, euler_path
from src.train import TrainConfig, fit_network

pytestmark = pytest.mark.slow

DESK_SEEDS = range(5)


def _column(fn):
    return lambda t: np.reshape(fn(np.asarray(t, dtype=np.float64)), (-1, 1))


def _desk_fit(seed):
    ex1 = builtin_sde("ex1")
    traj = euler_path(ex1, ex1.theta_true, ex1.x0, ex1.T, ex1.n, Rng(seed, 0)).subsample(5)
    spec = default_spec(ex1.heads, hidden_width=32, hidden_layers=3, horizon=traj.T)
    cfg = TrainConfig(batch_size=64, epochs=500, seed=seed, show_progress=False)
    result = fit_network(spec, SdeObjective(ex1, traj), cfg)
    times = traj.times[:-1]
    score = r2(ex1.theta_true(times)[:, 0], theta_on_grid(spec, result.weights, times)[:, 0])
    return {"spec": spec, "weights": result.weights, "r2": score, "n": traj.n}


@pytest.fixture(scope="module")
def desk_fits():
    return [_desk_fit(seed) for seed in DESK_SEEDS]


def test_ex1_endpoint_moments_with_unit_volatility():
    ex1 = builtin_sde("ex1")
    N = 10_000
    end = ensemble_endpoints(ex1, _column(np.ones_like), 1.0, 2.0, ex1.n, N, seed=21)[:, 0]
    mean = 0.5 + 0.5 * math.exp(-4.0)
    var = (1.0 - math.exp(-8.0)) / 4.0
    assert abs(end.mean() - mean) <= 3.0 * math.sqrt(var / N)
    # standard error of a normal sample variance
    assert abs(end.var(ddof=1) - var) <= 3.0 * var * math.sqrt(2.0 / (N - 1))


def test_desk_calibration_recovers_volatility(desk_fits):
    assert all(fit["n"] == 2000 for fit in desk_fits)
    assert sum(fit["r2"] >= 0.9 for fit in desk_fits) >= 4


def test_desk_fit_endpoint_distribution(desk_fits):
    ex1 = builtin_sde("ex1")
    best = max(desk_fits, key=lambda fit: fit["r2"])
    fitted = network_provider(best["spec"], best["weights"])
    true_end = ensemble_endpoints(ex1, ex1.theta_true, ex1.x0, ex1.T, 2000, 500, seed=5)[:, 0]
    fit_end = ensemble_endpoints(ex1, fitted, ex1.x0, ex1.T, 2000, 500, seed=5)[:, 0]
    _, p = ks_two_sample(true_end, fit_end)
    assert p >= 0.05


@pytest.mark.parametrize(
    "theta1, theta2",
    [
        (lambda t: 0.5 + 0.1 * np.sin(t), lambda t: np.full_like(t, 0.5)),
        (lambda t: np.full_like(t, 0.3), lambda t: 0.4 + 0.1 * np.cos(3.0 * t)),
        (lambda t: 0.2 + 0.1 * t, lambda t: np.full_like(t, 0.25)),
    ],
)
def test_threshold_model_respects_the_stability_bound(theta1, theta2):
    ex2 = builtin_sde("ex2")
    T, n, N = 2.0, 2000, 10_000
    times = np.linspace(0.0, T, n + 1)
    first, second = _column(theta1), _column(theta2)
    end_1 = ensemble_endpoints(ex2, first, 1.0, T, n, N, seed=13)[:, 0]
    end_2 = ensemble_endpoints(ex2, second, 1.0, T, n, N, seed=13)[:, 0]
    report = compare_ensembles(end_1, end_2, first(times), second(times), times, h_plus=0.0)
    assert report.l_emp <= report.stability_bound + 3.0 * report.l_emp_se


def test_ex1_pipeline_is_byte_reproducible(tmp_path):
    argv = ["pipeline", "--preset", "desk", "--seed", "3", "--epochs", "5", "--ensemble-size", "100", "--no-progress"]
    for name in ("first", "second"):
        assert main([*argv, "--output-dir", str(tmp_path / name)]) == 0
    artifacts = sorted(p.name for p in (tmp_path / "first").iterdir() if p.is_file())
    assert "forecast.csv" in artifacts and "theta.svg" in artifacts
    for artifact in artifacts:
        assert (tmp_path / "first" / artifact).read_bytes() == (tmp_path / "second" / artifact).read_bytes()
