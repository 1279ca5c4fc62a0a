import numpy as np
import pytest
from pydantic import ValidationError

from src.exceptions import ConfigurationError
from src.models import (
    SdeModelSpec,
    available_cases,
    available_models,
    builtin_regression,
    builtin_sde,
    load_model_file,
    register_sde_model,
    resolve_model,
    unregister_sde_model,
)
from src.neuralnet import HeadKind


@pytest.fixture(autouse=True)
def clean_registry():
    yield
    for name in ("custom_ou", "file_model"):
        unregister_sde_model(name)


def test_ex1_coefficients(ex1):
    assert ex1.drift(0.3, 1.0, [0.4]) == pytest.approx(-1.0)
    assert ex1.theta_true(0.0)[0] == pytest.approx(0.4)
    assert ex1.n == 10000
    assert ex1.known_constants == {"kappa": 2.0, "mu": 0.5}


def test_ex2_sign_convention():
    ex2 = builtin_sde("ex2")
    assert ex2.drift(0.0, 0.0, [1.0]) == pytest.approx(0.5)
    assert ex2.drift(0.0, 3.0, [1.0]) == pytest.approx(-1.5)


def test_ex3_coefficients():
    ex3 = builtin_sde("ex3")
    assert ex3.n == 10000
    assert ex3.drift(0.0, 0.0, [0.0]) == pytest.approx(0.4)
    assert ex3.diffusion(0.0, 0.0, [1.0]) == pytest.approx(3.5)
    assert ex3.theta_true(0.25)[0] == pytest.approx(2.25)


def test_ex4_log_sigma_at_zero():
    ex4 = builtin_sde("ex4_log")
    theta = ex4.theta_true(0.0)
    assert theta[1] == pytest.approx(0.075)
    assert theta[0] == pytest.approx(0.0)
    assert ex4.n == 80000
    assert ex4.drift(0.0, 1.2, [1.0, 0.2]) == pytest.approx(1.0 - 0.02)


@pytest.mark.parametrize("name", ["ex1", "ex2"])
def test_true_sigma_has_no_root_on_horizon(name):
    model = builtin_sde(name)
    times = np.arange(model.n + 1) * model.h
    assert np.min(np.abs(model.theta_true(times))) > 0.0


@pytest.mark.parametrize("name", ["ex1", "ex2", "ex3", "ex4_log"])
def test_diffusion_nonzero_at_random_points(name):
    model = builtin_sde(name)
    rng = np.random.default_rng(0)
    t = rng.uniform(0.0, model.T, 1000)
    x = rng.uniform(-3.0, 3.0, 1000)
    theta = model.theta_true(t)
    b = np.asarray(model.diffusion(t, x, [theta[:, j] for j in range(model.s)]))
    # isolated roots of σ(t) in ex3/ex4 are measure zero
    assert np.mean(b * b > 0.0) == 1.0


def test_unknown_model():
    with pytest.raises(ConfigurationError):
        builtin_sde("nope")
    with pytest.raises(ConfigurationError):
        builtin_regression("case9")


def test_case1_constant_off_diagonal():
    case = builtin_regression("case1")
    _, s12, _ = case.covariance(case.times())
    np.testing.assert_allclose(s12, 0.0075)
    assert case.n == 3000
    assert case.times()[0] == 0.0
    assert case.times()[-1] < 2.0 * np.pi


def test_case2_constant_correlation():
    case = builtin_regression("case2")
    t = case.times()
    m1, m2 = case.means(t)
    rho = case.true_theta(t)[:, 4]
    mask = (np.abs(m1) > 1e-6) & (np.abs(m2) > 1e-6)
    np.testing.assert_allclose(rho[mask], 0.5)


def test_case3_sigma_where_mean_is_one():
    case = builtin_regression("case3")
    # μ₁(t) = 0.5 + sin t = 1 at t = π/6
    assert case.true_theta(np.pi / 6.0)[2] == pytest.approx(0.1)


@pytest.mark.parametrize("name", ["case1", "case2", "case3"])
def test_covariance_positive_definite_on_grid(name):
    case = builtin_regression(name)
    t = case.times()
    s11, s12, s22 = case.covariance(t)
    m1, m2 = case.means(t)
    assert np.all(s11 + s22 > 0.0)
    # cases 2 and 3 degenerate only at roots of the means
    away = np.abs(m1 * m2) > 1e-8
    assert np.all((s11 * s22 - s12 * s12)[away] > 0.0)


def test_registry_listing_and_resolution():
    assert available_models() == ["ex1", "ex2", "ex3", "ex4_log"]
    assert available_cases() == ["case1", "case2", "case3"]
    assert resolve_model("CASE2").name == "case2"
    assert resolve_model("ex3").name == "ex3"


def test_register_custom_model(make_model):
    model = make_model(lambda t, x, th: -x, lambda t, x, th: th[0], name="custom_ou")
    register_sde_model(model)
    assert builtin_sde("custom_ou") is model
    assert "custom_ou" in available_models()
    with pytest.raises(ConfigurationError):
        register_sde_model(model)
    register_sde_model(model, replace=True)


def test_custom_model_cannot_shadow_builtin(make_model):
    with pytest.raises(ConfigurationError):
        register_sde_model(make_model(lambda t, x, th: 0.0, lambda t, x, th: 1.0, name="ex1"))


def test_spec_validation(make_model):
    with pytest.raises(ValidationError):
        make_model(lambda t, x, th: 0.0, lambda t, x, th: 1.0, T=1.0, h=0.3)
    with pytest.raises(ValidationError):
        make_model(lambda t, x, th: 0.0, lambda t, x, th: 1.0, s=2, heads=(HeadKind.IDENTITY,))


def test_load_model_file(tmp_path):
    path = tmp_path / "my_model.py"
    path.write_text(
        "from src.models import SdeModelSpec\n"
        "MODEL = SdeModelSpec(name='file_model', s=1, drift=lambda t, x, th: -x,\n"
        "                     diffusion=lambda t, x, th: th[0], heads=['abs_square'],\n"
        "                     true_theta=lambda t: 0.0 * t + 1.0, x0=0.0, T=1.0, h=0.01)\n"
    )
    model = load_model_file(str(path))
    assert isinstance(model, SdeModelSpec)
    assert resolve_model("file_model") is model


def test_load_model_file_without_model(tmp_path):
    path = tmp_path / "empty.py"
    path.write_text("VALUE = 1\n")
    with pytest.raises(ConfigurationError):
        load_model_file(str(path))
    with pytest.raises(ConfigurationError):
        load_model_file(str(tmp_path / "missing.py"))
