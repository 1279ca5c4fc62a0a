"""Shared fixtures for the TimeCal test suite"""

import numpy as np
import pytest

from src.models import SdeModelSpec, builtin_sde
from src.neuralnet import HeadKind, default_spec
from src.simulate import Rng, euler_path


@pytest.fixture
def ex1():
    return builtin_sde("ex1")


@pytest.fixture
def make_model():
    """Scalar SDE with the given coefficient functions on a short grid"""

    def build(drift, diffusion, s=1, heads=None, T=1.0, h=0.1, x0=0.0, true_theta=None, name="test_model"):
        return SdeModelSpec(
            name=name,
            s=s,
            drift=drift,
            diffusion=diffusion,
            true_theta=true_theta,
            heads=heads or (HeadKind.IDENTITY,) * s,
            x0=x0,
            T=T,
            h=h,
        )

    return build


@pytest.fixture
def short_ex1_trajectory(ex1):
    """ex1 with its true σ on [0, 0.2], 200 steps"""
    return euler_path(ex1, ex1.theta_true, 1.0, 0.2, 200, Rng(3))


@pytest.fixture
def small_spec():
    return default_spec([HeadKind.ABS_SQUARE], hidden_width=4, hidden_layers=2, horizon=0.2)


@pytest.fixture
def random_weights():
    def draw(spec, seed=0, scale=0.5):
        return np.random.default_rng(seed).normal(0.0, scale, spec.n_parameters)

    return draw
