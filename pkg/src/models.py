"""
Model Registry
Built-in SDE models and 2-D regression cases with their true parameter functions
"""

import importlib.util
import logging
import math
import os
from typing import Callable, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .exceptions import ConfigurationError
from .neuralnet import HeadKind

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


class SdeModelSpec(BaseModel):
    """
    One SDE dX = a(t, X, Θ(t)) dt + b(t, X, Θ(t)) dW.

    ``drift(t, x, theta)`` and ``diffusion(t, x, theta)`` receive ``theta``
    as a sequence of s components (floats, arrays or tape nodes). For d = 1
    ``x`` is a scalar or an array of paths and both return the same shape
    (diffusion as the single entry of b). For d > 1 ``x`` is a sequence of d
    components, drift returns d components and diffusion a d×m nested list.
    ``true_theta(t)`` accepts a scalar or an array of times and returns an
    array whose last axis has length s.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str
    d: int = Field(1, ge=1)
    m: int = Field(1, ge=1)
    s: int = Field(ge=1)
    drift: Callable
    diffusion: Callable
    true_theta: Optional[Callable] = None
    heads: Tuple[HeadKind, ...]
    known_constants: Dict[str, float] = Field(default_factory=dict)
    x0: Union[float, Tuple[float, ...]]
    T: float = Field(gt=0.0)
    h: float = Field(gt=0.0)
    description: str = ""

    @field_validator("heads", mode="before")
    @classmethod
    def _coerce_heads(cls, heads):
        return tuple(HeadKind(h) for h in heads)

    @model_validator(mode="after")
    def _check_grid(self):
        if len(self.heads) != self.s:
            raise ValueError(f"{len(self.heads)} heads for s={self.s}")
        steps = self.T / self.h
        if round(steps) < 1 or abs(steps - round(steps)) > 1e-6 * max(1.0, steps):
            raise ValueError(f"T/h = {steps!r} is not a positive integer")
        if np.size(self.x0) != self.d:
            raise ValueError(f"x0 has {np.size(self.x0)} components for d={self.d}")
        return self

    @property
    def n(self) -> int:
        """Number of transitions on [0, T]"""
        return int(round(self.T / self.h))

    @property
    def initial_state(self) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.x0, dtype=np.float64))

    def theta_true(self, t) -> np.ndarray:
        if self.true_theta is None:
            raise ConfigurationError(f"model {self.name!r} has no true parameter function")
        return np.asarray(self.true_theta(t), dtype=np.float64)


class RegressionCaseSpec(BaseModel):
    """
    X(t_k) = μ(t_k) + ε(t_k), ε ~ N(0, Σ(t_k)), t_k = k·2π/n.

    ``scaling`` selects how Σ depends on the means: ``constant`` keeps the
    base matrix, ``squared`` multiplies the diagonal by |μᵢ|², ``absolute``
    by |μᵢ|; the off-diagonal is ρσ₁σ₂|μ₁||μ₂| in both scaled cases.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str
    sigma1: float = 0.1
    sigma2: float = 0.15
    rho: float = Field(0.5, gt=-1.0, lt=1.0)
    n: int = Field(3000, ge=1)
    scaling: Literal["constant", "squared", "absolute"] = "constant"
    mu1: Callable = Field(default=lambda t: 0.5 + np.sin(t))
    mu2: Callable = Field(default=lambda t: np.cos(t))
    description: str = ""

    heads: Tuple[HeadKind, ...] = (
        HeadKind.IDENTITY,
        HeadKind.IDENTITY,
        HeadKind.ABS_SQUARE,
        HeadKind.ABS_SQUARE,
        HeadKind.TANH_CORRELATION,
    )

    @property
    def s(self) -> int:
        return 5

    @property
    def T(self) -> float:
        return TWO_PI

    def times(self) -> np.ndarray:
        return np.arange(self.n, dtype=np.float64) * (TWO_PI / self.n)

    def means(self, t) -> Tuple[np.ndarray, np.ndarray]:
        t = np.asarray(t, dtype=np.float64)
        return np.asarray(self.mu1(t), dtype=np.float64), np.asarray(self.mu2(t), dtype=np.float64)

    def covariance(self, t) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Entries (Σ₁₁, Σ₁₂, Σ₂₂) at ``t``"""
        m1, m2 = self.means(t)
        a1, a2 = np.abs(m1), np.abs(m2)
        base12 = self.rho * self.sigma1 * self.sigma2
        if self.scaling == "constant":
            ones = np.ones_like(m1)
            return self.sigma1 ** 2 * ones, base12 * ones, self.sigma2 ** 2 * ones
        if self.scaling == "squared":
            return self.sigma1 ** 2 * a1 ** 2, base12 * a1 * a2, self.sigma2 ** 2 * a2 ** 2
        return self.sigma1 ** 2 * a1, base12 * a1 * a2, self.sigma2 ** 2 * a2

    def true_theta(self, t) -> np.ndarray:
        """[μ₁, μ₂, σ₁(t), σ₂(t), ρ(t)] with last axis of length 5"""
        m1, m2 = self.means(t)
        s11, s12, s22 = self.covariance(t)
        sd1, sd2 = np.sqrt(s11), np.sqrt(s22)
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = np.where(sd1 * sd2 > 0.0, s12 / (sd1 * sd2), 0.0)
        return np.stack([m1, m2, sd1, sd2, rho], axis=-1)

    def theta_true(self, t) -> np.ndarray:
        return self.true_theta(t)


ModelSpec = Union[SdeModelSpec, RegressionCaseSpec]


def diffusion_index(problem: ModelSpec) -> int:
    """Θ component of the first volatility head (ABS_SQUARE); 0 when there is none"""
    for index, head in enumerate(problem.heads):
        if head == HeadKind.ABS_SQUARE:
            return index
    return 0


def _sigma_oscillating(t):
    return 2.0 * t + 0.4 + 1.5 * np.sin(4.0 * t)


def _sigma_ex3(t):
    return 2.0 * np.sin(TWO_PI * t) + t


def _mu_ex4(t):
    return 7.5 * t ** 2 * np.sin(3.5 * t * math.pi)


def _sigma_ex4(t):
    return (3.0 + 3.0 * t ** 2 - 3.0 * t * np.sin(3.0 * t * math.pi)) / 40.0


def _column(fn):
    return lambda t: np.stack([fn(np.asarray(t, dtype=np.float64))], axis=-1)


def _build_ex1() -> SdeModelSpec:
    kappa, mu = 2.0, 0.5
    return SdeModelSpec(
        name="ex1",
        s=1,
        drift=lambda t, x, theta: kappa * (mu - x),
        diffusion=lambda t, x, theta: theta[0],
        true_theta=_column(_sigma_oscillating),
        heads=(HeadKind.ABS_SQUARE,),
        known_constants={"kappa": kappa, "mu": mu},
        x0=1.0,
        T=2.0,
        h=0.0002,
        description="Ornstein-Uhlenbeck with time-varying volatility",
    )


def _build_ex2() -> SdeModelSpec:
    kappa, mu = 2.0, 0.5
    return SdeModelSpec(
        name="ex2",
        s=1,
        # np.sign(0) == 0
        drift=lambda t, x, theta: mu - kappa * np.sign(x),
        diffusion=lambda t, x, theta: theta[0],
        true_theta=_column(_sigma_oscillating),
        heads=(HeadKind.ABS_SQUARE,),
        known_constants={"kappa": kappa, "mu": mu},
        x0=1.0,
        T=2.0,
        h=0.0002,
        description="Threshold diffusion",
    )


def _build_ex3() -> SdeModelSpec:
    kappa = 0.4
    return SdeModelSpec(
        name="ex3",
        s=1,
        drift=lambda t, x, theta: kappa * np.cos(x),
        # σ(t) changes sign and b is not even in σ, so the head stays linear
        diffusion=lambda t, x, theta: (np.sin(x) + 1.5) * theta[0] + 2.0,
        true_theta=_column(_sigma_ex3),
        heads=(HeadKind.IDENTITY,),
        known_constants={"kappa": kappa},
        x0=1.2,
        T=3.8,
        h=0.00038,
        description="Nonlinear drift and diffusion",
    )


def _build_ex4_log() -> SdeModelSpec:
    return SdeModelSpec(
        name="ex4_log",
        s=2,
        drift=lambda t, x, theta: theta[0] - 0.5 * theta[1] * theta[1],
        diffusion=lambda t, x, theta: theta[1],
        true_theta=lambda t: np.stack(
            [_mu_ex4(np.asarray(t, dtype=np.float64)), _sigma_ex4(np.asarray(t, dtype=np.float64))], axis=-1
        ),
        heads=(HeadKind.IDENTITY, HeadKind.ABS_SQUARE),
        x0=1.2,
        T=1.2,
        h=0.000015,
        description="Log-transformed Black-Scholes, drift and volatility",
    )


_SDE_BUILDERS: Dict[str, Callable[[], SdeModelSpec]] = {
    "ex1": _build_ex1,
    "ex2": _build_ex2,
    "ex3": _build_ex3,
    "ex4_log": _build_ex4_log,
}

_REGRESSION_CASES: Dict[str, Dict] = {
    "case1": {"scaling": "constant", "description": "2-D regression, time-dependent means"},
    "case2": {"scaling": "squared", "description": "2-D regression, time-dependent variances"},
    "case3": {"scaling": "absolute", "description": "2-D regression, all parameters time-dependent"},
}

_CUSTOM_MODELS: Dict[str, SdeModelSpec] = {}


def builtin_sde(name: str) -> SdeModelSpec:
    """
    Look up an SDE model by name.

    Args:
        name: ex1, ex2, ex3, ex4_log or a registered custom model

    Returns:
        SdeModelSpec

    Raises:
        ConfigurationError: Unknown name
    """
    key = name.strip().lower()
    if key in _CUSTOM_MODELS:
        return _CUSTOM_MODELS[key]
    if key not in _SDE_BUILDERS:
        raise ConfigurationError(f"unknown SDE model {name!r}; available: {', '.join(available_models())}")
    return _SDE_BUILDERS[key]()


def builtin_regression(name: str) -> RegressionCaseSpec:
    """Look up a 2-D regression case (case1, case2, case3)"""
    key = name.strip().lower()
    if key not in _REGRESSION_CASES:
        raise ConfigurationError(f"unknown regression case {name!r}; available: {', '.join(_REGRESSION_CASES)}")
    return RegressionCaseSpec(name=key, **_REGRESSION_CASES[key])


def available_models() -> List[str]:
    return sorted(set(_SDE_BUILDERS) | set(_CUSTOM_MODELS))


def available_cases() -> List[str]:
    return list(_REGRESSION_CASES)


def register_sde_model(spec: SdeModelSpec, replace: bool = False) -> SdeModelSpec:
    """Make a user-defined model available under ``spec.name``"""
    key = spec.name.strip().lower()
    if key in _SDE_BUILDERS:
        raise ConfigurationError(f"{spec.name!r} would shadow a built-in model")
    if key in _CUSTOM_MODELS and not replace:
        raise ConfigurationError(f"model {spec.name!r} is already registered")
    _CUSTOM_MODELS[key] = spec
    logger.info("Registered custom model %s (d=%d, s=%d)", key, spec.d, spec.s)
    return spec


def unregister_sde_model(name: str) -> None:
    _CUSTOM_MODELS.pop(name.strip().lower(), None)


def load_model_file(path: str) -> SdeModelSpec:
    """
    Import a Python file that defines ``MODEL`` and register it.

    Raises:
        ConfigurationError: Missing file, import failure or no SdeModelSpec named MODEL
    """
    if not os.path.isfile(path):
        raise ConfigurationError(f"model file not found: {path}")
    module_name = "timecal_user_model_" + os.path.splitext(os.path.basename(path))[0]
    spec = importlib.util.spec_from_file_location(module_name, path)
    if spec is None or spec.loader is None:
        raise ConfigurationError(f"cannot import model file {path}")
    module = importlib.util.module_from_spec(spec)
    try:
        spec.loader.exec_module(module)
    except Exception as e:
        raise ConfigurationError(f"error importing model file {path}: {e}") from e
    model = getattr(module, "MODEL", None)
    if not isinstance(model, SdeModelSpec):
        raise ConfigurationError(f"{path} must define MODEL as an SdeModelSpec")
    return register_sde_model(model, replace=True)


def resolve_model(name: str) -> ModelSpec:
    """SDE model or regression case by name"""
    key = name.strip().lower()
    if key in _REGRESSION_CASES:
        return builtin_regression(key)
    return builtin_sde(key)
