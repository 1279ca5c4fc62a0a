"""
Forecasting
Monte Carlo forecasts with one-step Gaussian prediction intervals from a fitted Θ
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import ndtr

from .config import Config
from .exceptions import DataError, DomainError, SimulationError
from .models import SdeModelSpec
from .simulate import Rng, ThetaProvider

logger = logging.getLogger(__name__)

# Rational approximation of the inverse normal CDF (Acklam)
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549671010229583e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425
_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _tail(q: float) -> float:
    num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
    den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
    return num / den


def normal_quantile(p: float) -> float:
    """
    Φ⁻¹(p) by the Acklam rational approximation and one Halley step.

    Raises:
        DomainError: p outside (0, 1)
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {p!r}", p)
    if p < _P_LOW:
        x = _tail(math.sqrt(-2.0 * math.log(p)))
    elif p > 1.0 - _P_LOW:
        x = -_tail(math.sqrt(-2.0 * math.log(1.0 - p)))
    else:
        q = p - 0.5
        r = q * q
        num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        x = num / den
    # refinement against the exact CDF
    e = float(ndtr(x)) - p
    u = e * _SQRT_2PI * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def interval_quantile(alpha: float) -> float:
    """Two-sided q_α = Φ⁻¹((1 + α)/2)"""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"coverage level must lie in (0, 1), got {alpha!r}", alpha)
    return normal_quantile(0.5 * (1.0 + alpha))


@dataclass(frozen=True)
class Forecast:
    """
    Predictions and intervals for k = 1..N.

    ``carrier`` holds x̃_0..x̃_N. Scales are one-step conditional scales, so
    interval widths do not grow with the horizon.
    """

    alpha: float
    quantile: float
    times: np.ndarray
    predictions: np.ndarray
    centers: np.ndarray
    scales: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    carrier: np.ndarray

    @property
    def steps(self) -> int:
        return self.times.shape[0]

    def head(self, steps: int) -> "Forecast":
        """First ``steps`` forecast steps"""
        return Forecast(
            self.alpha, self.quantile, self.times[:steps], self.predictions[:steps], self.centers[:steps],
            self.scales[:steps], self.lower[:steps], self.upper[:steps], self.carrier[:steps + 1],
        )


def _coefficients(model: SdeModelSpec, t: float, x: float, theta) -> tuple:
    return float(model.drift(t, x, theta)), float(model.diffusion(t, x, theta))


def mc_forecast(
    model: SdeModelSpec,
    theta_hat: ThetaProvider,
    x_n: float,
    N: int,
    h: float,
    alpha: float,
    rng: Rng,
    t_start: float = 0.0,
    carrier: Literal["single", "ensemble"] = "single",
    n_carriers: int = 100,
) -> Forecast:
    """
    Monte Carlo forecast from the last observation ``x_n``.

    Steps:
        1. draw Z_0..Z_{N-1} and run the carrier x̃_{k+1} = x̃_k + a(t_k, x̃_k, Θ(t_k))h + √h·b(...)Z_k
        2. centres μ̃_k = x̃_{k-1} + a(t_{k-1}, x̃_{k-1}, Θ(t_k))h
        3. scales σ̃_k = √h·|b(t_{k-1}, x̃_{k-1}, Θ(t_k))| and intervals μ̃_k ± q_α σ̃_k

    Args:
        model: SDE definition (d = 1, m = 1)
        theta_hat: Fitted parameter provider
        x_n: Starting value x̃_0
        N: Number of forecast steps
        h: Step size
        alpha: Interval coverage
        rng: Noise stream
        t_start: Time of ``x_n``
        carrier: ``single`` path or the mean of ``n_carriers`` paths

    Raises:
        SimulationError: The carrier leaves the finite range
    """
    if N < 1:
        raise DataError("forecast needs N >= 1")
    if not h > 0.0:
        raise DataError(f"step size must be positive, got {h!r}")
    if model.d != 1 or model.m != 1:
        raise DataError("forecasting supports scalar models only")
    q = interval_quantile(alpha)
    times = t_start + np.arange(N + 1, dtype=np.float64) * h
    theta = np.asarray(theta_hat(times), dtype=np.float64).reshape(N + 1, -1)
    sqrt_h = math.sqrt(h)
    width = 1 if carrier == "single" else int(n_carriers)
    if width < 1:
        raise DataError("n_carriers must be >= 1")
    # step-major so a shorter horizon sees the same draws
    noise = rng.normals(N * width).reshape(N, width)

    paths = np.full(width, float(x_n))
    path = np.empty(N + 1, dtype=np.float64)
    path[0] = float(x_n)
    for k in range(N):
        a = np.broadcast_to(np.asarray(model.drift(times[k], paths, theta[k]), dtype=np.float64), paths.shape)
        b = np.broadcast_to(np.asarray(model.diffusion(times[k], paths, theta[k]), dtype=np.float64), paths.shape)
        paths = paths + a * h + sqrt_h * b * noise[k]
        path[k + 1] = paths.mean() if width > 1 else paths[0]
        if not np.isfinite(path[k + 1]) or abs(path[k + 1]) > Config.OVERFLOW_LIMIT:
            raise SimulationError("forecast carrier left the finite range", step=k + 1)

    centers = np.empty(N, dtype=np.float64)
    scales = np.empty(N, dtype=np.float64)
    for k in range(1, N + 1):
        a, b = _coefficients(model, times[k - 1], path[k - 1], theta[k])
        centers[k - 1] = path[k - 1] + a * h
        scales[k - 1] = sqrt_h * abs(b)
    logger.debug("Forecast %d steps from t=%g, q=%.6f", N, t_start, q)
    return Forecast(
        alpha=alpha,
        quantile=q,
        times=times[1:],
        predictions=centers.copy(),
        centers=centers,
        scales=scales,
        lower=centers - q * scales,
        upper=centers + q * scales,
        carrier=path,
    )
