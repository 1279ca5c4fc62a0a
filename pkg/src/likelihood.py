"""
Likelihood Functions
Negative log-(quasi-)likelihoods minimised during calibration, plus the exact OU oracle
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, List, Optional, Sequence

import numpy as np

from . import autodiff
from .autodiff import Scalar
from .exceptions import DataError, DomainError, SingularDiffusionError
from .models import SdeModelSpec
from .simulate import RegressionDataset, Trajectory

logger = logging.getLogger(__name__)

LN_2PI = math.log(2.0 * math.pi)
QUADRATURE_POINTS = 64


@dataclass(frozen=True)
class LossTerm:
    """−ln f for transition (or observation) k"""

    index: int
    value: Scalar


def markov_nll(log_density: Callable[[int], Scalar], indices: Iterable[int]) -> Scalar:
    """
    −Σ ln f_{X_{k+1}|X_k} over ``indices``.

    Args:
        log_density: k -> ln f of transition k (float or tape node)
        indices: Transition indices to include
    """
    return autodiff.sum_nodes(-log_density(k) for k in indices)


def _check_indices(indices: Optional[Iterable[int]], n: int) -> List[int]:
    if indices is None:
        return list(range(n))
    indices = [int(k) for k in indices]
    for k in indices:
        if not 0 <= k < n:
            raise IndexError(f"term index {k} outside 0..{n - 1}")
    return indices


# ---------------------------------------------------------------------------
# 2-D heteroscedastic regression
# ---------------------------------------------------------------------------


def regression_term(x1: float, x2: float, theta: Sequence[Scalar]) -> Scalar:
    """
    −ln of the bivariate normal density at (x1, x2).

    ``theta`` is [μ₁, μ₂, σ₁, σ₂, ρ]. σᵢ enter as σᵢ² and |σᵢ|, so the
    value does not depend on their signs.
    """
    mu1, mu2, s1, s2, rho = theta
    var1 = autodiff.square(s1)
    var2 = autodiff.square(s2)
    one_minus = 1.0 - autodiff.square(rho)
    if autodiff.value_of(one_minus) <= 0.0:
        raise DomainError(f"correlation outside (-1, 1): rho={autodiff.value_of(rho)!r}", autodiff.value_of(rho))
    if autodiff.value_of(var1) == 0.0 or autodiff.value_of(var2) == 0.0:
        raise DomainError("zero regression standard deviation", 0.0)
    u1 = x1 - mu1
    u2 = x2 - mu2
    cross = rho * u1 * u2 / (autodiff.absolute(s1) * autodiff.absolute(s2))
    quad = autodiff.square(u1) / var1 + autodiff.square(u2) / var2 - 2.0 * cross
    log_det = 0.5 * (autodiff.ln(var1) + autodiff.ln(var2) + autodiff.ln(one_minus))
    return LN_2PI + log_det + quad / (2.0 * one_minus)


def regression_nll_2d_terms(
    theta_at: Sequence[Sequence[Scalar]],
    data: RegressionDataset,
    indices: Optional[Iterable[int]] = None,
) -> Iterator[LossTerm]:
    for k in _check_indices(indices, data.n):
        yield LossTerm(k, regression_term(data.values[k, 0], data.values[k, 1], theta_at[k]))


def regression_nll_2d(
    theta_at: Sequence[Sequence[Scalar]],
    data: RegressionDataset,
    indices: Optional[Iterable[int]] = None,
) -> Scalar:
    """
    Σ_k of the bivariate Gaussian NLL with Θ(t_k) = [μ₁, μ₂, σ₁, σ₂, ρ].

    Args:
        theta_at: Θ per observation, indexable by k (array rows or node lists)
        data: Observations
        indices: Subset of observations (all by default)

    Raises:
        DomainError: 1 − ρ² ≤ 0 or σᵢ = 0
    """
    return autodiff.sum_nodes(term.value for term in regression_nll_2d_terms(theta_at, data, indices))


def regression_nll_values(theta_grid: np.ndarray, data: RegressionDataset) -> np.ndarray:
    """Per-observation terms for a float Θ grid (n, 5), vectorised"""
    theta_grid = np.asarray(theta_grid, dtype=np.float64)
    mu1, mu2, s1, s2, rho = (theta_grid[:, j] for j in range(5))
    one_minus = 1.0 - rho * rho
    if np.any(one_minus <= 0.0):
        raise DomainError("correlation outside (-1, 1)", float(rho[np.argmax(one_minus <= 0.0)]))
    var1, var2 = s1 * s1, s2 * s2
    if np.any(var1 == 0.0) or np.any(var2 == 0.0):
        raise DomainError("zero regression standard deviation", 0.0)
    u1 = data.values[:, 0] - mu1
    u2 = data.values[:, 1] - mu2
    quad = u1 * u1 / var1 + u2 * u2 / var2 - 2.0 * rho * u1 * u2 / (np.abs(s1) * np.abs(s2))
    return LN_2PI + 0.5 * (np.log(var1) + np.log(var2) + np.log(one_minus)) + quad / (2.0 * one_minus)


# ---------------------------------------------------------------------------
# SDE Euler quasi-likelihood
# ---------------------------------------------------------------------------


def _quasi_term_1d(k: int, dx: float, h: float, a: Scalar, b: Scalar) -> Scalar:
    variance = autodiff.square(b)
    if autodiff.value_of(variance) == 0.0:
        raise SingularDiffusionError(k, 0.0)
    residual = dx - a * h
    return 0.5 * (autodiff.ln(variance * (2.0 * math.pi * h)) + autodiff.square(residual) / (variance * h))


def _quasi_term_2d(k: int, dx: Sequence[float], h: float, a: Sequence[Scalar], b) -> Scalar:
    s11 = autodiff.sum_nodes(autodiff.square(e) for e in b[0])
    s22 = autodiff.sum_nodes(autodiff.square(e) for e in b[1])
    s12 = autodiff.sum_nodes(p * q for p, q in zip(b[0], b[1]))
    det = s11 * s22 - s12 * s12
    if not autodiff.value_of(det) > 0.0:
        raise SingularDiffusionError(k, autodiff.value_of(det))
    r1 = dx[0] - a[0] * h
    r2 = dx[1] - a[1] * h
    quad = (autodiff.square(r1) * s22 - 2.0 * r1 * r2 * s12 + autodiff.square(r2) * s11) / det
    return 0.5 * (2.0 * math.log(2.0 * math.pi * h) + autodiff.ln(det) + quad / h)


def sde_quasi_term(model: SdeModelSpec, traj: Trajectory, k: int, theta: Sequence[Scalar]) -> Scalar:
    """
    Quasi-NLL of transition k: ½[ln((2π)ᵈ det(h·bbᵀ)) + rᵀ(bbᵀ)⁻¹r/h], r = Δx_k − a·h.

    Raises:
        SingularDiffusionError: bbᵀ is singular at t_k
    """
    t = float(traj.times[k])
    if model.d == 1:
        x = float(traj.values[k, 0])
        dx = float(traj.values[k + 1, 0] - traj.values[k, 0])
        a = model.drift(t, x, theta)
        b = model.diffusion(t, x, theta)
        if model.m > 1:
            variance = autodiff.sum_nodes(autodiff.square(e) for e in b[0])
            b = autodiff.sqrt(variance) if autodiff.value_of(variance) > 0.0 else 0.0
        return _quasi_term_1d(k, dx, traj.h, a, b)
    if model.d == 2:
        x = [float(v) for v in traj.values[k]]
        dx = [float(v) for v in traj.values[k + 1] - traj.values[k]]
        return _quasi_term_2d(k, dx, traj.h, model.drift(t, x, theta), model.diffusion(t, x, theta))
    raise DataError(f"quasi-likelihood supports d in (1, 2), got d={model.d}")


def sde_quasi_nll_terms(
    model: SdeModelSpec,
    theta_at: Sequence[Sequence[Scalar]],
    traj: Trajectory,
    indices: Optional[Iterable[int]] = None,
) -> Iterator[LossTerm]:
    if traj.d != model.d:
        raise DataError(f"trajectory has d={traj.d}, model {model.name!r} expects d={model.d}")
    for k in _check_indices(indices, traj.n):
        yield LossTerm(k, sde_quasi_term(model, traj, k, theta_at[k]))


def sde_quasi_nll(
    model: SdeModelSpec,
    theta_at: Sequence[Sequence[Scalar]],
    traj: Trajectory,
    indices: Optional[Iterable[int]] = None,
) -> Scalar:
    """
    Euler negative log-quasi-likelihood of ``traj``.

    Args:
        model: SDE definition (d = 1 or 2)
        theta_at: Θ(t_k) per transition k = 0..n-1, indexable by k
        traj: Observed path
        indices: Subset of transitions (all by default)

    Returns:
        Float, or a tape node when Θ holds nodes
    """
    return autodiff.sum_nodes(term.value for term in sde_quasi_nll_terms(model, theta_at, traj, indices))


def sde_quasi_nll_values(model: SdeModelSpec, theta_grid: np.ndarray, traj: Trajectory) -> np.ndarray:
    """Per-transition terms for a float Θ grid (n, s), vectorised over k (d = 1, m = 1)"""
    if model.d != 1 or model.m != 1:
        theta_grid = np.asarray(theta_grid, dtype=np.float64)
        return np.array([sde_quasi_term(model, traj, k, theta_grid[k]) for k in range(traj.n)])
    theta_grid = np.asarray(theta_grid, dtype=np.float64)[: traj.n]
    theta = [theta_grid[:, j] for j in range(theta_grid.shape[1])]
    t = traj.times[:-1]
    x = traj.values[:-1, 0]
    dx = np.diff(traj.values[:, 0])
    a = np.broadcast_to(np.asarray(model.drift(t, x, theta), dtype=np.float64), x.shape)
    b = np.broadcast_to(np.asarray(model.diffusion(t, x, theta), dtype=np.float64), x.shape)
    variance = b * b
    if np.any(variance == 0.0):
        k = int(np.argmax(variance == 0.0))
        raise SingularDiffusionError(k, 0.0)
    residual = dx - a * traj.h
    return 0.5 * (np.log(variance * (2.0 * math.pi * traj.h)) + residual * residual / (variance * traj.h))


# ---------------------------------------------------------------------------
# Exact Ornstein-Uhlenbeck transition density
# ---------------------------------------------------------------------------


def ou_transition_variances(theta1: float, theta2: Callable, times: np.ndarray) -> np.ndarray:
    """
    v_k = ∫_{t_k}^{t_{k+1}} θ₂(u)² e^{−2θ₁(t_{k+1}−u)} du by 64-point Gauss-Legendre.
    """
    times = np.asarray(times, dtype=np.float64)
    nodes, weights = np.polynomial.legendre.leggauss(QUADRATURE_POINTS)
    left, right = times[:-1], times[1:]
    half = 0.5 * (right - left)
    u = (0.5 * (right + left))[:, None] + half[:, None] * nodes[None, :]
    integrand = np.asarray(theta2(u), dtype=np.float64) ** 2 * np.exp(-2.0 * theta1 * (right[:, None] - u))
    return half * (integrand @ weights)


def ou_exact_nll(theta1: float, theta2: Callable, traj: Trajectory) -> float:
    """
    −Σ ln of the exact transition density of dX = −θ₁X dt + θ₂(t) dW.

    Args:
        theta1: Mean-reversion rate, θ₁ ≥ 0
        theta2: Vectorised volatility function of time
        traj: Observed path (d = 1)

    Raises:
        DomainError: θ₁ < 0 or a transition variance v_k ≤ 0
    """
    if theta1 < 0.0:
        raise DomainError(f"theta1 must be non-negative, got {theta1!r}", theta1)
    variances = ou_transition_variances(theta1, theta2, traj.times)
    if np.any(variances <= 0.0):
        k = int(np.argmax(variances <= 0.0))
        raise DomainError(f"non-positive transition variance at k={k}", float(variances[k]))
    x = traj.values[:, 0]
    decay = np.exp(-theta1 * np.diff(traj.times))
    residual = x[1:] - decay * x[:-1]
    return float(np.sum(0.5 * (np.log(2.0 * math.pi * variances) + residual * residual / variances)))


# ---------------------------------------------------------------------------
# Training objectives
# ---------------------------------------------------------------------------


class SdeObjective:
    """Quasi-likelihood of one trajectory, term k evaluated with Θ(t_k)"""

    def __init__(self, model: SdeModelSpec, traj: Trajectory):
        if traj.d != model.d:
            raise DataError(f"trajectory has d={traj.d}, model {model.name!r} expects d={model.d}")
        self.model = model
        self.traj = traj
        self.times = traj.times[:-1]
        self.s = model.s

    @property
    def n_terms(self) -> int:
        return self.traj.n

    def term(self, k: int, theta: Sequence[Scalar]) -> Scalar:
        return sde_quasi_term(self.model, self.traj, k, theta)

    def values(self, theta_grid: np.ndarray) -> np.ndarray:
        return sde_quasi_nll_values(self.model, theta_grid, self.traj)


class RegressionObjective:
    """2-D regression NLL, term k evaluated with Θ(t_k)"""

    def __init__(self, data: RegressionDataset):
        self.data = data
        self.times = data.times
        self.s = 5

    @property
    def n_terms(self) -> int:
        return self.data.n

    def term(self, k: int, theta: Sequence[Scalar]) -> Scalar:
        return regression_term(float(self.data.values[k, 0]), float(self.data.values[k, 1]), theta)

    def values(self, theta_grid: np.ndarray) -> np.ndarray:
        return regression_nll_values(theta_grid, self.data)
