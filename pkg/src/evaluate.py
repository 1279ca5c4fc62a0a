"""
Evaluation
Fit metrics, two-sample distribution tests and empirical stability constants
"""

import logging
import math
from dataclasses import dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from .exceptions import DataError
from .forecast import interval_quantile

logger = logging.getLogger(__name__)

KS_TERM_TOLERANCE = 1e-12
KS_MAX_TERMS = 100_000


def _pair(y, y_hat) -> Tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape:
        raise DataError(f"samples have unequal lengths {y.shape[0]} and {y_hat.shape[0]}")
    if y.shape[0] == 0:
        raise DataError("empty samples")
    return y, y_hat


def mse(y, y_hat) -> float:
    """Mean squared residual"""
    y, y_hat = _pair(y, y_hat)
    return float(np.mean((y - y_hat) ** 2))


def r2(y, y_hat) -> float:
    """
    1 − SS_res/SS_tot.

    Raises:
        DataError: y has zero variance (r2 undefined)
    """
    y, y_hat = _pair(y, y_hat)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise DataError("r2 is undefined for a constant reference series")
    return 1.0 - float(np.sum((y - y_hat) ** 2)) / ss_tot


def kolmogorov_pvalue(lam: float) -> float:
    """2Σ_{k≥1}(−1)^{k−1}e^{−2k²λ²}, truncated below 1e-12 and clamped to [0, 1]"""
    if lam <= 0.0:
        return 1.0
    total = 0.0
    for k in range(1, KS_MAX_TERMS + 1):
        term = 2.0 * math.exp(-2.0 * k * k * lam * lam)
        total += term if k % 2 else -term
        if term < KS_TERM_TOLERANCE:
            break
    return min(1.0, max(0.0, total))


def ks_statistic(s1, s2) -> float:
    """sup |F₁ − F₂| by a sweep over the merged sorted samples"""
    x = np.sort(np.asarray(s1, dtype=np.float64).ravel())
    y = np.sort(np.asarray(s2, dtype=np.float64).ravel())
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise DataError("KS test needs two non-empty samples")
    merged = np.concatenate([x, y])
    cdf_x = np.searchsorted(x, merged, side="right") / x.shape[0]
    cdf_y = np.searchsorted(y, merged, side="right") / y.shape[0]
    return float(np.max(np.abs(cdf_x - cdf_y)))


def ks_two_sample(s1, s2) -> Tuple[float, float]:
    """
    Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.

    Returns:
        (D, p) with λ = D·√(nm/(n+m)); p is unreliable below ~50 points per sample
    """
    d = ks_statistic(s1, s2)
    n, m = np.size(s1), np.size(s2)
    return d, kolmogorov_pvalue(d * math.sqrt(n * m / (n + m)))


def empirical_moments(samples) -> Tuple[float, float]:
    """(mean, std with 1/(N−1))"""
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.shape[0] < 2:
        raise DataError("empirical std needs at least two samples")
    return float(samples.mean()), float(samples.std(ddof=1))


def qq_points(s1, s2) -> np.ndarray:
    """Sorted pairs (sort(s1)_i, sort(s2)_i), shape (N, 2)"""
    a, b = _pair(s1, s2)
    return np.column_stack([np.sort(a), np.sort(b)])


def histogram_points(s1, s2, bins: int = 40) -> np.ndarray:
    """
    Counts of both samples on common bins.

    Returns:
        Rows (bin_left, bin_right, count_1, count_2)
    """
    a = np.asarray(s1, dtype=np.float64).ravel()
    b = np.asarray(s2, dtype=np.float64).ravel()
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise DataError("histogram needs two non-empty samples")
    edges = np.histogram_bin_edges(np.concatenate([a, b]), bins=bins)
    count_a, _ = np.histogram(a, bins=edges)
    count_b, _ = np.histogram(b, bins=edges)
    return np.column_stack([edges[:-1], edges[1:], count_a, count_b]).astype(np.float64)


@dataclass(frozen=True)
class TheoremConstants:
    l_emp: float
    r_emp: float
    c_emp: Optional[float]


def theorem_constants(endpoints_true, endpoints_fit, sigma_true, sigma_fit) -> TheoremConstants:
    """
    L = √(mean |X_i(T) − X̂_i(T)|²), R = 2·max|σ̂ − σ|, C = L/R.

    Endpoints are paired by trajectory index (common random numbers);
    C is None when R = 0.
    """
    a, b = _pair(endpoints_true, endpoints_fit)
    s, s_hat = _pair(sigma_true, sigma_fit)
    l_emp = math.sqrt(float(np.mean((a - b) ** 2)))
    r_emp = 2.0 * float(np.max(np.abs(s_hat - s)))
    return TheoremConstants(l_emp, r_emp, l_emp / r_emp if r_emp > 0.0 else None)


def _pointwise(values) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return np.abs(values) if values.ndim == 1 else np.sqrt(np.sum(values ** 2, axis=-1))


def l2_norm(values, times) -> float:
    """‖f‖ on [t_0, t_end] by the trapezoid rule (Euclidean over components)"""
    magnitude = _pointwise(values)
    times = np.asarray(times, dtype=np.float64)
    if magnitude.shape[0] != times.shape[0]:
        raise DataError(f"{magnitude.shape[0]} values for {times.shape[0]} grid points")
    return math.sqrt(float(trapezoid(magnitude ** 2, times)))


def sup_norm(values) -> float:
    """max over the grid"""
    return float(np.max(_pointwise(values)))


def stability_bound(theta1, theta2, times, h_plus: float = 0.0) -> float:
    """e^{T·H₊}·‖Θ₁ − Θ₂‖_{L²[0,T]} with H₊ = max(H, 0)"""
    times = np.asarray(times, dtype=np.float64)
    horizon = float(times[-1] - times[0])
    diff = np.asarray(theta1, dtype=np.float64) - np.asarray(theta2, dtype=np.float64)
    return math.exp(horizon * max(h_plus, 0.0)) * l2_norm(diff, times)


def l_emp_standard_error(endpoints_a, endpoints_b) -> float:
    """Delta-method standard error of L_emp: SE(mean D²)/(2L)"""
    a, b = _pair(endpoints_a, endpoints_b)
    if a.shape[0] < 2:
        raise DataError("standard error needs at least two paths")
    sq = (a - b) ** 2
    l_emp = math.sqrt(float(sq.mean()))
    if l_emp == 0.0:
        return 0.0
    return float(sq.std(ddof=1)) / math.sqrt(sq.shape[0]) / (2.0 * l_emp)


def regression_bands(theta_grid, levels: Sequence[float] = (0.68, 0.95)) -> Dict[float, Tuple[np.ndarray, np.ndarray]]:
    """
    μᵢ ± q·|σᵢ| per level from a regression Θ grid [μ₁, μ₂, σ₁, σ₂, ρ].

    Returns:
        level -> (lower (len, 2), upper (len, 2))
    """
    theta_grid = np.asarray(theta_grid, dtype=np.float64)
    means = theta_grid[:, 0:2]
    scales = np.abs(theta_grid[:, 2:4])
    bands = {}
    for level in levels:
        q = interval_quantile(level)
        bands[level] = (means - q * scales, means + q * scales)
    return bands


@dataclass
class EvalReport:
    """Everything ``compare_ensembles`` measures; None means undefined"""

    n_true: int
    n_fitted: int
    component: int
    diffusion_component: int
    mse: Optional[float]
    r2: Optional[float]
    ks_d: float
    ks_p: float
    mean_true: float
    std_true: float
    mean_fitted: float
    std_fitted: float
    l_emp: float
    l_emp_se: float
    r_emp: Optional[float]
    c_emp: Optional[float]
    l2_distance: Optional[float] = None
    sup_distance: Optional[float] = None
    stability_bound: Optional[float] = None

    def items(self) -> List[Tuple[str, object]]:
        """(key, value) in the fixed report order"""
        return [(f.name, getattr(self, f.name)) for f in fields(self)]


def compare_ensembles(
    endpoints_true,
    endpoints_fit,
    theta_true=None,
    theta_fit=None,
    times=None,
    component: int = 0,
    h_plus: Optional[float] = None,
    diffusion_component: Optional[int] = None,
) -> EvalReport:
    """
    Compare endpoint ensembles from true and fitted parameters.

    Args:
        endpoints_true: X_i(T) simulated with the true Θ
        endpoints_fit: X̂_i(T) simulated with the fitted Θ (same noise per i)
        theta_true: True Θ on ``times``, shape (len,) or (len, s)
        theta_fit: Fitted Θ on ``times``
        times: Grid for the Θ comparison
        component: Θ component used for MSE/R²
        h_plus: One-sided Lipschitz constant; enables the stability bound
        diffusion_component: Θ component holding σ for R_emp; defaults to ``component``

    Returns:
        EvalReport
    """
    a = np.asarray(endpoints_true, dtype=np.float64).ravel()
    b = np.asarray(endpoints_fit, dtype=np.float64).ravel()
    ks_d, ks_p = ks_two_sample(a, b)
    mean_a, std_a = empirical_moments(a)
    mean_b, std_b = empirical_moments(b)
    l_emp_se = l_emp_standard_error(a, b) if a.shape == b.shape else float("nan")
    l_emp = math.sqrt(float(np.mean((a - b) ** 2))) if a.shape == b.shape else float("nan")

    report = EvalReport(
        n_true=a.shape[0],
        n_fitted=b.shape[0],
        component=component,
        diffusion_component=component if diffusion_component is None else diffusion_component,
        mse=None,
        r2=None,
        ks_d=ks_d,
        ks_p=ks_p,
        mean_true=mean_a,
        std_true=std_a,
        mean_fitted=mean_b,
        std_fitted=std_b,
        l_emp=l_emp,
        l_emp_se=l_emp_se,
        r_emp=None,
        c_emp=None,
    )
    if theta_true is None or theta_fit is None:
        return report

    grid_true = np.asarray(theta_true, dtype=np.float64)
    grid_fit = np.asarray(theta_fit, dtype=np.float64)
    if grid_true.ndim == 1:
        grid_true, grid_fit = grid_true[:, None], grid_fit[:, None]
    y, y_hat = grid_true[:, component], grid_fit[:, component]
    report.mse = mse(y, y_hat)
    try:
        report.r2 = r2(y, y_hat)
    except DataError:
        logger.warning("R2 undefined: true component %d is constant", component)
    if a.shape == b.shape:
        sigma = report.diffusion_component
        constants = theorem_constants(a, b, grid_true[:, sigma], grid_fit[:, sigma])
        report.r_emp, report.c_emp = constants.r_emp, constants.c_emp
    if times is not None:
        report.l2_distance = l2_norm(grid_true - grid_fit, times)
        report.sup_distance = sup_norm(grid_true - grid_fit)
        if h_plus is not None:
            report.stability_bound = stability_bound(grid_true, grid_fit, times, h_plus)
    return report
