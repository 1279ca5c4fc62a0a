"""
Simulation
Seeded random streams, Euler-Maruyama paths, ensembles and synthetic regression data
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from .config import Config
from .exceptions import DataError, SimulationError
from .models import RegressionCaseSpec, SdeModelSpec

logger = logging.getLogger(__name__)

# times (k,) -> Θ values (k, s)
ThetaProvider = Callable[[np.ndarray], np.ndarray]


class Rng:
    """
    Counter-based stream ``stream`` of ``seed``.

    Philox keyed by (seed, stream) through SeedSequence, so streams are
    independent and reproducible across platforms. Normals come from
    Box-Muller over pairs of uniforms and are handed out in draw order,
    so several short requests yield the same numbers as one long one.
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        self._generator = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=(self.stream,)))
        )
        self._spare: Optional[float] = None

    def uniform(self, size=None):
        """Uniforms in (0, 1]"""
        return 1.0 - self._generator.random(size)

    def normals(self, count: int) -> np.ndarray:
        """``count`` standard normals in stream order"""
        out = np.empty(count, dtype=np.float64)
        filled = 0
        if count and self._spare is not None:
            out[0] = self._spare
            self._spare = None
            filled = 1
        remaining = count - filled
        if remaining > 0:
            pairs = (remaining + 1) // 2
            u = self.uniform(2 * pairs)
            radius = np.sqrt(-2.0 * np.log(u[0::2]))
            angle = 2.0 * math.pi * u[1::2]
            z = np.empty(2 * pairs, dtype=np.float64)
            z[0::2] = radius * np.cos(angle)
            z[1::2] = radius * np.sin(angle)
            out[filled:] = z[:remaining]
            if 2 * pairs > remaining:
                self._spare = float(z[-1])
        return out


def standard_normal(rng: Rng) -> float:
    """One N(0, 1) draw from ``rng``"""
    return float(rng.normals(1)[0])


@dataclass(frozen=True)
class Trajectory:
    """Observations x_k ∈ ℝᵈ on the uniform grid t_k = k·h"""

    times: np.ndarray
    values: np.ndarray
    h: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "times", np.asarray(self.times, dtype=np.float64))
        if self.times.shape[0] != values.shape[0]:
            raise DataError(f"{self.times.shape[0]} times for {values.shape[0]} observations")
        if self.times.shape[0] < 2:
            raise DataError("a trajectory needs at least two grid points")

    @property
    def n(self) -> int:
        return self.times.shape[0] - 1

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def x(self) -> np.ndarray:
        """First state component as a flat array"""
        return self.values[:, 0]

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def subsample(self, step: int) -> "Trajectory":
        """Every ``step``-th grid point; h becomes step·h"""
        if step < 1:
            raise ValueError("step must be >= 1")
        if step == 1:
            return self
        if self.n % step:
            logger.warning("Subsampling %d transitions by %d drops the tail", self.n, step)
        return Trajectory(self.times[::step], self.values[::step], self.h * step)

    def head(self, n: int) -> "Trajectory":
        """First ``n`` transitions"""
        return Trajectory(self.times[:n + 1], self.values[:n + 1], self.h)


@dataclass(frozen=True)
class RegressionDataset:
    """Observations x_k ∈ ℝ² at t_k = k·2π/n"""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=np.float64))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64).reshape(-1, 2))
        if self.times.shape[0] != self.values.shape[0]:
            raise DataError(f"{self.times.shape[0]} times for {self.values.shape[0]} observations")
        if self.times.shape[0] == 0:
            raise DataError("empty regression dataset")

    @property
    def n(self) -> int:
        return self.times.shape[0]


def _drift_diffusion(model: SdeModelSpec, t: float, state: np.ndarray, theta: Sequence[float]):
    """Drift (paths, d) and diffusion (paths, d, m) for a block of paths"""
    paths = state.shape[0]
    if model.d == 1 and model.m == 1:
        x = state[:, 0]
        a = np.broadcast_to(np.asarray(model.drift(t, x, theta), dtype=np.float64), (paths,))
        b = np.broadcast_to(np.asarray(model.diffusion(t, x, theta), dtype=np.float64), (paths,))
        return a[:, None], b.reshape(paths, 1, 1)
    if model.d == 1:
        x = state[:, 0]
        drift = [model.drift(t, x, theta)]
        diffusion = model.diffusion(t, x, theta)
    else:
        comps = [state[:, i] for i in range(model.d)]
        drift = model.drift(t, comps, theta)
        diffusion = model.diffusion(t, comps, theta)
    a = np.stack([np.broadcast_to(np.asarray(c, dtype=np.float64), (paths,)) for c in drift], axis=-1)
    b = np.stack(
        [
            np.stack([np.broadcast_to(np.asarray(e, dtype=np.float64), (paths,)) for e in row], axis=-1)
            for row in diffusion
        ],
        axis=1,
    )
    return a, b


def _theta_grid(theta_of_t: ThetaProvider, times: np.ndarray, s: int) -> np.ndarray:
    grid = np.asarray(theta_of_t(times), dtype=np.float64).reshape(times.shape[0], -1)
    if grid.shape[1] != s:
        raise DataError(f"parameter provider returned {grid.shape[1]} components, model expects {s}")
    return grid


def _run_block(
    model: SdeModelSpec,
    theta_grid: np.ndarray,
    x0: np.ndarray,
    h: float,
    noise: np.ndarray,
    first_index: Optional[int],
    keep_paths: bool,
):
    """
    Euler recursion for a block of paths driven by ``noise`` (paths, n, m).

    Returns:
        (paths, n+1, d) when ``keep_paths`` else the endpoints (paths, d)
    """
    paths, n, _ = noise.shape
    limit = Config.OVERFLOW_LIMIT
    sqrt_h = math.sqrt(h)
    state = np.tile(x0, (paths, 1))
    history = np.empty((paths, n + 1, model.d), dtype=np.float64) if keep_paths else None
    if keep_paths:
        history[:, 0, :] = state
    for k in range(n):
        t = k * h
        a, b = _drift_diffusion(model, t, state, theta_grid[k])
        dw = sqrt_h * noise[:, k, :]
        state = state + a * h + np.einsum("pij,pj->pi", b, dw)
        bad = ~np.isfinite(state) | (np.abs(state) > limit)
        if bad.any():
            where = int(np.argmax(bad.any(axis=1)))
            raise SimulationError(
                "state left the finite range",
                step=k + 1,
                trajectory=None if first_index is None else first_index + where,
            )
        if keep_paths:
            history[:, k + 1, :] = state
    return history if keep_paths else state


def euler_path(
    model: SdeModelSpec,
    theta_of_t: ThetaProvider,
    x0,
    T: float,
    n: int,
    rng: Rng,
) -> Trajectory:
    """
    One Euler-Maruyama path x_{k+1} = x_k + a·h + b·√h·Z_k.

    Args:
        model: SDE definition
        theta_of_t: Parameter provider, true Θ or a fitted network
        x0: Initial state
        T: Horizon
        n: Number of steps (h = T/n)
        rng: Noise stream

    Returns:
        Trajectory with n+1 grid points

    Raises:
        SimulationError: Non-finite state or |x| above the overflow limit
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    h = T / n
    times = np.arange(n + 1, dtype=np.float64) * h
    theta_grid = _theta_grid(theta_of_t, times, model.s)
    noise = rng.normals(n * model.m).reshape(1, n, model.m)
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    values = _run_block(model, theta_grid, x0, h, noise, None, keep_paths=True)[0]
    return Trajectory(times, values, h)


def _ensemble_blocks(model, theta_of_t, x0, T, n, N, seed, keep_paths):
    if N < 1:
        raise ValueError("N must be >= 1")
    if n < 1:
        raise ValueError("n must be >= 1")
    h = T / n
    times = np.arange(n + 1, dtype=np.float64) * h
    theta_grid = _theta_grid(theta_of_t, times, model.s)
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    chunk = max(1, Config.ENSEMBLE_CHUNK_SIZE)
    logger.debug("Simulating %d paths of %d steps in blocks of %d", N, n, chunk)
    for start in range(0, N, chunk):
        stop = min(N, start + chunk)
        noise = np.stack([Rng(seed, i).normals(n * model.m).reshape(n, model.m) for i in range(start, stop)])
        yield times, h, _run_block(model, theta_grid, x0, h, noise, start, keep_paths)


def ensemble(model: SdeModelSpec, theta_of_t: ThetaProvider, x0, T: float, n: int, N: int, seed: int) -> List[Trajectory]:
    """
    N independent paths; path i is driven by stream i of ``seed``.

    The same seed drives two parameter providers with common random numbers.
    """
    paths: List[Trajectory] = []
    for times, h, block in _ensemble_blocks(model, theta_of_t, x0, T, n, N, seed, keep_paths=True):
        paths.extend(Trajectory(times, values, h) for values in block)
    return paths


def ensemble_endpoints(model: SdeModelSpec, theta_of_t: ThetaProvider, x0, T: float, n: int, N: int, seed: int) -> np.ndarray:
    """X_i(T) for the same paths ``ensemble`` would produce, shape (N, d)"""
    blocks = [block for _, _, block in _ensemble_blocks(model, theta_of_t, x0, T, n, N, seed, keep_paths=False)]
    return np.concatenate(blocks, axis=0)


def _correlated_pairs(times, m1, m2, s11, s12, s22, rng: Rng, label: str) -> RegressionDataset:
    bad = (s11 < 0.0) | (s22 < 0.0) | (s12 * s12 > s11 * s22 * (1.0 + 1e-12))
    if np.any(bad):
        k = int(np.argmax(bad))
        raise DataError(f"covariance of {label} is not positive definite at t_{k}={times[k]!r}")
    l11 = np.sqrt(s11)
    with np.errstate(divide="ignore", invalid="ignore"):
        l21 = np.where(l11 > 0.0, s12 / l11, 0.0)
    l22 = np.sqrt(np.maximum(s22 - l21 * l21, 0.0))
    z = rng.normals(2 * times.shape[0]).reshape(times.shape[0], 2)
    x1 = m1 + l11 * z[:, 0]
    x2 = m2 + l21 * z[:, 0] + l22 * z[:, 1]
    return RegressionDataset(times, np.column_stack([x1, x2]))


def regression_sample(case: RegressionCaseSpec, rng: Rng) -> RegressionDataset:
    """
    x_k = μ(t_k) + ε_k with ε₁ = L₁₁Z₁, ε₂ = L₂₁Z₁ + L₂₂Z₂ (Cholesky of Σ(t_k)).

    Raises:
        DataError: Σ(t_k) not positive semi-definite
    """
    times = case.times()
    m1, m2 = case.means(times)
    s11, s12, s22 = case.covariance(times)
    return _correlated_pairs(times, m1, m2, s11, s12, s22, rng, f"case {case.name!r}")


def regression_sample_theta(times, theta_grid, rng: Rng) -> RegressionDataset:
    """
    Same sampler driven by a Θ grid [μ₁, μ₂, σ₁, σ₂, ρ] (fitted or true).

    With the same ``rng`` seed as ``regression_sample`` both draw identical Z.
    """
    times = np.asarray(times, dtype=np.float64)
    theta = np.asarray(theta_grid, dtype=np.float64).reshape(times.shape[0], 5)
    sd1, sd2 = np.abs(theta[:, 2]), np.abs(theta[:, 3])
    rho = np.clip(theta[:, 4], -1.0, 1.0)
    return _correlated_pairs(times, theta[:, 0], theta[:, 1], sd1 ** 2, rho * sd1 * sd2, sd2 ** 2, rng, "fitted parameters")
