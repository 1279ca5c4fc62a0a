"""
Calibration Orchestrator
Coordinates the simulate -> train -> forecast -> evaluate -> plot workflow for TimeCal
"""

import logging
import os
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from . import file_io
from .config import Config
from .evaluate import compare_ensembles, histogram_points, qq_points, regression_bands
from .exceptions import CalibrationError, DataError, exit_code_for
from .forecast import interval_quantile, mc_forecast
from .likelihood import RegressionObjective, SdeObjective
from .models import ModelSpec, RegressionCaseSpec, SdeModelSpec, diffusion_index, load_model_file, resolve_model
from .neuralnet import MlpSpec, default_spec, network_provider, theta_on_grid
from .simulate import Rng, ensemble_endpoints, euler_path, regression_sample, regression_sample_theta
from .svg_chart import SvgChartGenerator
from .train import TrainConfig, fit_network

logger = logging.getLogger(__name__)

BAND_LEVELS = (0.68, 0.95)
DEFAULT_FORECAST_STEPS = 500
# noise stream of forecasts, apart from the per-path ensemble streams
FORECAST_STREAM = 2 ** 31
# paths per model drawn in the true-vs-fitted path chart
COMPARISON_PATHS = 3
# pipeline evaluation runs on seed + offset, apart from the observed noise
EVALUATION_SEED_OFFSET = 1


class CalibrationOrchestrator:
    """
    Runs the calibration workflow:
    1. Simulate observations from the true parameters
    2. Train the parameter network on the observations
    3. Forecast with prediction intervals
    4. Evaluate fitted against true ensembles
    5. Plot every artifact as SVG

    Each step raises on failure; ``run_pipeline`` chains them and reports
    the outcome as a dictionary.
    """

    def __init__(self, output_dir: Optional[str] = None, theme: str = "default"):
        self.output_dir = output_dir or Config.OUTPUT_DIR
        self.chart_generator = SvgChartGenerator(theme)
        self.artifact_reader = file_io.ArtifactReader()

    # -- problem lookup -------------------------------------------------------

    @staticmethod
    def resolve(name: Optional[str] = None, model_file: Optional[str] = None) -> ModelSpec:
        """SDE model or regression case by name, or a user model loaded from ``model_file``"""
        if model_file:
            return load_model_file(model_file)
        if not name:
            raise DataError("no model, case or model file given")
        return resolve_model(name)

    def _path(self, output_dir: Optional[str], filename: str) -> str:
        return os.path.join(output_dir or self.output_dir, filename)

    # -- Step 1 ---------------------------------------------------------------

    def simulate(
        self,
        problem: ModelSpec,
        seed: int,
        output_path: Optional[str] = None,
        subsample: int = 1,
        n_steps: Optional[int] = None,
    ) -> Dict[str, Any]:
        """
        Synthetic observations with the true parameter function.

        Args:
            problem: SDE model or regression case
            seed: Noise seed (stream 0)
            output_path: CSV destination
            subsample: Keep every ``subsample``-th grid point of an SDE path
            n_steps: Override the model's number of Euler steps

        Returns:
            Dictionary with the path and the n/h/T summary
        """
        rng = Rng(seed, 0)
        if isinstance(problem, RegressionCaseSpec):
            data = regression_sample(problem, rng)
            path = output_path or self._path(None, f"{problem.name}_dataset.csv")
            file_io.write_dataset(path, data)
            h = problem.T / problem.n
            logger.info("Sampled %d regression points for %s", data.n, problem.name)
            return {"path": path, "kind": "dataset", "n": data.n, "h": h, "T": problem.T}

        n = n_steps or problem.n
        traj = euler_path(problem, problem.theta_true, problem.initial_state, problem.T, n, rng)
        traj = traj.subsample(subsample)
        path = output_path or self._path(None, f"{problem.name}_trajectory.csv")
        file_io.write_trajectory(path, traj)
        logger.info("Simulated %s: %d transitions, h=%g", problem.name, traj.n, traj.h)
        return {"path": path, "kind": "trajectory", "n": traj.n, "h": traj.h, "T": traj.T}

    # -- Step 2 ---------------------------------------------------------------

    def train(
        self,
        problem: ModelSpec,
        input_path: str,
        train_config: TrainConfig,
        output_dir: Optional[str] = None,
        hidden_width: int = Config.HIDDEN_WIDTH,
        hidden_layers: int = Config.HIDDEN_LAYERS,
        separate_heads: bool = False,
    ) -> Dict[str, Any]:
        """
        Fit Θ(t, w) to the observations in ``input_path``.

        Writes ``weights.txt``, ``loss_history.csv`` and ``theta.csv`` (fitted
        and, when known, true Θ on the training grid).
        """
        if isinstance(problem, RegressionCaseSpec):
            objective = RegressionObjective(file_io.read_dataset(input_path))
            horizon = problem.T
        else:
            traj = file_io.read_trajectory(input_path)
            objective = SdeObjective(problem, traj)
            horizon = traj.T
        spec = default_spec(
            problem.heads,
            hidden_width=hidden_width,
            hidden_layers=hidden_layers,
            horizon=horizon,
            separate_heads=separate_heads,
        )
        logger.info("Network %s with %d weights, %d loss terms", spec.layer_widths, spec.n_parameters, objective.n_terms)

        out = output_dir or self.output_dir
        if train_config.checkpoint_every and not train_config.checkpoint_dir:
            train_config = train_config.model_copy(update={"checkpoint_dir": os.path.join(out, "checkpoints")})
        result = fit_network(spec, objective, train_config)

        weights_path = file_io.write_weights(os.path.join(out, "weights.txt"), spec, result.weights)
        loss_path = file_io.write_loss_history(
            os.path.join(out, "loss_history.csv"), result.loss_history, result.val_loss_history
        )
        times = objective.times
        theta_fit = theta_on_grid(spec, result.weights, times)
        theta_true = self._true_theta(problem, times)
        theta_path = file_io.write_theta_grid(os.path.join(out, "theta.csv"), times, theta_true, theta_fit)
        return {
            "weights_path": weights_path,
            "loss_path": loss_path,
            "theta_path": theta_path,
            "epochs_run": result.epochs_run,
            "final_loss": result.loss_history[-1],
            "best_epoch": result.best_epoch,
            "checkpoints": result.checkpoints,
        }

    @staticmethod
    def _true_theta(problem: ModelSpec, times: np.ndarray) -> Optional[np.ndarray]:
        if isinstance(problem, SdeModelSpec) and problem.true_theta is None:
            return None
        return problem.theta_true(times)

    @staticmethod
    def _load_network(problem: ModelSpec, weights_path: str) -> Tuple[MlpSpec, np.ndarray]:
        spec, weights = file_io.read_weights(weights_path)
        if spec.n_outputs != problem.s:
            raise DataError(f"weights have {spec.n_outputs} outputs, {problem.name!r} needs s={problem.s}")
        return spec, weights

    # -- Step 3 ---------------------------------------------------------------

    def forecast(
        self,
        problem: ModelSpec,
        weights_path: str,
        input_path: str,
        seed: int,
        alpha: float = Config.INTERVAL_LEVEL,
        steps: Optional[int] = None,
        start_index: int = 0,
        carrier: str = "single",
        n_carriers: int = 100,
        output_path: Optional[str] = None,
    ) -> Dict[str, Any]:
        """
        Monte Carlo forecast from observation ``start_index`` of a trajectory.

        Coverage is the share of the following observations inside the intervals.
        """
        if not isinstance(problem, SdeModelSpec):
            raise DataError("forecasting needs an SDE model, not a regression case")
        spec, weights = self._load_network(problem, weights_path)
        traj = file_io.read_trajectory(input_path)
        if not 0 <= start_index < traj.n:
            raise DataError(f"start index {start_index} outside 0..{traj.n - 1}")
        steps = steps or min(DEFAULT_FORECAST_STEPS, traj.n - start_index)
        result = mc_forecast(
            problem,
            network_provider(spec, weights),
            float(traj.x[start_index]),
            steps,
            traj.h,
            alpha,
            Rng(seed, FORECAST_STREAM),
            t_start=float(traj.times[start_index]),
            carrier=carrier,
            n_carriers=n_carriers,
        )
        path = output_path or self._path(None, "forecast.csv")
        file_io.write_forecast(path, result)

        realised = traj.x[start_index + 1:start_index + 1 + steps]
        inside = (realised >= result.lower[:realised.shape[0]]) & (realised <= result.upper[:realised.shape[0]])
        coverage = float(inside.mean()) if realised.shape[0] else None
        logger.info("Forecast %d steps, q=%.6f, coverage %s", steps, result.quantile, coverage)
        return {"path": path, "steps": steps, "quantile": result.quantile, "coverage": coverage}

    # -- Step 4 ---------------------------------------------------------------

    def evaluate(
        self,
        problem: ModelSpec,
        seed: int,
        weights_path: Optional[str] = None,
        ensemble_size: int = Config.ENSEMBLE_SIZE,
        n_steps: Optional[int] = None,
        component: int = 0,
        h_plus: Optional[float] = None,
        bins: int = Config.HISTOGRAM_BINS,
        output_dir: Optional[str] = None,
    ) -> Dict[str, Any]:
        """
        Compare samples from the true Θ with samples from the fitted Θ.

        Both runs share their noise (same seed, same stream per path). Without
        ``weights_path`` the true Θ is compared with itself. ``component`` picks
        the Θ column for MSE/R²; R_emp always uses the volatility column. SDE
        models also get ``paths.csv`` with the first few path pairs.
        """
        out = output_dir or self.output_dir
        if weights_path:
            spec, weights = self._load_network(problem, weights_path)
            fitted = network_provider(spec, weights)
        else:
            logger.info("No weights given: comparing the true parameters with themselves")
            fitted = problem.theta_true

        if isinstance(problem, RegressionCaseSpec):
            times = problem.times()
            true_data = regression_sample(problem, Rng(seed, 0))
            fit_data = regression_sample_theta(times, fitted(times), Rng(seed, 0))
            samples_true, samples_fit = true_data.values[:, 0], fit_data.values[:, 0]
            paths_path = None
        else:
            n = n_steps or problem.n
            times = np.arange(n + 1, dtype=np.float64) * (problem.T / n)
            args = (problem.initial_state, problem.T, n, ensemble_size, seed)
            samples_true = ensemble_endpoints(problem, problem.theta_true, *args)[:, 0]
            samples_fit = ensemble_endpoints(problem, fitted, *args)[:, 0]
            paths_path = self._write_path_pairs(problem, fitted, n, min(COMPARISON_PATHS, ensemble_size), seed, out)

        report = compare_ensembles(
            samples_true,
            samples_fit,
            theta_true=problem.theta_true(times),
            theta_fit=fitted(times),
            times=times,
            component=component,
            h_plus=h_plus,
            diffusion_component=diffusion_index(problem),
        )
        report_path = file_io.write_report(os.path.join(out, "report.txt"), report)
        qq_path = file_io.write_qq(os.path.join(out, "qq.csv"), qq_points(samples_true, samples_fit))
        hist_path = file_io.write_histogram(
            os.path.join(out, "histogram.csv"), histogram_points(samples_true, samples_fit, bins)
        )
        logger.info("KS D=%.4g p=%.4g, L_emp=%.4g", report.ks_d, report.ks_p, report.l_emp)
        return {
            "report_path": report_path,
            "qq_path": qq_path,
            "histogram_path": hist_path,
            "paths_path": paths_path,
            "report": report,
        }

    @staticmethod
    def _write_path_pairs(problem: SdeModelSpec, fitted, n: int, count: int, seed: int, out: str) -> str:
        args = (problem.initial_state, problem.T, n)
        true_paths = [euler_path(problem, problem.theta_true, *args, Rng(seed, i)).x for i in range(count)]
        fit_paths = [euler_path(problem, fitted, *args, Rng(seed, i)).x for i in range(count)]
        times = np.arange(n + 1, dtype=np.float64) * (problem.T / n)
        return file_io.write_paths(os.path.join(out, "paths.csv"), times, np.array(true_paths), np.array(fit_paths))

    # -- Step 5 ---------------------------------------------------------------

    def plot(
        self,
        input_path: str,
        output_path: Optional[str] = None,
        kind: Optional[str] = None,
        component: int = 1,
        observed_path: Optional[str] = None,
    ) -> Dict[str, Any]:
        """
        Render one artifact as SVG.

        Args:
            input_path: theta, paths, forecast, histogram, qq or loss CSV
            output_path: SVG destination (defaults to the input name with .svg)
            kind: Artifact kind; detected from the header when omitted
            component: 1-based Θ component for theta plots
            observed_path: Trajectory or dataset drawn against forecast/regression bands
        """
        kind = kind or self.artifact_reader.detect_kind(input_path)
        content = self.artifact_reader.read(input_path, kind)
        chart = self.chart_generator

        if kind == "theta":
            if observed_path and "fitted_5" in content.columns:
                svg = self._regression_band_chart(content, observed_path, component)
            else:
                column = f"fitted_{component}"
                if column not in content.columns:
                    raise DataError(f"{input_path} has no component {component}")
                true_column = f"true_{component}"
                svg = chart.theta_comparison(
                    content["t"].to_numpy(),
                    content[true_column].to_numpy() if true_column in content.columns else None,
                    content[column].to_numpy(),
                    y_label=f"theta_{component}(t)",
                )
        elif kind == "paths":
            count = sum(1 for column in content.columns if column.endswith("_true"))
            svg = chart.trajectory_comparison(
                content["t"].to_numpy(),
                np.array([content[f"path_{i}_true"].to_numpy() for i in range(1, count + 1)]),
                np.array([content[f"path_{i}_fitted"].to_numpy() for i in range(1, count + 1)]),
            )
        elif kind == "forecast":
            svg = self._forecast_chart(content, observed_path)
        elif kind == "histogram":
            svg = chart.histogram_overlay(content)
        elif kind == "qq":
            svg = chart.qq_scatter(content)
        elif kind == "loss":
            val = content["val_loss"].to_numpy() if "val_loss" in content.columns else None
            svg = chart.loss_curve(content["epoch"].to_numpy(), content["loss"].to_numpy(), val)
        else:
            raise DataError(f"cannot plot a {kind} artifact")

        output_path = output_path or os.path.splitext(input_path)[0] + ".svg"
        chart.save(svg, output_path)
        return {"path": output_path, "kind": kind}

    def _forecast_chart(self, frame: pd.DataFrame, observed_path: Optional[str]) -> str:
        times = frame["t"].to_numpy()
        centers, scales = frame["center"].to_numpy(), frame["scale"].to_numpy()
        bands = {}
        for level in BAND_LEVELS:
            q = interval_quantile(level)
            bands[level] = (centers - q * scales, centers + q * scales)
        observed = None
        if observed_path:
            traj = file_io.read_trajectory(observed_path)
            observed = np.interp(times, traj.times, traj.x)
        return self.chart_generator.trajectory_bands(
            times, observed, frame["prediction"].to_numpy(), bands, title="Forecast with 68% and 95% intervals"
        )

    def _regression_band_chart(self, frame: pd.DataFrame, observed_path: str, component: int) -> str:
        if component not in (1, 2):
            raise DataError("regression bands exist for components 1 and 2")
        theta = frame[[f"fitted_{j}" for j in range(1, 6)]].to_numpy()
        data = file_io.read_dataset(observed_path)
        times = frame["t"].to_numpy()
        bands = {
            level: (lower[:, component - 1], upper[:, component - 1])
            for level, (lower, upper) in regression_bands(theta, BAND_LEVELS).items()
        }
        observed = np.interp(times, data.times, data.values[:, component - 1])
        return self.chart_generator.trajectory_bands(
            times, observed, theta[:, component - 1], bands, title=f"Regression x{component} with 68% and 95% bands"
        )

    # -- whole workflow -------------------------------------------------------

    def run_pipeline(
        self,
        problem: ModelSpec,
        seed: int,
        train_config: TrainConfig,
        subsample: int = 1,
        alpha: float = Config.INTERVAL_LEVEL,
        ensemble_size: int = Config.ENSEMBLE_SIZE,
        hidden_width: int = Config.HIDDEN_WIDTH,
        hidden_layers: int = Config.HIDDEN_LAYERS,
        separate_heads: bool = False,
        forecast_steps: Optional[int] = None,
        h_plus: Optional[float] = None,
    ) -> Dict[str, Any]:
        """
        Run every step into ``self.output_dir``.

        Returns:
            Dictionary with ``success``, the artifacts written and, on failure,
            ``error`` and ``exit_code``
        """
        out = self.output_dir
        artifacts: Dict[str, str] = {}
        steps: Dict[str, str] = {}
        try:
            logger.info("Step 1: Simulating observations for %s...", problem.name)
            filename = "dataset.csv" if isinstance(problem, RegressionCaseSpec) else "trajectory.csv"
            simulated = self.simulate(problem, seed, os.path.join(out, filename), subsample=subsample)
            artifacts["observations"] = simulated["path"]
            steps["simulate"] = "completed"

            logger.info("Step 2: Training the parameter network...")
            trained = self.train(
                problem, simulated["path"], train_config, out, hidden_width, hidden_layers, separate_heads
            )
            artifacts.update(weights=trained["weights_path"], loss=trained["loss_path"], theta=trained["theta_path"])
            steps["train"] = "completed"

            if isinstance(problem, SdeModelSpec) and problem.d == 1 and problem.m == 1:
                logger.info("Step 3: Forecasting with %.0f%% intervals...", 100 * alpha)
                forecasted = self.forecast(
                    problem, trained["weights_path"], simulated["path"], seed, alpha, forecast_steps,
                    output_path=os.path.join(out, "forecast.csv"),
                )
                artifacts["forecast"] = forecasted["path"]
                steps["forecast"] = "completed"
            else:
                steps["forecast"] = "skipped"

            logger.info("Step 4: Evaluating fitted against true ensembles...")
            n_steps = None if isinstance(problem, RegressionCaseSpec) else simulated["n"]
            evaluated = self.evaluate(
                problem, seed + EVALUATION_SEED_OFFSET, trained["weights_path"], ensemble_size, n_steps,
                h_plus=h_plus, output_dir=out,
            )
            artifacts.update(
                report=evaluated["report_path"], qq=evaluated["qq_path"], histogram=evaluated["histogram_path"]
            )
            if evaluated["paths_path"]:
                artifacts["paths"] = evaluated["paths_path"]
            steps["evaluate"] = "completed"

            logger.info("Step 5: Plotting...")
            for name in ("theta", "paths", "loss", "qq", "histogram", "forecast"):
                if name in artifacts:
                    observed = simulated["path"] if name == "forecast" else None
                    artifacts[f"{name}_svg"] = self.plot(artifacts[name], observed_path=observed)["path"]
            if isinstance(problem, RegressionCaseSpec):
                for component in (1, 2):
                    artifacts[f"bands_x{component}_svg"] = self.plot(
                        artifacts["theta"], os.path.join(out, f"bands_x{component}.svg"), "theta", component,
                        simulated["path"],
                    )["path"]
            steps["plot"] = "completed"

            return {
                "success": True,
                "model": problem.name,
                "artifacts": artifacts,
                "report": evaluated["report"],
                "processing_steps": steps,
            }
        except CalibrationError as e:
            logger.error("Pipeline failed: %s", e)
            return {
                "success": False,
                "error": str(e),
                "exit_code": exit_code_for(e),
                "artifacts": artifacts,
                "processing_steps": steps,
            }
