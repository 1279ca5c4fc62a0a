"""
Artifact Files
Reading and writing trajectories, datasets, weights, forecasts and reports
"""

import logging
import os
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .evaluate import EvalReport
from .exceptions import ConfigurationError, DataError
from .forecast import Forecast
from .neuralnet import HeadKind, MlpSpec
from .simulate import RegressionDataset, Trajectory

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
WEIGHTS_FORMAT_VERSION = 1
UNDEFINED = "undefined"


def _g(value: float) -> str:
    return format(float(value), ".17g")


def _write_frame(path: str, frame: pd.DataFrame) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.debug("Wrote %s (%d rows)", path, len(frame))
    return path


def _read_frame(path: str, required: Sequence[str]) -> pd.DataFrame:
    if not os.path.isfile(path):
        raise DataError(f"file not found: {path}")
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"cannot parse {path}: {e}") from e
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DataError(f"{path} lacks columns {missing}; found {list(frame.columns)}")
    if frame.empty:
        raise DataError(f"{path} has no rows")
    return frame


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------


def write_trajectory(path: str, traj: Trajectory) -> str:
    """Header ``t,x1[,x2...]``, one row per grid point"""
    columns = {"t": traj.times}
    for i in range(traj.d):
        columns[f"x{i + 1}"] = traj.values[:, i]
    return _write_frame(path, pd.DataFrame(columns))


def read_trajectory(path: str) -> Trajectory:
    """
    Load a trajectory CSV.

    Raises:
        DataError: Missing columns, non-finite values or a non-uniform grid
    """
    frame = _read_frame(path, ["t", "x1"])
    state_columns = sorted((c for c in frame.columns if c.startswith("x")), key=lambda c: int(c[1:]))
    times = frame["t"].to_numpy(dtype=np.float64)
    values = frame[state_columns].to_numpy(dtype=np.float64)
    if times.shape[0] < 2:
        raise DataError(f"{path} needs at least two grid points")
    if not np.all(np.isfinite(values)) or not np.all(np.isfinite(times)):
        raise DataError(f"{path} contains non-finite values")
    steps = np.diff(times)
    h = float(times[-1] - times[0]) / (times.shape[0] - 1)
    if np.any(steps <= 0.0) or np.max(np.abs(steps - h)) > 1e-9 * max(1.0, abs(times[-1])):
        raise DataError(f"{path} does not hold a uniform increasing time grid")
    return Trajectory(times, values, h)


def write_dataset(path: str, data: RegressionDataset) -> str:
    """Header ``t,x1,x2``"""
    return _write_frame(path, pd.DataFrame({"t": data.times, "x1": data.values[:, 0], "x2": data.values[:, 1]}))


def read_dataset(path: str) -> RegressionDataset:
    frame = _read_frame(path, ["t", "x1", "x2"])
    values = frame[["x1", "x2"]].to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path} contains non-finite values")
    return RegressionDataset(frame["t"].to_numpy(dtype=np.float64), values)


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------


def weights_header(spec: MlpSpec) -> List[str]:
    return [
        f"format={WEIGHTS_FORMAT_VERSION}",
        "layer_widths=" + ",".join(str(w) for w in spec.layer_widths),
        "heads=" + ",".join(h.value for h in spec.heads),
        f"input_shift={_g(spec.input_shift)},input_scale={_g(spec.input_scale)},"
        f"separate_heads={int(spec.separate_heads)}",
    ]


def write_weights(path: str, spec: MlpSpec, weights: np.ndarray) -> str:
    """Versioned header followed by one value per line in layer-layout order"""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (spec.n_parameters,):
        raise DataError(f"expected {spec.n_parameters} weights, got {weights.shape}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    lines = weights_header(spec) + [_g(v) for v in weights]
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")
    return path


def _header_value(line: str, key: str, number: int) -> str:
    prefix = key + "="
    if not line.startswith(prefix):
        raise ConfigurationError(f"weights header line {number}: expected '{prefix}...', got {line!r}")
    return line[len(prefix):]


def read_weights(path: str) -> Tuple[MlpSpec, np.ndarray]:
    """
    Load a weights file.

    Raises:
        ConfigurationError: Header deviation, naming the offending line
        DataError: Missing file or a body that does not match the header
    """
    if not os.path.isfile(path):
        raise DataError(f"weights file not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        lines = [line.strip() for line in handle.read().splitlines()]
    if len(lines) < 4:
        raise ConfigurationError(f"weights header line {len(lines) + 1}: file ends inside the header")

    version = _header_value(lines[0], "format", 1)
    if version != str(WEIGHTS_FORMAT_VERSION):
        raise ConfigurationError(f"weights header line 1: unsupported format {version!r}")
    try:
        widths = tuple(int(w) for w in _header_value(lines[1], "layer_widths", 2).split(","))
    except ValueError as e:
        raise ConfigurationError(f"weights header line 2: {e}") from e
    try:
        heads = tuple(HeadKind(h) for h in _header_value(lines[2], "heads", 3).split(","))
    except ValueError as e:
        raise ConfigurationError(f"weights header line 3: {e}") from e
    fields = {}
    for item in lines[3].split(","):
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"weights header line 4: malformed entry {item!r}")
        fields[key] = value
    try:
        spec = MlpSpec(
            layer_widths=widths,
            heads=heads,
            input_shift=float(fields["input_shift"]),
            input_scale=float(fields["input_scale"]),
            separate_heads=bool(int(fields.get("separate_heads", "0"))),
        )
    except KeyError as e:
        raise ConfigurationError(f"weights header line 4: missing {e.args[0]}") from e
    except ValueError as e:
        raise ConfigurationError(f"weights header: {e}") from e

    body = [line for line in lines[4:] if line]
    try:
        weights = np.array([float(v) for v in body], dtype=np.float64)
    except ValueError as e:
        raise DataError(f"{path}: non-numeric weight value ({e})") from e
    if weights.shape[0] != spec.n_parameters:
        raise DataError(f"{path}: {weights.shape[0]} weights for an architecture with {spec.n_parameters}")
    return spec, weights


def write_checkpoint(path: str, spec: MlpSpec, weights: np.ndarray, epoch: int, loss: float) -> str:
    """Weights file plus ``<path>.meta`` holding ``epoch=<e>,loss=<l>``"""
    write_weights(path, spec, weights)
    with open(path + ".meta", "w", encoding="utf-8", newline="\n") as handle:
        handle.write(f"epoch={epoch},loss={_g(loss)}\n")
    return path


def read_checkpoint_meta(path: str) -> Dict[str, float]:
    meta_path = path if path.endswith(".meta") else path + ".meta"
    with open(meta_path, "r", encoding="utf-8") as handle:
        line = handle.readline().strip()
    try:
        entries = dict(item.split("=", 1) for item in line.split(","))
        return {"epoch": int(entries["epoch"]), "loss": float(entries["loss"])}
    except (KeyError, ValueError) as e:
        raise ConfigurationError(f"malformed checkpoint metadata in {meta_path}: {line!r}") from e


# ---------------------------------------------------------------------------
# Training, forecast and evaluation outputs
# ---------------------------------------------------------------------------


def write_loss_history(path: str, history: Sequence[float], val_history: Optional[Sequence[float]] = None) -> str:
    """``epoch,loss[,val_loss]``, epochs counted from 1"""
    columns = {"epoch": np.arange(1, len(history) + 1, dtype=np.int64), "loss": np.asarray(history, dtype=np.float64)}
    if val_history is not None:
        columns["val_loss"] = np.asarray(val_history, dtype=np.float64)
    return _write_frame(path, pd.DataFrame(columns))


def read_loss_history(path: str) -> pd.DataFrame:
    return _read_frame(path, ["epoch", "loss"])


def write_forecast(path: str, forecast: Forecast) -> str:
    """``k,t,prediction,lower,upper,center,scale``"""
    frame = pd.DataFrame(
        {
            "k": np.arange(1, forecast.steps + 1, dtype=np.int64),
            "t": forecast.times,
            "prediction": forecast.predictions,
            "lower": forecast.lower,
            "upper": forecast.upper,
            "center": forecast.centers,
            "scale": forecast.scales,
        }
    )
    return _write_frame(path, frame)


def read_forecast(path: str) -> pd.DataFrame:
    return _read_frame(path, ["k", "t", "prediction", "lower", "upper", "center", "scale"])


def write_theta_grid(path: str, times: np.ndarray, theta_true: Optional[np.ndarray], theta_fit: np.ndarray) -> str:
    """``t,fitted_1..s[,true_1..s]`` on a time grid"""
    theta_fit = np.asarray(theta_fit, dtype=np.float64).reshape(len(times), -1)
    columns = {"t": np.asarray(times, dtype=np.float64)}
    for j in range(theta_fit.shape[1]):
        columns[f"fitted_{j + 1}"] = theta_fit[:, j]
    if theta_true is not None:
        theta_true = np.asarray(theta_true, dtype=np.float64).reshape(len(times), -1)
        for j in range(theta_true.shape[1]):
            columns[f"true_{j + 1}"] = theta_true[:, j]
    return _write_frame(path, pd.DataFrame(columns))


def read_theta_grid(path: str) -> pd.DataFrame:
    return _read_frame(path, ["t", "fitted_1"])


def write_paths(path: str, times: np.ndarray, paths_true: np.ndarray, paths_fit: np.ndarray) -> str:
    """``t,path_i_true,path_i_fitted`` for paths sharing their noise, arrays of shape (paths, len)"""
    paths_true = np.atleast_2d(np.asarray(paths_true, dtype=np.float64))
    paths_fit = np.atleast_2d(np.asarray(paths_fit, dtype=np.float64))
    if paths_true.shape != paths_fit.shape or paths_true.shape[1] != len(times):
        raise DataError(f"path arrays {paths_true.shape} and {paths_fit.shape} do not match {len(times)} times")
    columns = {"t": np.asarray(times, dtype=np.float64)}
    for i in range(paths_true.shape[0]):
        columns[f"path_{i + 1}_true"] = paths_true[i]
        columns[f"path_{i + 1}_fitted"] = paths_fit[i]
    return _write_frame(path, pd.DataFrame(columns))


def read_paths(path: str) -> pd.DataFrame:
    return _read_frame(path, ["t", "path_1_true", "path_1_fitted"])


def write_qq(path: str, points: np.ndarray) -> str:
    points = np.asarray(points, dtype=np.float64)
    return _write_frame(path, pd.DataFrame({"true": points[:, 0], "fitted": points[:, 1]}))


def read_qq(path: str) -> np.ndarray:
    return _read_frame(path, ["true", "fitted"])[["true", "fitted"]].to_numpy(dtype=np.float64)


def write_histogram(path: str, rows: np.ndarray) -> str:
    rows = np.asarray(rows, dtype=np.float64)
    frame = pd.DataFrame(
        {
            "bin_left": rows[:, 0],
            "bin_right": rows[:, 1],
            "count_true": rows[:, 2].astype(np.int64),
            "count_fitted": rows[:, 3].astype(np.int64),
        }
    )
    return _write_frame(path, frame)


def read_histogram(path: str) -> np.ndarray:
    frame = _read_frame(path, ["bin_left", "bin_right", "count_true", "count_fitted"])
    return frame[["bin_left", "bin_right", "count_true", "count_fitted"]].to_numpy(dtype=np.float64)


def _format_value(value) -> str:
    if value is None:
        return UNDEFINED
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float) and np.isnan(value):
        return UNDEFINED
    return _g(value)


def write_report(path: str, report: EvalReport) -> str:
    """``key=value`` lines in fixed order; None/NaN become ``undefined``"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for key, value in report.items():
            handle.write(f"{key}={_format_value(value)}\n")
    return path


def read_report(path: str) -> Dict[str, Optional[float]]:
    if not os.path.isfile(path):
        raise DataError(f"report not found: {path}")
    report: Dict[str, Optional[float]] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise DataError(f"{path} line {number}: expected key=value, got {line!r}")
            report[key] = None if value == UNDEFINED else float(value)
    return report


class ArtifactReader:
    """Recognises TimeCal artifacts by their header and loads them"""

    def __init__(self):
        self.supported_formats = {
            "trajectory": ("t", "x1"),
            "dataset": ("t", "x1", "x2"),
            "theta": ("t", "fitted_1"),
            "paths": ("t", "path_1_true", "path_1_fitted"),
            "forecast": ("k", "t", "prediction", "lower", "upper", "center", "scale"),
            "loss": ("epoch", "loss"),
            "qq": ("true", "fitted"),
            "histogram": ("bin_left", "bin_right", "count_true", "count_fitted"),
        }

    def detect_kind(self, file_path: str) -> str:
        """
        Artifact kind of a file

        Args:
            file_path: Path to a CSV artifact or a weights/report text file

        Returns:
            One of the supported kinds, ``weights`` or ``report``
        """
        if not os.path.isfile(file_path):
            raise DataError(f"file not found: {file_path}")
        with open(file_path, "r", encoding="utf-8") as handle:
            first = handle.readline().strip()
        if first.startswith("format="):
            return "weights"
        if first.startswith("n_true="):
            return "report"
        columns = tuple(first.split(","))
        # most specific header first
        for kind, required in sorted(self.supported_formats.items(), key=lambda item: -len(item[1])):
            if set(required) <= set(columns):
                return kind
        raise DataError(f"unrecognised artifact header in {file_path}: {first!r}")

    def read(self, file_path: str, kind: Optional[str] = None):
        kind = kind or self.detect_kind(file_path)
        readers = {
            "trajectory": read_trajectory,
            "dataset": read_dataset,
            "theta": read_theta_grid,
            "paths": read_paths,
            "forecast": read_forecast,
            "loss": read_loss_history,
            "qq": read_qq,
            "histogram": read_histogram,
            "weights": read_weights,
            "report": read_report,
        }
        if kind not in readers:
            raise DataError(f"unsupported artifact kind {kind!r}")
        return readers[kind](file_path)

    def describe(self, file_path: str) -> dict:
        """Basic information about an artifact"""
        kind = self.detect_kind(file_path)
        info = {
            "file_path": file_path,
            "kind": kind,
            "file_size": os.path.getsize(file_path),
            "file_extension": Path(file_path).suffix.lower(),
        }
        content = self.read(file_path, kind)
        if isinstance(content, pd.DataFrame):
            info["rows"] = len(content)
        elif isinstance(content, Trajectory):
            info["rows"] = content.n + 1
        elif isinstance(content, RegressionDataset):
            info["rows"] = content.n
        elif isinstance(content, np.ndarray):
            info["rows"] = content.shape[0]
        elif isinstance(content, tuple):
            info["rows"] = content[1].shape[0]
        else:
            info["rows"] = len(content)
        return info
