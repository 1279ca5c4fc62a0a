import numpy as np
import pandas as pd
import pytest

from src.evaluate import compare_ensembles
from src.exceptions import ConfigurationError, DataError
from src.file_io import (
    ArtifactReader,
    read_checkpoint_meta,
    read_dataset,
    read_loss_history,
    read_paths,
    read_report,
    read_trajectory,
    read_weights,
    write_checkpoint,
    write_dataset,
    write_forecast,
    write_histogram,
    write_loss_history,
    write_paths,
    write_qq,
    write_report,
    write_theta_grid,
    write_trajectory,
    write_weights,
)
from src.forecast import mc_forecast
from src.models import builtin_regression
from src.neuralnet import HeadKind, default_spec
from src.simulate import Rng, regression_sample


def _first_line(path):
    with open(path, "r", encoding="utf-8") as handle:
        return handle.readline().rstrip("\n")


def _spec():
    return default_spec([HeadKind.IDENTITY, HeadKind.ABS_SQUARE], hidden_width=3, hidden_layers=1, horizon=2.0)


def test_trajectory_file_is_exact(tmp_path, short_ex1_trajectory):
    path = write_trajectory(str(tmp_path / "trajectory.csv"), short_ex1_trajectory)
    assert _first_line(path) == "t,x1"
    loaded = read_trajectory(path)
    assert loaded.values.tobytes() == short_ex1_trajectory.values.tobytes()
    assert loaded.n == 200
    assert loaded.h == pytest.approx(0.001, rel=1e-12)
    with open(path, "rb") as handle:
        assert b"\r\n" not in handle.read()


def test_trajectory_reader_rejects_bad_grids(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,x1\n0,1\n0.1,2\n0.3,3\n")
    with pytest.raises(DataError):
        read_trajectory(str(path))
    path.write_text("t,x1\n0,1\n0.1,nan\n")
    with pytest.raises(DataError):
        read_trajectory(str(path))
    path.write_text("t,y\n0,1\n0.1,2\n")
    with pytest.raises(DataError):
        read_trajectory(str(path))
    path.write_text("t,x1\n")
    with pytest.raises(DataError):
        read_trajectory(str(path))
    with pytest.raises(DataError):
        read_trajectory(str(tmp_path / "missing.csv"))


def test_dataset_file(tmp_path):
    data = regression_sample(builtin_regression("case1"), Rng(0))
    path = write_dataset(str(tmp_path / "dataset.csv"), data)
    assert _first_line(path) == "t,x1,x2"
    assert read_dataset(path).values.tobytes() == data.values.tobytes()
    assert len(pd.read_csv(path)) == 3000


def test_weights_file_layout(tmp_path):
    spec = _spec()
    weights = np.random.default_rng(0).normal(size=spec.n_parameters)
    path = write_weights(str(tmp_path / "weights.txt"), spec, weights)
    with open(path, "r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    assert lines[0] == "format=1"
    assert lines[1] == "layer_widths=1,3,2"
    assert lines[2] == "heads=identity,abs_square"
    assert lines[3].startswith("input_shift=1,input_scale=1,")
    assert len(lines) == 4 + spec.n_parameters
    loaded_spec, loaded = read_weights(path)
    assert loaded_spec == spec
    assert loaded.tobytes() == weights.tobytes()


@pytest.mark.parametrize(
    "line, content, number",
    [
        (0, "format=2", "line 1"),
        (1, "widths=1,3,2", "line 2"),
        (2, "heads=identity,softmax", "line 3"),
        (3, "input_shift=1", "line 4"),
    ],
)
def test_weights_header_errors_name_the_line(tmp_path, line, content, number):
    spec = _spec()
    path = write_weights(str(tmp_path / "weights.txt"), spec, np.zeros(spec.n_parameters))
    with open(path, "r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    lines[line] = content
    (tmp_path / "weights.txt").write_text("\n".join(lines) + "\n")
    with pytest.raises(ConfigurationError, match=number):
        read_weights(path)


def test_weights_body_must_match_header(tmp_path):
    spec = _spec()
    path = write_weights(str(tmp_path / "weights.txt"), spec, np.zeros(spec.n_parameters))
    with open(path, "a", encoding="utf-8") as handle:
        handle.write("0.5\n")
    with pytest.raises(DataError):
        read_weights(path)
    (tmp_path / "short.txt").write_text("format=1\nlayer_widths=1,3,2\n")
    with pytest.raises(ConfigurationError, match="line 3"):
        read_weights(str(tmp_path / "short.txt"))
    with pytest.raises(DataError):
        write_weights(str(tmp_path / "other.txt"), spec, np.zeros(3))


def test_checkpoint_metadata(tmp_path):
    spec = _spec()
    path = write_checkpoint(str(tmp_path / "ckpt.weights"), spec, np.zeros(spec.n_parameters), 7, 1.25)
    assert read_checkpoint_meta(path) == {"epoch": 7, "loss": 1.25}
    (tmp_path / "broken.weights.meta").write_text("epoch=x\n")
    with pytest.raises(ConfigurationError):
        read_checkpoint_meta(str(tmp_path / "broken.weights"))


def test_loss_history_columns(tmp_path):
    path = write_loss_history(str(tmp_path / "loss.csv"), [3.0, 2.0, 1.5], [3.5, 2.5, 2.0])
    assert _first_line(path) == "epoch,loss,val_loss"
    frame = read_loss_history(path)
    assert frame["epoch"].tolist() == [1, 2, 3]
    assert _first_line(write_loss_history(str(tmp_path / "plain.csv"), [1.0])) == "epoch,loss"


def test_forecast_columns(tmp_path, ex1):
    forecast = mc_forecast(ex1, ex1.theta_true, 0.7, 5, ex1.h, 0.95, Rng(0))
    path = write_forecast(str(tmp_path / "forecast.csv"), forecast)
    assert _first_line(path) == "k,t,prediction,lower,upper,center,scale"
    frame = pd.read_csv(path, float_precision="round_trip")
    assert frame["k"].tolist() == [1, 2, 3, 4, 5]
    np.testing.assert_array_equal(frame["upper"].to_numpy(), forecast.upper)


def test_theta_grid_columns(tmp_path):
    times = np.linspace(0.0, 1.0, 4)
    path = write_theta_grid(str(tmp_path / "theta.csv"), times, np.ones((4, 2)), np.zeros((4, 2)))
    assert _first_line(path) == "t,fitted_1,fitted_2,true_1,true_2"
    path = write_theta_grid(str(tmp_path / "fit_only.csv"), times, None, np.zeros(4))
    assert _first_line(path) == "t,fitted_1"


def test_path_pairs_columns(tmp_path):
    times = np.linspace(0.0, 1.0, 5)
    true_paths = np.arange(10.0).reshape(2, 5)
    path = write_paths(str(tmp_path / "paths.csv"), times, true_paths, true_paths + 0.5)
    assert _first_line(path) == "t,path_1_true,path_1_fitted,path_2_true,path_2_fitted"
    frame = read_paths(path)
    np.testing.assert_array_equal(frame["path_2_fitted"].to_numpy(), true_paths[1] + 0.5)
    with pytest.raises(DataError):
        write_paths(str(tmp_path / "bad.csv"), times[:4], true_paths, true_paths)


def test_report_marks_undefined_values(tmp_path):
    report = compare_ensembles([0.1, 0.2, 0.4], [0.1, 0.25, 0.3])
    path = write_report(str(tmp_path / "report.txt"), report)
    with open(path, "r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    assert lines[0] == "n_true=3"
    assert "mse=undefined" in lines
    loaded = read_report(path)
    assert loaded["mse"] is None
    assert loaded["ks_d"] == report.ks_d
    (tmp_path / "bad.txt").write_text("n_true=3\nnonsense\n")
    with pytest.raises(DataError, match="line 2"):
        read_report(str(tmp_path / "bad.txt"))


def test_artifact_reader_detects_kinds(tmp_path, short_ex1_trajectory):
    reader = ArtifactReader()
    spec = _spec()
    paths = {
        "trajectory": write_trajectory(str(tmp_path / "a.csv"), short_ex1_trajectory),
        "theta": write_theta_grid(str(tmp_path / "b.csv"), np.arange(3.0), None, np.zeros(3)),
        "paths": write_paths(str(tmp_path / "p.csv"), np.arange(3.0), np.zeros((1, 3)), np.ones((1, 3))),
        "loss": write_loss_history(str(tmp_path / "c.csv"), [1.0, 0.5]),
        "qq": write_qq(str(tmp_path / "d.csv"), np.zeros((4, 2))),
        "histogram": write_histogram(str(tmp_path / "e.csv"), np.zeros((3, 4))),
        "weights": write_weights(str(tmp_path / "f.txt"), spec, np.zeros(spec.n_parameters)),
        "report": write_report(str(tmp_path / "g.txt"), compare_ensembles([0.0, 1.0], [0.0, 1.0])),
    }
    for kind, path in paths.items():
        assert reader.detect_kind(path) == kind
    info = reader.describe(paths["trajectory"])
    assert info["rows"] == 201
    assert info["file_extension"] == ".csv"
    assert reader.describe(paths["weights"])["rows"] == spec.n_parameters


def test_artifact_reader_unknown_header(tmp_path):
    (tmp_path / "other.csv").write_text("a,b\n1,2\n")
    with pytest.raises(DataError):
        ArtifactReader().detect_kind(str(tmp_path / "other.csv"))
    with pytest.raises(DataError):
        ArtifactReader().read(str(tmp_path / "other.csv"), kind="spreadsheet")
