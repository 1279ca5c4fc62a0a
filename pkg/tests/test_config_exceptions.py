import logging

import pytest

from src.config import CHART_THEMES, Config, configure_logging
from src.exceptions import (
    CalibrationError,
    ConfigurationError,
    DataError,
    DomainError,
    SimulationError,
    SingularDiffusionError,
    TrainingError,
    exit_code_for,
)


@pytest.mark.parametrize(
    "error, code",
    [
        (CalibrationError("x"), 1),
        (ConfigurationError("x"), 2),
        (DataError("x"), 2),
        (SimulationError("overflow", 4), 3),
        (DomainError("x"), 4),
        (SingularDiffusionError(3, 0.0), 4),
        (TrainingError("nan", 1, 0), 4),
        (ValueError("x"), 1),
    ],
)
def test_exit_codes(error, code):
    assert exit_code_for(error) == code


def test_error_attributes_and_messages():
    sim = SimulationError("state overflow", 7, trajectory=2)
    assert (sim.step, sim.trajectory) == (7, 2)
    assert "trajectory 2, step k=7" in str(sim)
    assert "step k=7" in str(SimulationError("state overflow", 7))

    train = TrainingError("loss is nan", 3, 5)
    assert (train.epoch, train.batch) == (3, 5)
    assert str(train).startswith("training aborted at epoch 3, batch 5")

    singular = SingularDiffusionError(12, 0.0)
    assert singular.index == 12
    assert singular.value == 0.0
    assert isinstance(singular, DomainError)


def test_presets():
    desk = Config.get_preset("desk")
    assert (desk["model"], desk["epochs"], desk["subsample"]) == ("ex1", 300, 5)
    assert Config.get_preset("EX1")["epochs"] == 1000
    assert Config.get_preset("case1")["batch_size"] == 16
    assert Config.get_preset("something-else") == Config.get_preset("generic")


def test_get_preset_returns_a_copy():
    preset = Config.get_preset("ex2")
    preset["epochs"] = 1
    assert Config.get_preset("ex2")["epochs"] == 100


def test_validate_defaults_and_bad_values(monkeypatch):
    assert all(Config.validate().values())
    monkeypatch.setattr(Config, "ENSEMBLE_CHUNK_SIZE", 0)
    monkeypatch.setattr(Config, "INTERVAL_LEVEL", 1.5)
    checks = Config.validate()
    assert checks["ensemble_chunk_size"] is False
    assert checks["interval_level"] is False
    assert checks["hidden_width"] is True


def test_themes_share_keys():
    assert set(CHART_THEMES["default"]) == set(CHART_THEMES["print"])


def test_configure_logging_with_file(tmp_path):
    log_file = tmp_path / "logs" / "run.log"
    configure_logging("debug", str(log_file))
    logging.getLogger("timecal.test").debug("hello")
    for handler in logging.getLogger().handlers:
        handler.flush()
    assert "hello" in log_file.read_text(encoding="utf-8")
    configure_logging("warning", "")
    assert logging.getLogger().level == logging.WARNING
