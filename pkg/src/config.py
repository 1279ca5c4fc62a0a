"""
Configuration settings for TimeCal
Environment-driven defaults, experiment presets, chart themes and logging setup
"""

import logging
import os
from typing import Any, Dict, Optional

from dotenv import load_dotenv

# Load environment variables
load_dotenv()


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


class Config:
    """Application configuration class"""

    APP_NAME = os.getenv("APP_NAME", "TimeCal - time-dependent parameter calibration")
    APP_VERSION = os.getenv("APP_VERSION", "1.0.0")

    # Output
    OUTPUT_DIR = os.getenv("TIMECAL_OUTPUT_DIR", "runs")

    # Logging Configuration
    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE = os.getenv("LOG_FILE", "")

    # Simulation Configuration
    ENSEMBLE_CHUNK_SIZE = int(os.getenv("ENSEMBLE_CHUNK_SIZE", "256"))
    OVERFLOW_LIMIT = float(os.getenv("OVERFLOW_LIMIT", "1e12"))

    # Training Configuration
    SHOW_PROGRESS = _env_bool("SHOW_PROGRESS", "true")
    CHECKPOINT_EVERY = int(os.getenv("CHECKPOINT_EVERY", "0"))
    HIDDEN_WIDTH = int(os.getenv("HIDDEN_WIDTH", "32"))
    HIDDEN_LAYERS = int(os.getenv("HIDDEN_LAYERS", "3"))

    # Forecast / evaluation defaults
    INTERVAL_LEVEL = float(os.getenv("INTERVAL_LEVEL", "0.95"))
    ENSEMBLE_SIZE = int(os.getenv("ENSEMBLE_SIZE", "1000"))
    HISTOGRAM_BINS = int(os.getenv("HISTOGRAM_BINS", "40"))

    @classmethod
    def validate(cls) -> Dict[str, bool]:
        """Check that the environment-provided values are usable"""
        checks = {
            "log_level": logging.getLevelName(cls.LOG_LEVEL.upper()) != f"Level {cls.LOG_LEVEL.upper()}",
            "ensemble_chunk_size": cls.ENSEMBLE_CHUNK_SIZE >= 1,
            "overflow_limit": cls.OVERFLOW_LIMIT > 0,
            "checkpoint_every": cls.CHECKPOINT_EVERY >= 0,
            "hidden_width": cls.HIDDEN_WIDTH >= 1,
            "hidden_layers": cls.HIDDEN_LAYERS >= 1,
            "interval_level": 0.0 < cls.INTERVAL_LEVEL < 1.0,
            "ensemble_size": cls.ENSEMBLE_SIZE >= 1,
        }
        for name, ok in checks.items():
            if not ok:
                logging.getLogger(__name__).warning("Config value %s is not valid", name)
        return checks

    @classmethod
    def get_preset(cls, name: str) -> Dict[str, Any]:
        """Training preset for an experiment; unknown names fall back to the generic one"""
        return dict(EXPERIMENT_PRESETS.get(name.lower(), EXPERIMENT_PRESETS["generic"]))


def configure_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> None:
    """Route the ``logging`` root handler according to LOG_LEVEL / LOG_FILE"""
    level = (level or Config.LOG_LEVEL).upper()
    log_file = Config.LOG_FILE if log_file is None else log_file
    handlers = [logging.StreamHandler()]
    if log_file:
        os.makedirs(os.path.dirname(log_file) or ".", exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        handlers=handlers,
        force=True,
    )


# Training parameters used for each built-in problem
EXPERIMENT_PRESETS = {
    "ex1": {
        "batch_size": 64,
        "epochs": 1000,
        "subsample": 1,
        "description": "Ornstein-Uhlenbeck with time-varying volatility",
    },
    "ex2": {
        "batch_size": 64,
        "epochs": 100,
        "subsample": 1,
        "description": "Threshold diffusion",
    },
    "ex3": {
        "batch_size": 4,
        "epochs": 1050,
        "subsample": 1,
        "description": "Nonlinear drift and diffusion",
    },
    "ex4_log": {
        "batch_size": 228,
        "epochs": 1000,
        "subsample": 1,
        "description": "Log-transformed Black-Scholes, drift and volatility",
    },
    "case1": {
        "batch_size": 16,
        "epochs": 1000,
        "subsample": 1,
        "description": "2-D regression, time-dependent means",
    },
    "case2": {
        "batch_size": 16,
        "epochs": 1000,
        "subsample": 1,
        "description": "2-D regression, time-dependent variances",
    },
    "case3": {
        "batch_size": 16,
        "epochs": 1000,
        "subsample": 1,
        "description": "2-D regression, all parameters time-dependent",
    },
    "desk": {
        "model": "ex1",
        "batch_size": 64,
        "epochs": 300,
        "subsample": 5,
        "description": "ex1 scaled to 2000 transitions for laptop runs",
    },
    "generic": {
        "batch_size": 64,
        "epochs": 300,
        "subsample": 1,
        "description": "Custom model",
    },
}

# SVG chart themes
CHART_THEMES = {
    "default": {
        "width": 720,
        "height": 420,
        "margin": 56,
        "background_color": "#FFFFFF",
        "axis_color": "#374151",
        "grid_color": "#E5E7EB",
        "series_colors": ["#1E3A8A", "#DC2626", "#15803D", "#7C3AED"],
        "band_colors": {"0.68": "#93C5FD", "0.95": "#DBEAFE"},
        "font_family": "Segoe UI, sans-serif",
        "title_size": 16,
        "label_size": 12,
        "stroke_width": 1.5,
        "marker_radius": 2.0,
    },
    "print": {
        "width": 640,
        "height": 400,
        "margin": 56,
        "background_color": "#FFFFFF",
        "axis_color": "#000000",
        "grid_color": "#D1D5DB",
        "series_colors": ["#000000", "#6B7280", "#9CA3AF", "#374151"],
        "band_colors": {"0.68": "#D1D5DB", "0.95": "#F3F4F6"},
        "font_family": "Calibri, sans-serif",
        "title_size": 14,
        "label_size": 11,
        "stroke_width": 1.2,
        "marker_radius": 1.5,
    },
}
