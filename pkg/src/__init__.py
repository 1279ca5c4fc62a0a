"""
TimeCal
Neural-network calibration of time-dependent parameters in SDE models and heteroscedastic regression.
"""

__version__ = "1.0.0"
__author__ = "TimeCal Team"

__all__ = [
    "autodiff",
    "calibration_orchestrator",
    "cli",
    "config",
    "evaluate",
    "exceptions",
    "file_io",
    "forecast",
    "likelihood",
    "models",
    "neuralnet",
    "simulate",
    "svg_chart",
    "train",
]
