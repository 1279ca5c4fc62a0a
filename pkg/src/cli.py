"""
Command Line Interface
simulate / train / forecast / evaluate / plot / pipeline commands over file artifacts
"""

import argparse
import json
import logging
import os
import sys
from typing import Any, Callable, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .calibration_orchestrator import CalibrationOrchestrator
from .config import Config, configure_logging
from .exceptions import CalibrationError, ConfigurationError, exit_code_for
from .models import ModelSpec
from .train import TrainConfig

logger = logging.getLogger(__name__)

Command = Literal["simulate", "train", "forecast", "evaluate", "plot", "pipeline"]

# settings a preset may supply when neither the config file nor a flag does
PRESET_KEYS = ("batch_size", "epochs", "subsample")


class RunConfig(BaseModel):
    """Settings of one command after env, preset, config file and flags are merged"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    command: Command
    model: Optional[str] = None
    case: Optional[str] = None
    model_file: Optional[str] = None
    preset: Optional[str] = None
    seed: Optional[int] = Field(None, ge=0)

    input: Optional[str] = None
    weights: Optional[str] = None
    observed: Optional[str] = None
    output: Optional[str] = None
    output_dir: str = Field(default_factory=lambda: Config.OUTPUT_DIR)

    subsample: int = Field(1, ge=1)
    n_steps: Optional[int] = Field(None, ge=1)

    epochs: int = Field(1000, ge=1)
    batch_size: int = Field(64, ge=1)
    learning_rate: float = Field(1e-3, gt=0.0)
    hidden_width: int = Field(default_factory=lambda: Config.HIDDEN_WIDTH, ge=1)
    hidden_layers: int = Field(default_factory=lambda: Config.HIDDEN_LAYERS, ge=1)
    separate_heads: bool = False
    validation_fraction: float = Field(0.0, ge=0.0, lt=1.0)
    early_stopping_patience: Optional[int] = Field(None, ge=1)
    checkpoint_every: int = Field(default_factory=lambda: Config.CHECKPOINT_EVERY, ge=0)
    gradient_mode: Literal["hybrid", "tape"] = "hybrid"
    show_progress: bool = Field(default_factory=lambda: Config.SHOW_PROGRESS)

    alpha: float = Field(default_factory=lambda: Config.INTERVAL_LEVEL, gt=0.0, lt=1.0)
    forecast_steps: Optional[int] = Field(None, ge=1)
    start_index: int = Field(0, ge=0)
    carrier: Literal["single", "ensemble"] = "single"
    n_carriers: int = Field(100, ge=1)

    ensemble_size: int = Field(default_factory=lambda: Config.ENSEMBLE_SIZE, ge=2)
    component: int = Field(1, ge=1)
    h_plus: Optional[float] = None
    bins: int = Field(default_factory=lambda: Config.HISTOGRAM_BINS, ge=1)

    kind: Optional[Literal["theta", "paths", "forecast", "histogram", "qq", "loss"]] = None
    theme: str = "default"
    log_level: Optional[str] = None

    @model_validator(mode="after")
    def _check_command(self):
        chosen = [name for name in (self.model, self.case, self.model_file) if name]
        if self.command != "plot":
            if len(chosen) != 1:
                raise ValueError("give exactly one of --model, --case or --model-file")
            if self.seed is None:
                raise ValueError("--seed is required")
        required = {
            "train": ("input",),
            "forecast": ("input", "weights"),
            "plot": ("input",),
        }.get(self.command, ())
        for name in required:
            if getattr(self, name) is None:
                raise ValueError(f"--{name.replace('_', '-')} is required for {self.command}")
        for name in ("input", "weights", "observed", "model_file"):
            path = getattr(self, name)
            if path is not None and not os.path.isfile(path):
                raise ValueError(f"{name.replace('_', '-')} file not found: {path}")
        return self

    @property
    def problem_name(self) -> Optional[str]:
        return self.model or self.case

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            seed=self.seed or 0,
            validation_fraction=self.validation_fraction,
            early_stopping_patience=self.early_stopping_patience,
            checkpoint_every=self.checkpoint_every,
            show_progress=self.show_progress,
            gradient_mode=self.gradient_mode,
        )


def _load_config_file(path: str) -> Dict[str, Any]:
    if not os.path.isfile(path):
        raise ConfigurationError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as handle:
            values = json.load(handle)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(values, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return {key.replace("-", "_"): value for key, value in values.items()}


def build_run_config(command: str, flags: Dict[str, Any]) -> RunConfig:
    """
    Merge settings: env defaults < preset < JSON config file < flags.

    Raises:
        ConfigurationError: Unreadable config file or invalid merged settings
    """
    flags = dict(flags)
    config_path = flags.pop("config", None)
    merged = _load_config_file(config_path) if config_path else {}
    merged.update(flags)

    preset_name = merged.get("preset") or merged.get("model") or merged.get("case")
    if preset_name:
        preset = Config.get_preset(preset_name)
        for key in PRESET_KEYS:
            merged.setdefault(key, preset[key])
        if "model" in preset and not any(merged.get(k) for k in ("model", "case", "model_file")):
            merged["model"] = preset["model"]
    try:
        return RunConfig(command=command, **merged)
    except ValidationError as e:
        details = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigurationError(f"invalid settings: {details}") from e


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _problem(cfg: RunConfig, orchestrator: CalibrationOrchestrator) -> ModelSpec:
    return orchestrator.resolve(cfg.problem_name, cfg.model_file)


def cmd_simulate(cfg: RunConfig, orchestrator: CalibrationOrchestrator) -> int:
    problem = _problem(cfg, orchestrator)
    result = orchestrator.simulate(problem, cfg.seed, cfg.output, cfg.subsample, cfg.n_steps)
    print(f"wrote {result['path']}")
    print(f"n={result['n']} h={result['h']:.10g} T={result['T']:.10g}")
    return 0


def cmd_train(cfg: RunConfig, orchestrator: CalibrationOrchestrator) -> int:
    problem = _problem(cfg, orchestrator)
    result = orchestrator.train(
        problem,
        cfg.input,
        cfg.train_config(),
        cfg.output_dir,
        cfg.hidden_width,
        cfg.hidden_layers,
        cfg.separate_heads,
    )
    print(f"wrote {result['weights_path']}")
    print(f"wrote {result['loss_path']}")
    print(f"epochs={result['epochs_run']} final_loss={result['final_loss']:.10g}")
    return 0


def cmd_forecast(cfg: RunConfig, orchestrator: CalibrationOrchestrator) -> int:
    problem = _problem(cfg, orchestrator)
    result = orchestrator.forecast(
        problem,
        cfg.weights,
        cfg.input,
        cfg.seed,
        cfg.alpha,
        cfg.forecast_steps,
        cfg.start_index,
        cfg.carrier,
        cfg.n_carriers,
        cfg.output or os.path.join(cfg.output_dir, "forecast.csv"),
    )
    print(f"wrote {result['path']}")
    coverage = "undefined" if result["coverage"] is None else f"{result['coverage']:.4f}"
    print(f"steps={result['steps']} quantile={result['quantile']:.7f} coverage={coverage}")
    return 0


def cmd_evaluate(cfg: RunConfig, orchestrator: CalibrationOrchestrator) -> int:
    problem = _problem(cfg, orchestrator)
    result = orchestrator.evaluate(
        problem,
        cfg.seed,
        cfg.weights,
        cfg.ensemble_size,
        cfg.n_steps,
        cfg.component - 1,
        cfg.h_plus,
        cfg.bins,
        cfg.output_dir,
    )
    report = result["report"]
    print(f"wrote {result['report_path']}")
    if result["paths_path"]:
        print(f"wrote {result['paths_path']}")
    print(f"ks_d={report.ks_d:.6g} ks_p={report.ks_p:.6g} l_emp={report.l_emp:.6g}")
    return 0


def cmd_plot(cfg: RunConfig, orchestrator: CalibrationOrchestrator) -> int:
    result = orchestrator.plot(cfg.input, cfg.output, cfg.kind, cfg.component, cfg.observed)
    print(f"wrote {result['path']} ({result['kind']})")
    return 0


def cmd_pipeline(cfg: RunConfig, orchestrator: CalibrationOrchestrator) -> int:
    problem = _problem(cfg, orchestrator)
    result = orchestrator.run_pipeline(
        problem,
        cfg.seed,
        cfg.train_config(),
        subsample=cfg.subsample,
        alpha=cfg.alpha,
        ensemble_size=cfg.ensemble_size,
        hidden_width=cfg.hidden_width,
        hidden_layers=cfg.hidden_layers,
        separate_heads=cfg.separate_heads,
        forecast_steps=cfg.forecast_steps,
        h_plus=cfg.h_plus,
    )
    if not result["success"]:
        print(f"error: {result['error']}", file=sys.stderr)
        return result["exit_code"]
    for name, path in sorted(result["artifacts"].items()):
        print(f"{name}: {path}")
    return 0


COMMANDS: Dict[str, Callable[[RunConfig, CalibrationOrchestrator], int]] = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
    "plot": cmd_plot,
    "pipeline": cmd_pipeline,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser, problem: bool = True):
    parser.add_argument("--config", help="JSON file with settings (flags override it)")
    parser.add_argument("--seed", type=int, help="noise and initialisation seed (required)")
    parser.add_argument("--output-dir", dest="output_dir", help="directory for artifacts")
    parser.add_argument("--output", help="output file")
    parser.add_argument("--log-level", dest="log_level")
    if problem:
        parser.add_argument("--model", help="built-in or registered SDE model")
        parser.add_argument("--case", help="regression case")
        parser.add_argument("--model-file", dest="model_file", help="Python file defining MODEL")
        parser.add_argument("--preset", help="experiment preset (defaults to the model name)")


def _add_network(parser: argparse.ArgumentParser):
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)
    parser.add_argument("--hidden-width", dest="hidden_width", type=int)
    parser.add_argument("--hidden-layers", dest="hidden_layers", type=int)
    parser.add_argument("--separate-heads", dest="separate_heads", action="store_true")
    parser.add_argument("--validation-fraction", dest="validation_fraction", type=float)
    parser.add_argument("--patience", dest="early_stopping_patience", type=int)
    parser.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    parser.add_argument("--gradient-mode", dest="gradient_mode", choices=["hybrid", "tape"])
    parser.add_argument("--no-progress", dest="show_progress", action="store_false")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timecal", description=Config.APP_NAME)
    parser.add_argument("--version", action="version", version=f"%(prog)s {Config.APP_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)
    # omitted flags stay out of the namespace so lower layers can fill them
    suppress = {"argument_default": argparse.SUPPRESS}

    p = sub.add_parser("simulate", help="simulate observations from the true parameters", **suppress)
    _add_common(p)
    p.add_argument("--subsample", type=int)
    p.add_argument("--n-steps", dest="n_steps", type=int)

    p = sub.add_parser("train", help="fit the parameter network", **suppress)
    _add_common(p)
    _add_network(p)
    p.add_argument("--input", help="trajectory or dataset CSV")

    p = sub.add_parser("forecast", help="Monte Carlo forecast with prediction intervals", **suppress)
    _add_common(p)
    p.add_argument("--input", help="trajectory CSV")
    p.add_argument("--weights")
    p.add_argument("--alpha", type=float)
    p.add_argument("--steps", dest="forecast_steps", type=int)
    p.add_argument("--start-index", dest="start_index", type=int)
    p.add_argument("--carrier", choices=["single", "ensemble"])
    p.add_argument("--n-carriers", dest="n_carriers", type=int)

    p = sub.add_parser("evaluate", help="compare fitted and true ensembles", **suppress)
    _add_common(p)
    p.add_argument("--weights", help="fitted weights (omit to compare the truth with itself)")
    p.add_argument("--ensemble-size", dest="ensemble_size", type=int)
    p.add_argument("--n-steps", dest="n_steps", type=int)
    p.add_argument("--component", type=int)
    p.add_argument("--h-plus", dest="h_plus", type=float)
    p.add_argument("--bins", type=int)

    p = sub.add_parser("plot", help="render an artifact as SVG", **suppress)
    _add_common(p, problem=False)
    p.add_argument("--input", help="theta, paths, forecast, histogram, qq or loss CSV")
    p.add_argument("--kind", choices=["theta", "paths", "forecast", "histogram", "qq", "loss"])
    p.add_argument("--component", type=int)
    p.add_argument("--observed", help="trajectory or dataset drawn against the bands")
    p.add_argument("--theme")

    p = sub.add_parser("pipeline", help="simulate, train, forecast, evaluate and plot", **suppress)
    _add_common(p)
    _add_network(p)
    p.add_argument("--subsample", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--ensemble-size", dest="ensemble_size", type=int)
    p.add_argument("--steps", dest="forecast_steps", type=int)
    p.add_argument("--h-plus", dest="h_plus", type=float)
    p.add_argument("--theme")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command; returns the process exit code"""
    parser = build_parser()
    try:
        args = vars(parser.parse_args(argv))
    except SystemExit as e:
        # argparse exits 2 on bad usage, 0 on --help/--version
        return e.code if isinstance(e.code, int) else 2
    command = args.pop("command")

    try:
        cfg = build_run_config(command, args)
        configure_logging(cfg.log_level)
        Config.validate()
        orchestrator = CalibrationOrchestrator(cfg.output_dir, cfg.theme)
        return COMMANDS[command](cfg, orchestrator)
    except CalibrationError as e:
        print(f"error: {e}", file=sys.stderr)
        return exit_code_for(e)
    except Exception as e:
        logger.exception("Unexpected failure in %s", command)
        print(f"error: {e}", file=sys.stderr)
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
