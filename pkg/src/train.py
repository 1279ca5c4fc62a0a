"""
Training
Minibatch Adam optimisation of a calibration loss over the network weights
"""

import logging
import os
import time
from dataclasses import dataclass, field
from typing import Callable, List, Literal, NamedTuple, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from . import autodiff
from .autodiff import NodeRef, Tape
from .config import Config
from .exceptions import DataError, DomainError, TrainingError
from .likelihood import RegressionObjective, SdeObjective
from .neuralnet import MlpSpec, apply_heads, forward_batch, mlp_backward, mlp_forward, mlp_init

logger = logging.getLogger(__name__)

Objective = Union[SdeObjective, RegressionObjective]


class TrainConfig(BaseModel):
    """Optimiser and loop settings; Adam defaults lr=1e-3, β=(0.9, 0.999), ε=1e-8"""

    model_config = ConfigDict(frozen=True)

    batch_size: int = Field(64, ge=1)
    epochs: int = Field(1000, ge=1)
    learning_rate: float = Field(1e-3, gt=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    seed: int = Field(0, ge=0)
    shuffle: bool = True
    validation_fraction: float = Field(0.0, ge=0.0, lt=1.0)
    early_stopping_patience: Optional[int] = Field(None, ge=1)
    checkpoint_every: int = Field(default_factory=lambda: Config.CHECKPOINT_EVERY, ge=0)
    checkpoint_dir: Optional[str] = None
    show_progress: bool = Field(default_factory=lambda: Config.SHOW_PROGRESS)
    gradient_mode: Literal["hybrid", "tape"] = "hybrid"


@dataclass
class AdamState:
    """First/second moment estimates and the step counter"""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size, dtype=np.float64), np.zeros(size, dtype=np.float64), 0)


def adam_step(state: AdamState, weights: np.ndarray, grads: np.ndarray, cfg: TrainConfig) -> Tuple[np.ndarray, AdamState]:
    """
    One bias-corrected Adam update; inputs are not modified.

    Returns:
        (new weights, new state)
    """
    weights = np.asarray(weights, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if not weights.shape == grads.shape == state.m.shape:
        raise ValueError(f"shape mismatch: weights {weights.shape}, grads {grads.shape}, state {state.m.shape}")
    step = state.step + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads * grads
    m_hat = m / (1.0 - cfg.beta1 ** step)
    v_hat = v / (1.0 - cfg.beta2 ** step)
    new_weights = weights - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return new_weights, AdamState(m, v, step)


class BatchLoss(NamedTuple):
    value: float
    gradient: np.ndarray


# (weights, indices) -> BatchLoss
LossBuilder = Callable[[np.ndarray, np.ndarray], BatchLoss]


def tape_loss_builder(loss_fn: Callable[[List[NodeRef], np.ndarray], NodeRef]) -> LossBuilder:
    """
    Wrap ``loss_fn(weight_leaves, indices) -> node`` into a LossBuilder.

    A fresh tape holds the weights as leaves for every call.
    """

    def build(weights: np.ndarray, indices: np.ndarray) -> BatchLoss:
        tape = Tape()
        leaves = tape.leaves(weights)
        root = loss_fn(leaves, indices)
        if not isinstance(root, NodeRef):
            return BatchLoss(float(root), np.zeros(len(leaves)))
        return BatchLoss(root.value, tape.backward(root).wrt(leaves))

    return build


class NetworkLoss:
    """
    Loss of Θ(·, w) on an objective, with its weight gradient.

    ``hybrid`` puts the batch's network outputs on the tape and maps
    d(loss)/d(outputs) back through the vectorised ``mlp_backward``.
    ``tape`` records the whole network with every weight as a leaf.
    """

    def __init__(self, spec: MlpSpec, objective: Objective, mode: str = "hybrid"):
        if mode not in ("hybrid", "tape"):
            raise ValueError(f"unknown gradient mode {mode!r}")
        if spec.n_outputs != objective.s:
            raise DataError(f"network has {spec.n_outputs} outputs, objective expects {objective.s} parameters")
        self.spec = spec
        self.objective = objective
        self.mode = mode

    def __call__(self, weights: np.ndarray, indices) -> BatchLoss:
        indices = np.asarray(indices, dtype=np.int64)
        if self.mode == "tape":
            return self._tape(weights, indices)
        return self._hybrid(weights, indices)

    def _hybrid(self, weights: np.ndarray, indices: np.ndarray) -> BatchLoss:
        raw, cache = forward_batch(self.spec, weights, self.objective.times[indices])
        tape = Tape()
        rows = [tape.leaves(row) for row in raw]
        terms = (self.objective.term(int(k), apply_heads(row, self.spec.heads)) for k, row in zip(indices, rows))
        root = autodiff.sum_nodes(terms)
        grads = tape.backward(root)
        grad_raw = np.array([grads.wrt(row) for row in rows], dtype=np.float64)
        return BatchLoss(root.value, mlp_backward(self.spec, weights, cache, grad_raw))

    def _tape(self, weights: np.ndarray, indices: np.ndarray) -> BatchLoss:
        tape = Tape()
        leaves = tape.leaves(weights)
        terms = []
        for k in indices:
            raw = mlp_forward(self.spec, leaves, float(self.objective.times[k]))
            terms.append(self.objective.term(int(k), apply_heads(raw, self.spec.heads)))
        root = autodiff.sum_nodes(terms)
        return BatchLoss(root.value, tape.backward(root).wrt(leaves))

    def value(self, weights: np.ndarray, indices=None) -> float:
        """Loss without gradient, vectorised over all terms"""
        raw, _ = forward_batch(self.spec, weights, self.objective.times)
        values = self.objective.values(apply_heads(raw, self.spec.heads))
        if indices is None:
            return float(values.sum())
        return float(values[np.asarray(indices, dtype=np.int64)].sum())


def network_loss_builder(spec: MlpSpec, objective: Objective, mode: str = "hybrid") -> NetworkLoss:
    return NetworkLoss(spec, objective, mode)


@dataclass
class FitResult:
    """Outcome of ``fit``"""

    weights: np.ndarray
    loss_history: List[float]
    epochs_run: int
    wall_time: float
    val_loss_history: Optional[List[float]] = None
    best_epoch: Optional[int] = None
    checkpoints: List[str] = field(default_factory=list)


def _split(n_terms: int, cfg: TrainConfig, rng: np.random.Generator) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    indices = np.arange(n_terms, dtype=np.int64)
    n_val = int(round(cfg.validation_fraction * n_terms))
    if n_val == 0:
        return indices, None
    order = rng.permutation(n_terms)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def fit(
    cfg: TrainConfig,
    loss_builder: LossBuilder,
    n_terms: int,
    initial_weights: np.ndarray,
    on_checkpoint: Optional[Callable[[int, np.ndarray, float], Optional[str]]] = None,
) -> FitResult:
    """
    Minimise Σ_k loss_k(w) with minibatch Adam.

    Args:
        cfg: Training settings
        loss_builder: (weights, index batch) -> BatchLoss for that batch
        n_terms: Number of loss terms
        initial_weights: Starting point
        on_checkpoint: Called as (epoch, weights, loss) every ``checkpoint_every``
            epochs; may return the path it wrote

    Returns:
        FitResult with the per-epoch mean loss per term

    Raises:
        TrainingError: A domain error or a non-finite loss inside a step
    """
    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx = _split(n_terms, cfg, rng)
    if not 1 <= cfg.batch_size <= train_idx.shape[0]:
        raise DataError(f"batch_size {cfg.batch_size} outside 1..{train_idx.shape[0]}")
    evaluate = getattr(loss_builder, "value", None)

    weights = np.array(initial_weights, dtype=np.float64)
    state = AdamState.zeros(weights.shape[0])
    history: List[float] = []
    val_history: Optional[List[float]] = [] if val_idx is not None else None
    best = (np.inf, weights.copy(), 0)
    stale = 0
    checkpoints: List[str] = []
    started = time.perf_counter()

    logger.info(
        "Training on %d terms (%s validation) for %d epochs, batch size %d",
        train_idx.shape[0], 0 if val_idx is None else val_idx.shape[0], cfg.epochs, cfg.batch_size,
    )
    bar = tqdm(range(1, cfg.epochs + 1), desc="Training", unit="epoch", disable=not cfg.show_progress)
    for epoch in bar:
        order = rng.permutation(train_idx) if cfg.shuffle else train_idx
        total = 0.0
        for b, start in enumerate(range(0, order.shape[0], cfg.batch_size)):
            batch = order[start:start + cfg.batch_size]
            try:
                value, grad = loss_builder(weights, batch)
            except DomainError as e:
                raise TrainingError(str(e), epoch, b) from e
            if not np.isfinite(value) or not np.all(np.isfinite(grad)):
                raise TrainingError("non-finite loss or gradient", epoch, b)
            weights, state = adam_step(state, weights, grad, cfg)
            total += value
        epoch_loss = total / order.shape[0]
        history.append(epoch_loss)

        monitored = epoch_loss
        if val_idx is not None:
            try:
                val_value = evaluate(weights, val_idx) if evaluate else loss_builder(weights, val_idx).value
            except DomainError as e:
                raise TrainingError(f"validation: {e}", epoch, -1) from e
            val_history.append(val_value / val_idx.shape[0])
            monitored = val_history[-1]
        logger.debug("epoch %d loss %.6g%s", epoch, epoch_loss, "" if val_idx is None else f" val {monitored:.6g}")
        bar.set_postfix(loss=f"{monitored:.5g}")

        if monitored < best[0]:
            best = (monitored, weights.copy(), epoch)
            stale = 0
        else:
            stale += 1

        if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0 and on_checkpoint is not None:
            written = on_checkpoint(epoch, weights, epoch_loss)
            if written:
                checkpoints.append(written)

        if cfg.early_stopping_patience is not None and stale >= cfg.early_stopping_patience:
            logger.info("Early stopping at epoch %d (best epoch %d)", epoch, best[2])
            break
    bar.close()

    epochs_run = len(history)
    final = best[1] if cfg.early_stopping_patience is not None else weights
    wall = time.perf_counter() - started
    logger.info("Training finished: %d epochs, final loss %.6g, %.1fs", epochs_run, history[-1], wall)
    return FitResult(
        weights=final,
        loss_history=history,
        epochs_run=epochs_run,
        wall_time=wall,
        val_loss_history=val_history,
        best_epoch=best[2],
        checkpoints=checkpoints,
    )


def fit_network(
    spec: MlpSpec,
    objective: Objective,
    cfg: TrainConfig,
    initial_weights: Optional[np.ndarray] = None,
) -> FitResult:
    """
    Train Θ(·, w) on ``objective``; checkpoints go to ``cfg.checkpoint_dir``.
    """
    from .file_io import write_checkpoint

    weights = mlp_init(spec, cfg.seed) if initial_weights is None else initial_weights
    if spec.n_parameters >= objective.n_terms:
        logger.warning("Network has %d weights for %d loss terms", spec.n_parameters, objective.n_terms)
    builder = network_loss_builder(spec, objective, cfg.gradient_mode)

    on_checkpoint = None
    if cfg.checkpoint_every and cfg.checkpoint_dir:
        os.makedirs(cfg.checkpoint_dir, exist_ok=True)

        def on_checkpoint(epoch: int, w: np.ndarray, loss: float) -> str:
            path = os.path.join(cfg.checkpoint_dir, f"checkpoint_epoch_{epoch:05d}.weights")
            write_checkpoint(path, spec, w, epoch, loss)
            return path

    return fit(cfg, builder, objective.n_terms, weights, on_checkpoint)
