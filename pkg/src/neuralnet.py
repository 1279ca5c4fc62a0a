"""
Parameter Network
Feed-forward network Θ(t, w) mapping time to the model's parameter components
"""

import math
from enum import Enum
from typing import List, Literal, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from . import autodiff
from .autodiff import NodeRef, Scalar

# |ρ| stays strictly below 1
RHO_LIMIT = 1.0 - 1e-12


class HeadKind(str, Enum):
    """How a raw network output becomes a parameter component"""

    IDENTITY = "identity"
    # diffusion magnitude: enters the loss squared, reported as |output|
    ABS_SQUARE = "abs_square"
    # correlation mapped into (-1, 1)
    TANH_CORRELATION = "tanh_correlation"


class MlpSpec(BaseModel):
    """
    Architecture of Θ(·, w).

    ``layer_widths`` starts with the single time input and ends with one
    output per parameter component. Hidden layers use ReLU and the output
    layer is linear. With ``separate_heads`` every component gets its own
    network of the same hidden widths instead of sharing one trunk.
    """

    model_config = ConfigDict(frozen=True)

    layer_widths: Tuple[int, ...]
    heads: Tuple[HeadKind, ...]
    hidden_activation: Literal["relu"] = "relu"
    output_activation: Literal["linear"] = "linear"
    input_shift: float = 0.0
    input_scale: float = 1.0
    separate_heads: bool = False

    @field_validator("layer_widths")
    @classmethod
    def _widths_positive(cls, widths):
        if len(widths) < 2:
            raise ValueError("need at least an input and an output layer")
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be positive, got {list(widths)}")
        if widths[0] != 1:
            raise ValueError("the first layer width must be 1 (time input)")
        return tuple(widths)

    @model_validator(mode="after")
    def _heads_match_outputs(self):
        if len(self.heads) != self.layer_widths[-1]:
            raise ValueError(
                f"{len(self.heads)} heads for {self.layer_widths[-1]} outputs"
            )
        if not np.isfinite(self.input_scale) or self.input_scale == 0.0:
            raise ValueError("input_scale must be finite and non-zero")
        return self

    @property
    def n_outputs(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_parameters(self) -> int:
        return count_parameters(self)


class _Subnet(NamedTuple):
    widths: Tuple[int, ...]
    offset: int
    outputs: Tuple[int, ...]


def _subnets(spec: MlpSpec) -> List[_Subnet]:
    """Weight-vector layout: one trunk, or one network per head"""
    if not spec.separate_heads:
        return [_Subnet(spec.layer_widths, 0, tuple(range(spec.n_outputs)))]
    widths = spec.layer_widths[:-1] + (1,)
    size = _layer_count(widths)
    return [_Subnet(widths, i * size, (i,)) for i in range(spec.n_outputs)]


def _layer_count(widths: Sequence[int]) -> int:
    return sum(fan_in * fan_out + fan_out for fan_in, fan_out in zip(widths[:-1], widths[1:]))


def count_parameters(spec: MlpSpec) -> int:
    """N = Σ (fan_in·fan_out + fan_out) over layers (and over sub-networks)"""
    return sum(_layer_count(net.widths) for net in _subnets(spec))


def default_spec(
    heads: Sequence[HeadKind],
    hidden_width: int = 32,
    hidden_layers: int = 3,
    horizon: Optional[float] = None,
    separate_heads: bool = False,
) -> MlpSpec:
    """
    Four dense layers by default: [1, 32, 32, 32, s].

    Args:
        heads: Head kind per parameter component
        hidden_width: Width of every hidden layer
        hidden_layers: Number of hidden layers
        horizon: When given, time in [0, horizon] is mapped onto [-1, 1]
        separate_heads: One network per component instead of a shared trunk
    """
    widths = (1,) + (hidden_width,) * hidden_layers + (len(heads),)
    shift, scale = 0.0, 1.0
    if horizon is not None:
        shift, scale = horizon / 2.0, 2.0 / horizon
    return MlpSpec(
        layer_widths=widths,
        heads=tuple(HeadKind(h) for h in heads),
        input_shift=shift,
        input_scale=scale,
        separate_heads=separate_heads,
    )


def _layers(widths: Sequence[int], offset: int) -> List[Tuple[int, int, int]]:
    """(fan_in, fan_out, start index) per layer; bias follows the matrix"""
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        layers.append((fan_in, fan_out, offset))
        offset += fan_in * fan_out + fan_out
    return layers


def unpack(spec: MlpSpec, weights: np.ndarray) -> List[List[Tuple[np.ndarray, np.ndarray]]]:
    """Views (W of shape (fan_in, fan_out), b) per layer, per sub-network"""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (spec.n_parameters,):
        raise ValueError(f"expected {spec.n_parameters} weights, got shape {weights.shape}")
    nets = []
    for net in _subnets(spec):
        layers = []
        for fan_in, fan_out, start in _layers(net.widths, net.offset):
            w = weights[start:start + fan_in * fan_out].reshape(fan_in, fan_out)
            b = weights[start + fan_in * fan_out:start + fan_in * fan_out + fan_out]
            layers.append((w, b))
        nets.append(layers)
    return nets


def mlp_init(spec: MlpSpec, seed: int) -> np.ndarray:
    """Glorot-uniform matrices, zero biases; deterministic in ``seed``"""
    rng = np.random.default_rng(seed)
    weights = np.zeros(spec.n_parameters, dtype=np.float64)
    for net in _subnets(spec):
        for fan_in, fan_out, start in _layers(net.widths, net.offset):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights[start:start + fan_in * fan_out] = rng.uniform(-limit, limit, size=fan_in * fan_out)
    return weights


class ForwardCache(NamedTuple):
    """Per sub-network: layer inputs and pre-activations of a batched forward pass"""

    inputs: List[List[np.ndarray]]
    preactivations: List[List[np.ndarray]]


def _scaled_input(spec: MlpSpec, times: np.ndarray) -> np.ndarray:
    return ((np.asarray(times, dtype=np.float64) - spec.input_shift) * spec.input_scale)[:, None]


def forward_batch(spec: MlpSpec, weights: np.ndarray, times) -> Tuple[np.ndarray, ForwardCache]:
    """
    Raw outputs for many time values at once.

    Returns:
        (outputs of shape (len(times), s), cache for ``mlp_backward``)
    """
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    x0 = _scaled_input(spec, times)
    out = np.empty((times.shape[0], spec.n_outputs), dtype=np.float64)
    cache = ForwardCache([], [])
    for net, layers in zip(_subnets(spec), unpack(spec, weights)):
        x = x0
        inputs, pre = [], []
        for i, (w, b) in enumerate(layers):
            inputs.append(x)
            z = x @ w + b
            pre.append(z)
            x = np.maximum(z, 0.0) if i < len(layers) - 1 else z
        out[:, list(net.outputs)] = x
        cache.inputs.append(inputs)
        cache.preactivations.append(pre)
    return out, cache


def mlp_backward(spec: MlpSpec, weights: np.ndarray, cache: ForwardCache, grad_outputs: np.ndarray) -> np.ndarray:
    """
    Vector-Jacobian product of ``forward_batch``.

    Args:
        spec: Network architecture
        weights: Weights used for the forward pass
        cache: Cache returned by that forward pass
        grad_outputs: d(loss)/d(raw outputs), shape (batch, s)

    Returns:
        d(loss)/d(weights) as a flat vector in weight layout
    """
    grad_outputs = np.asarray(grad_outputs, dtype=np.float64)
    grad = np.zeros(spec.n_parameters, dtype=np.float64)
    for k, (net, layers) in enumerate(zip(_subnets(spec), unpack(spec, weights))):
        g = grad_outputs[:, list(net.outputs)]
        positions = _layers(net.widths, net.offset)
        for i in range(len(layers) - 1, -1, -1):
            w, _ = layers[i]
            fan_in, fan_out, start = positions[i]
            grad[start:start + fan_in * fan_out] = (cache.inputs[k][i].T @ g).ravel()
            grad[start + fan_in * fan_out:start + fan_in * fan_out + fan_out] = g.sum(axis=0)
            if i > 0:
                g = (g @ w.T) * (cache.preactivations[k][i - 1] > 0.0)
    return grad


def _forward_tape(spec: MlpSpec, leaves: Sequence[NodeRef], t: float) -> List[NodeRef]:
    if len(leaves) != spec.n_parameters:
        raise ValueError(f"expected {spec.n_parameters} weight leaves, got {len(leaves)}")
    x0 = (float(t) - spec.input_shift) * spec.input_scale
    outputs: List[Optional[Scalar]] = [None] * spec.n_outputs
    for net in _subnets(spec):
        x: List[Scalar] = [x0]
        layers = _layers(net.widths, net.offset)
        for li, (fan_in, fan_out, start) in enumerate(layers):
            bias = start + fan_in * fan_out
            nxt = []
            for j in range(fan_out):
                z: Scalar = leaves[bias + j]
                for i in range(fan_in):
                    z = z + leaves[start + i * fan_out + j] * x[i]
                nxt.append(autodiff.relu(z) if li < len(layers) - 1 else z)
            x = nxt
        for pos, value in zip(net.outputs, x):
            outputs[pos] = value
    return outputs


def mlp_forward(spec: MlpSpec, weights: Union[np.ndarray, Sequence[NodeRef]], t):
    """
    Raw network outputs Θ_raw(t, w).

    Args:
        spec: Network architecture
        weights: Flat weight vector, or tape leaves for a differentiable pass
        t: Time value (an array of times is accepted with a weight vector)

    Returns:
        Array of length s (shape (len(t), s) for array ``t``), or a list of
        tape nodes when ``weights`` are leaves
    """
    if len(weights) and isinstance(weights[0], NodeRef):
        return _forward_tape(spec, weights, t)
    out, _ = forward_batch(spec, np.asarray(weights, dtype=np.float64), t)
    return out if np.ndim(t) else out[0]


def _correlation(raw: Scalar) -> Scalar:
    rho = autodiff.tanh(raw)
    # tanh saturates to ±1 in double precision for |raw| > ~19
    if abs(autodiff.value_of(rho)) >= RHO_LIMIT:
        return math.copysign(RHO_LIMIT, autodiff.value_of(rho))
    return rho


def apply_heads(raw, heads: Sequence[HeadKind]):
    """
    Map raw outputs to Θ components.

    Works on a sequence of scalars/nodes (one time point) or on an array of
    shape (batch, s). AbsSquareInLoss passes through; the loss squares it.
    """
    heads = [HeadKind(h) for h in heads]
    if isinstance(raw, np.ndarray) and raw.ndim == 2:
        if raw.shape[1] != len(heads):
            raise ValueError(f"{raw.shape[1]} outputs for {len(heads)} heads")
        theta = raw.copy()
        for j, head in enumerate(heads):
            if head is HeadKind.TANH_CORRELATION:
                theta[:, j] = np.clip(np.tanh(raw[:, j]), -RHO_LIMIT, RHO_LIMIT)
        return theta
    if len(raw) != len(heads):
        raise ValueError(f"{len(raw)} outputs for {len(heads)} heads")
    return [_correlation(r) if head is HeadKind.TANH_CORRELATION else r for r, head in zip(raw, heads)]


def report_theta(theta: np.ndarray, heads: Sequence[HeadKind]) -> np.ndarray:
    """Reported values: |·| on diffusion-magnitude heads"""
    theta = np.array(theta, dtype=np.float64)
    for j, head in enumerate(heads):
        if HeadKind(head) is HeadKind.ABS_SQUARE:
            theta[..., j] = np.abs(theta[..., j])
    return theta


def theta_on_grid(spec: MlpSpec, weights: np.ndarray, times) -> np.ndarray:
    """Reported Θ(t, w) for every t in ``times``, shape (len(times), s)"""
    raw, _ = forward_batch(spec, weights, times)
    return report_theta(apply_heads(raw, spec.heads), spec.heads)


def network_provider(spec: MlpSpec, weights: np.ndarray):
    """Fitted Θ as a function of an array of times (for simulation and forecasting)"""
    weights = np.array(weights, dtype=np.float64)
    return lambda times: theta_on_grid(spec, weights, np.atleast_1d(times))
