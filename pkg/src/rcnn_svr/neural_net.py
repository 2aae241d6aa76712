"""Small convolutional regression networks with hand-written backpropagation.

Activations flow as numpy arrays in the canonical ``(batch, depth, height,
length)`` layout (see :mod:`rcnn_svr.tensor`). Convolution and pooling act on
the length axis only; the canonical architectures use height 1.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    EmptyDatasetError,
    InvalidSpecError,
    LayerOutOfRangeError,
    NonFiniteError,
    ShapeError,
    ShapeMismatchError,
    StaleCacheError,
)
from .tensor import ConvGeometry, Shape4, Tensor4, conv_output_shape, flatten, pool_output_shape

logger = logging.getLogger(__name__)


class LayerKind(str, enum.Enum):
    CONV = "conv"
    MAX_POOL = "maxpool"
    RELU = "relu"
    NORM = "norm"
    DROPOUT = "dropout"
    FULLY_CONNECTED = "fc"
    REGRESSION = "regression"


class Mode(str, enum.Enum):
    TRAIN = "train"
    INFER = "infer"


class StopReason(str, enum.Enum):
    TARGET_MSE_REACHED = "TargetMseReached"
    MAX_EPOCHS_REACHED = "MaxEpochsReached"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    name: str = ""
    # conv
    filter_size: int = 1
    filter_count: int = 1
    padding: int = 0
    stride: int = 1
    # fully connected
    output_size: int = 1
    # dropout
    keep_probability: float = 0.5
    # cross-channel normalization
    window: int = 5
    k: float = 2.0
    alpha: float = 1e-4
    beta: float = 0.75

    @property
    def has_params(self) -> bool:
        return self.kind in (LayerKind.CONV, LayerKind.FULLY_CONNECTED)

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value, "name": self.name}
        if self.kind == LayerKind.CONV:
            out.update(filter_size=self.filter_size, filter_count=self.filter_count,
                       padding=self.padding, stride=self.stride)
        elif self.kind == LayerKind.MAX_POOL:
            out.update(stride=self.stride)
        elif self.kind == LayerKind.FULLY_CONNECTED:
            out.update(output_size=self.output_size)
        elif self.kind == LayerKind.DROPOUT:
            out.update(keep_probability=self.keep_probability)
        elif self.kind == LayerKind.NORM:
            out.update(window=self.window, k=self.k, alpha=self.alpha, beta=self.beta)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        return cls(kind=LayerKind(d.pop("kind")), **d)


def conv(filter_count, filter_size=1, padding=0, stride=1, name=""):
    return LayerSpec(LayerKind.CONV, name=name, filter_size=filter_size,
                     filter_count=filter_count, padding=padding, stride=stride)


def max_pool(stride=2, name=""):
    return LayerSpec(LayerKind.MAX_POOL, name=name, stride=stride)


def relu(name=""):
    return LayerSpec(LayerKind.RELU, name=name)


def cross_channel_norm(window=5, k=2.0, alpha=1e-4, beta=0.75, name=""):
    return LayerSpec(LayerKind.NORM, name=name, window=window, k=k, alpha=alpha, beta=beta)


def dropout(keep_probability=0.5, name=""):
    return LayerSpec(LayerKind.DROPOUT, name=name, keep_probability=keep_probability)


def fully_connected(output_size=1, name=""):
    return LayerSpec(LayerKind.FULLY_CONNECTED, name=name, output_size=output_size)


def regression(name=""):
    return LayerSpec(LayerKind.REGRESSION, name=name)


def _layer_output_shape(layer: LayerSpec, shape):
    length, height, depth = shape
    kind = layer.kind
    if kind == LayerKind.CONV:
        out_len, n = conv_output_shape(
            ConvGeometry(length, layer.filter_size, layer.padding, layer.stride, layer.filter_count)
        )
        return (out_len, height, n)
    if kind == LayerKind.MAX_POOL:
        out_len, _ = pool_output_shape(length, layer.stride, depth)
        return (out_len, height, depth)
    if kind == LayerKind.FULLY_CONNECTED:
        if layer.output_size < 1:
            raise InvalidSpecError("fully connected output_size must be positive")
        return (1, 1, layer.output_size)
    if kind == LayerKind.DROPOUT and not 0.0 < layer.keep_probability <= 1.0:
        raise InvalidSpecError("keep_probability must lie in (0, 1]")
    if kind == LayerKind.NORM and (layer.window < 1 or layer.k <= 0 or layer.beta < 0):
        raise InvalidSpecError("invalid normalization constants")
    return shape


@dataclass(frozen=True)
class NetworkSpec:
    """Input shape ``(length, height, depth)`` plus an ordered layer list.

    The shape chain is validated on construction and cached in ``shapes``:
    ``shapes[0]`` is the input shape and ``shapes[i + 1]`` the output of
    layer ``i``.
    """

    input_shape: tuple
    layers: tuple
    shapes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise InvalidSpecError(f"input shape must be three positive ints, got {self.input_shape}")
        if not self.layers:
            raise InvalidSpecError("a network needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.kind == LayerKind.REGRESSION and i != len(self.layers) - 1:
                raise InvalidSpecError("the regression layer must be the final layer")
        shapes = [self.input_shape]
        try:
            for layer in self.layers:
                shapes.append(_layer_output_shape(layer, shapes[-1]))
        except ShapeError as exc:
            raise InvalidSpecError(f"shape chain breaks at layer {len(shapes) - 1}: {exc}") from exc
        object.__setattr__(self, "shapes", tuple(shapes))

    def __len__(self):
        return len(self.layers)

    @property
    def output_shape(self):
        return self.shapes[-1]

    def layer_names(self) -> list[str]:
        return [layer.name or f"{layer.kind.value}{i}" for i, layer in enumerate(self.layers)]

    def feature_count(self, layer_index: int) -> int:
        length, height, depth = self.shapes[layer_index + 1]
        return length * height * depth

    def param_shapes(self) -> list:
        """Per-layer ``(weight_shape, bias_shape)`` or ``None`` for parameter-free layers."""
        out = []
        for i, layer in enumerate(self.layers):
            length, height, depth = self.shapes[i]
            if layer.kind == LayerKind.CONV:
                out.append(((layer.filter_count, depth, layer.filter_size), (layer.filter_count,)))
            elif layer.kind == LayerKind.FULLY_CONNECTED:
                out.append(((layer.output_size, length * height * depth), (layer.output_size,)))
            else:
                out.append(None)
        return out

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape),
                "layers": [layer.to_dict() for layer in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(tuple(d["input_shape"]), tuple(LayerSpec.from_dict(x) for x in d["layers"]))


@dataclass
class NetworkParams:
    """Per-layer weights and biases; ``None`` entries for parameter-free layers."""

    weights: list
    biases: list

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            [None if w is None else w.copy() for w in self.weights],
            [None if b is None else b.copy() for b in self.biases],
        )

    def arrays(self):
        """Yield ``(layer_index, "weight"|"bias", array)`` for each learned array."""
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w is not None:
                yield i, "weight", w
                yield i, "bias", b

    def count(self) -> int:
        return sum(a.size for _, _, a in self.arrays())

    def shapes(self) -> list:
        return [None if w is None else (w.shape, b.shape)
                for w, b in zip(self.weights, self.biases)]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for _, _, a in self.arrays())


def init_network(spec: NetworkSpec, seed: int = 0) -> NetworkParams:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for layer, shapes in zip(spec.layers, spec.param_shapes()):
        if shapes is None:
            weights.append(None)
            biases.append(None)
            continue
        w_shape, b_shape = shapes
        if layer.kind == LayerKind.CONV:
            n, c_in, f = w_shape
            fan_in, fan_out = c_in * f, n * f
        else:
            fan_out, fan_in = w_shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=w_shape))
        biases.append(np.zeros(b_shape))
    return NetworkParams(weights, biases)


# --------------------------------------------------------------------------
# layer kernels

def _conv_forward(x, w, b, layer):
    pad, stride, f = layer.padding, layer.stride, layer.filter_size
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (0, 0), (pad, pad)))
    out_len = (x.shape[3] - f) // stride + 1
    idx = np.arange(out_len)[:, None] * stride + np.arange(f)[None, :]
    patches = x[:, :, :, idx]  # (B, C, H, Lout, F)
    y = np.einsum("bchlf,ncf->bnhl", patches, w) + b[None, :, None, None]
    return y, (patches, idx, x.shape)


def _conv_backward(g, w, aux, layer):
    patches, idx, padded_shape = aux
    dw = np.einsum("bnhl,bchlf->ncf", g, patches)
    db = g.sum(axis=(0, 2, 3))
    dpatches = np.einsum("bnhl,ncf->bchlf", g, w)
    dx = np.zeros(padded_shape)
    np.add.at(dx, (slice(None), slice(None), slice(None), idx), dpatches)
    if layer.padding:
        dx = dx[..., layer.padding:-layer.padding]
    return dx, dw, db


def _pool_forward(x, layer):
    s = layer.stride
    batch, c, h, length = x.shape
    out_len = length // s
    windows = x[..., : out_len * s].reshape(batch, c, h, out_len, s)
    arg = windows.argmax(axis=-1)
    y = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    return y, (arg, x.shape)


def _pool_backward(g, aux, layer):
    arg, in_shape = aux
    s = layer.stride
    batch, c, h, length = in_shape
    out_len = g.shape[-1]
    dwin = np.zeros((batch, c, h, out_len, s))
    np.put_along_axis(dwin, arg[..., None], g[..., None], axis=-1)
    dx = np.zeros(in_shape)
    dx[..., : out_len * s] = dwin.reshape(batch, c, h, out_len * s)
    return dx


def _channel_window_sum(a, half):
    # sum over channels c-half..c+half, clipped at the edges
    c = a.shape[1]
    padded = np.pad(a, ((0, 0), (half + 1, half), (0, 0), (0, 0)))
    csum = np.cumsum(padded, axis=1)
    return csum[:, 2 * half + 1: 2 * half + 1 + c] - csum[:, :c]


def _norm_forward(x, layer):
    half = layer.window // 2
    scale = layer.k + layer.alpha * _channel_window_sum(x * x, half)
    y = x * scale ** (-layer.beta)
    return y, scale


def _norm_backward(g, x, scale, layer):
    half = layer.window // 2
    beta = layer.beta
    inner = g * x * scale ** (-beta - 1.0)
    return g * scale ** (-beta) - 2.0 * layer.alpha * beta * x * _channel_window_sum(inner, half)


def _fc_forward(x, w, b):
    flat = x.reshape(x.shape[0], -1)
    y = flat @ w.T + b
    return y.reshape(x.shape[0], -1, 1, 1), flat


def _fc_backward(g, w, flat, in_shape):
    g2 = g.reshape(g.shape[0], -1)
    return (g2 @ w).reshape(in_shape), g2.T @ flat, g2.sum(axis=0)


# --------------------------------------------------------------------------
# forward / backward

@dataclass
class ForwardCache:
    inputs: list
    aux: list
    mode: Mode
    param_shapes: list


def _as_mode(mode) -> Mode:
    return mode if isinstance(mode, Mode) else Mode(str(mode).lower())


def _as_rng(rng, seed):
    if rng is not None:
        return rng
    return np.random.default_rng(seed)


def forward_array(spec: NetworkSpec, params: NetworkParams, x: np.ndarray,
                  mode=Mode.INFER, rng=None, seed: int = 0, stop_after: Optional[int] = None,
                  keep_cache: bool = True):
    """Array-level forward pass.

    Runs layers ``0..stop_after`` (all layers by default) on a
    ``(batch, depth, height, length)`` array. Returns the output array and a
    :class:`ForwardCache` (``None`` when ``keep_cache`` is false).
    """
    mode = _as_mode(mode)
    length, height, depth = spec.input_shape
    if x.ndim != 4 or x.shape[1:] != (depth, height, length):
        raise ShapeMismatchError(
            f"input array shape {x.shape} does not match network input "
            f"(batch, {depth}, {height}, {length})"
        )
    if x.shape[0] < 1:
        raise ShapeMismatchError("input batch is empty")
    last = len(spec.layers) - 1 if stop_after is None else stop_after
    if mode == Mode.TRAIN:
        rng = _as_rng(rng, seed)
    inputs, aux = [], []
    for i in range(last + 1):
        layer = spec.layers[i]
        if keep_cache:
            inputs.append(x)
        kind = layer.kind
        a = None
        if kind == LayerKind.CONV:
            x, a = _conv_forward(x, params.weights[i], params.biases[i], layer)
        elif kind == LayerKind.MAX_POOL:
            x, a = _pool_forward(x, layer)
        elif kind == LayerKind.RELU:
            x = np.maximum(x, 0.0)
        elif kind == LayerKind.NORM:
            x, a = _norm_forward(x, layer)
        elif kind == LayerKind.DROPOUT:
            if mode == Mode.TRAIN and layer.keep_probability < 1.0:
                p = layer.keep_probability
                a = (rng.random(x.shape) < p) / p
                x = x * a
        elif kind == LayerKind.FULLY_CONNECTED:
            x, a = _fc_forward(x, params.weights[i], params.biases[i])
        if keep_cache:
            aux.append(a)
    cache = ForwardCache(inputs, aux, mode, params.shapes()) if keep_cache else None
    return x, cache


def forward(spec: NetworkSpec, params: NetworkParams, input: Tensor4, mode=Mode.INFER,
            rng=None, seed: int = 0):
    """Run the network on ``input``; returns ``(output Tensor4, cache)``.

    Train mode samples dropout masks from ``rng`` (or a generator seeded
    with ``seed``); Infer mode is deterministic and dropout is the identity.
    """
    out, cache = forward_array(spec, params, input.to_array(), mode=mode, rng=rng, seed=seed)
    return Tensor4.from_array(out), cache


def backward(spec: NetworkSpec, params: NetworkParams, cache: ForwardCache, d_loss,
             return_input_grad: bool = False):
    """Backpropagate ``d_loss`` (gradient w.r.t. the network output).

    Returns a :class:`NetworkParams` of gradients, plus the input gradient
    when ``return_input_grad`` is set.
    """
    if len(cache.inputs) != len(spec.layers) or cache.param_shapes != params.shapes():
        raise StaleCacheError("cache was not produced by a full forward pass on these parameters")
    g = d_loss.to_array() if isinstance(d_loss, Tensor4) else np.asarray(d_loss, dtype=np.float64)
    batch = cache.inputs[0].shape[0]
    expected = (batch,) + tuple(reversed(spec.output_shape))
    if g.shape != expected:
        try:
            g = g.reshape(expected)
        except ValueError:
            raise StaleCacheError(
                f"loss gradient shape {g.shape} disagrees with cached output {expected}"
            ) from None
    dws = [None] * len(spec.layers)
    dbs = [None] * len(spec.layers)
    for i in range(len(spec.layers) - 1, -1, -1):
        layer, x, a = spec.layers[i], cache.inputs[i], cache.aux[i]
        kind = layer.kind
        if kind == LayerKind.CONV:
            g, dws[i], dbs[i] = _conv_backward(g, params.weights[i], a, layer)
        elif kind == LayerKind.MAX_POOL:
            g = _pool_backward(g, a, layer)
        elif kind == LayerKind.RELU:
            g = g * (x > 0)
        elif kind == LayerKind.NORM:
            g = _norm_backward(g, x, a, layer)
        elif kind == LayerKind.DROPOUT:
            if a is not None:
                g = g * a
        elif kind == LayerKind.FULLY_CONNECTED:
            g, dws[i], dbs[i] = _fc_backward(g, params.weights[i], a, x.shape)
    grads = NetworkParams(dws, dbs)
    return (grads, g) if return_input_grad else grads


def mse_loss(output, targets):
    """Mean squared error over the batch and its gradient w.r.t. ``output``."""
    out = output.to_array() if isinstance(output, Tensor4) else np.asarray(output)
    pred = out.reshape(out.shape[0], -1)
    t = np.asarray(targets, dtype=np.float64).reshape(pred.shape[0], -1)
    diff = pred - t
    loss = float(np.mean(diff ** 2))
    grad = (2.0 / diff.size) * diff
    return loss, grad.reshape(out.shape)


# --------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 500
    target_mse: float = 0.0
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be positive")
        if not self.target_mse >= 0:
            raise ValueError("target_mse must be non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass
class TrainReport:
    epochs_run: int
    mse_per_epoch: list
    stop_reason: StopReason


def _inputs_array(inputs) -> np.ndarray:
    if isinstance(inputs, Tensor4):
        return inputs.to_array()
    return np.asarray(inputs, dtype=np.float64)


def _run_epoch(spec, params, velocity, x, y, rng, config):
    n = x.shape[0]
    lr, mu = config.learning_rate, config.momentum
    order = rng.permutation(n)
    for start in range(0, n, config.batch_size):
        idx = order[start:start + config.batch_size]
        out, cache = forward_array(spec, params, x[idx], mode=Mode.TRAIN, rng=rng)
        _, d_out = mse_loss(out, y[idx])
        grads = backward(spec, params, cache, d_out)
        for i in range(len(spec.layers)):
            if params.weights[i] is None:
                continue
            velocity.weights[i] *= mu
            velocity.weights[i] -= lr * grads.weights[i]
            velocity.biases[i] *= mu
            velocity.biases[i] -= lr * grads.biases[i]
            params.weights[i] += velocity.weights[i]
            params.biases[i] += velocity.biases[i]
    out, _ = forward_array(spec, params, x, keep_cache=False)
    return mse_loss(out, y)[0]


def train(spec: NetworkSpec, params: NetworkParams, inputs, targets,
          config: TrainConfig = TrainConfig()):
    """Mini-batch gradient descent with momentum on the mean squared error.

    After every epoch the full training set is re-scored in Infer mode;
    training stops once that MSE is at or below ``config.target_mse`` or
    when ``config.max_epochs`` epochs have run. ``params`` is not modified.
    """
    x = _inputs_array(inputs)
    y = np.asarray(targets, dtype=np.float64)
    n = x.shape[0] if x.ndim == 4 else 0
    if n == 0 or y.size == 0:
        raise EmptyDatasetError("training needs at least one sample")
    y = y.reshape(n, -1)
    if y.shape[1] != spec.feature_count(len(spec.layers) - 1):
        raise ShapeMismatchError(
            f"targets have {y.shape[1]} columns, network emits {spec.feature_count(len(spec) - 1)}"
        )
    params = params.copy()
    velocity = NetworkParams(
        [None if w is None else np.zeros_like(w) for w in params.weights],
        [None if b is None else np.zeros_like(b) for b in params.biases],
    )
    rng = np.random.default_rng(config.seed)
    history = []
    reason = StopReason.MAX_EPOCHS_REACHED
    for epoch in range(1, config.max_epochs + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            epoch_mse = _run_epoch(spec, params, velocity, x, y, rng, config)
        if not np.isfinite(epoch_mse) or not params.all_finite():
            raise NonFiniteError(f"training diverged at epoch {epoch}; lower the learning rate")
        history.append(epoch_mse)
        logger.debug("epoch %d mse %.6g", epoch, epoch_mse)
        if epoch_mse <= config.target_mse:
            reason = StopReason.TARGET_MSE_REACHED
            break
    return params, TrainReport(len(history), history, reason)


def extract_features(spec: NetworkSpec, params: NetworkParams, input, layer_index: int) -> np.ndarray:
    """Infer-mode activations of layer ``layer_index``, flattened to ``(batch, features)``."""
    if not 0 <= layer_index < len(spec.layers):
        raise LayerOutOfRangeError(
            f"layer index {layer_index} outside 0..{len(spec.layers) - 1}"
        )
    out, _ = forward_array(spec, params, _inputs_array(input), mode=Mode.INFER,
                           stop_after=layer_index, keep_cache=False)
    return flatten(Tensor4.from_array(out))


def predict(spec: NetworkSpec, params: NetworkParams, input) -> np.ndarray:
    """Infer-mode network output as a ``(batch, outputs)`` matrix."""
    return extract_features(spec, params, input, len(spec.layers) - 1)


def factors_to_tensor(factors) -> Tensor4:
    """Reshape a ``(months, factors)`` matrix into a ``factors x 1 x 1 x months`` tensor."""
    m = np.asarray(factors, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError("factor matrix must be 2-D")
    return Tensor4(Shape4(m.shape[1], 1, 1, m.shape[0]), m)


def spec_from_layers(input_length: int, layers: Sequence[LayerSpec], height: int = 1,
                     depth: int = 1) -> NetworkSpec:
    return NetworkSpec((input_length, height, depth), tuple(layers))
