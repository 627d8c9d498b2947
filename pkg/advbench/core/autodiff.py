"""
Dense tensor arithmetic and reverse-mode differentiation.

Tensors are 64-bit numpy arrays. Images are laid out NHWC, logits are
(batch, classes). A Network is an ordered list of primitive layers plus a
dict of named parameter tensors; forward passes record a ComputationTrace
whose reverse replay yields gradients with respect to the input and the
parameters.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigError, InputError

logger = logging.getLogger(__name__)

Tensor = np.ndarray
Shape = Tuple[int, ...]
Params = Dict[str, Tensor]


def as_tensor(values: Any) -> Tensor:
    """Return values as a float64 ndarray (no copy when already float64)."""
    return np.asarray(values, dtype=np.float64)


class Layer:
    """
    Base class of the primitive layers.

    A layer is stateless apart from its hyperparameters: parameters live in
    the owning Network's params dict under "<layer name>.<param name>".
    """

    def __init__(self, name: str):
        self.name = name

    def output_shape(self, input_shape: Shape) -> Shape:
        return input_shape

    def param_shapes(self, input_shape: Shape) -> Dict[str, Shape]:
        return {}

    def fan_in(self, input_shape: Shape) -> int:
        return 1

    def forward(self, params: Params, x: Tensor) -> Tuple[Tensor, Any]:
        raise NotImplementedError

    def backward(
        self, params: Params, cache: Any, dout: Tensor, need_params: bool = True
    ) -> Tuple[Tensor, Params]:
        raise NotImplementedError

    def key(self, param: str) -> str:
        return f"{self.name}.{param}"

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name='{self.name}')"


class Dense(Layer):
    """Affine layer on rank-1 inputs: y = x @ W + b."""

    def __init__(self, name: str, units: int):
        super().__init__(name)
        self.units = units

    def output_shape(self, input_shape: Shape) -> Shape:
        if len(input_shape) != 1:
            raise ConfigError(
                f"Layer '{self.name}' expects a flat input, got shape {input_shape}"
            )
        return (self.units,)

    def param_shapes(self, input_shape: Shape) -> Dict[str, Shape]:
        return {"weight": (input_shape[0], self.units), "bias": (self.units,)}

    def fan_in(self, input_shape: Shape) -> int:
        return input_shape[0]

    def forward(self, params: Params, x: Tensor) -> Tuple[Tensor, Any]:
        out = x @ params[self.key("weight")] + params[self.key("bias")]
        return out, x

    def backward(self, params, cache, dout, need_params=True):
        x = cache
        grads: Params = {}
        if need_params:
            grads[self.key("weight")] = x.T @ dout
            grads[self.key("bias")] = dout.sum(axis=0)
        return dout @ params[self.key("weight")].T, grads


class Conv2D(Layer):
    """
    2-D convolution over NHWC inputs with square kernels.

    padding is "valid" or "same"; "same" pads so that the output has
    ceil(H / stride) rows, splitting odd padding with the extra row at the
    bottom/right. The kernel loop runs over kernel offsets, each step being
    one strided slice times a (C_in, C_out) matrix.
    """

    def __init__(
        self,
        name: str,
        filters: int,
        kernel_size: int,
        stride: int = 1,
        padding: str = "valid",
    ):
        super().__init__(name)
        if stride < 1:
            raise ConfigError(f"Layer '{name}': stride must be >= 1, got {stride}")
        if padding not in ("valid", "same"):
            raise ConfigError(f"Layer '{name}': unknown padding '{padding}'")
        self.filters = filters
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding

    def _geometry(self, input_shape: Shape) -> Tuple[int, int, Tuple[int, int, int, int]]:
        if len(input_shape) != 3:
            raise ConfigError(
                f"Layer '{self.name}' expects an (H, W, C) input, got shape {input_shape}"
            )
        h, w, _ = input_shape
        k, s = self.kernel_size, self.stride
        if self.padding == "same":
            oh, ow = math.ceil(h / s), math.ceil(w / s)
            pad_h = max((oh - 1) * s + k - h, 0)
            pad_w = max((ow - 1) * s + k - w, 0)
            pads = (pad_h // 2, pad_h - pad_h // 2, pad_w // 2, pad_w - pad_w // 2)
        else:
            oh, ow = (h - k) // s + 1, (w - k) // s + 1
            pads = (0, 0, 0, 0)
        if oh < 1 or ow < 1:
            raise ConfigError(
                f"Layer '{self.name}': kernel {k} does not fit input {input_shape}"
            )
        return oh, ow, pads

    def output_shape(self, input_shape: Shape) -> Shape:
        oh, ow, _ = self._geometry(input_shape)
        return (oh, ow, self.filters)

    def param_shapes(self, input_shape: Shape) -> Dict[str, Shape]:
        k = self.kernel_size
        return {"weight": (k, k, input_shape[2], self.filters), "bias": (self.filters,)}

    def fan_in(self, input_shape: Shape) -> int:
        return self.kernel_size * self.kernel_size * input_shape[2]

    def forward(self, params: Params, x: Tensor) -> Tuple[Tensor, Any]:
        weight = params[self.key("weight")]
        oh, ow, (top, bottom, left, right) = self._geometry(x.shape[1:])
        xp = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
        s = self.stride
        out = np.zeros((x.shape[0], oh, ow, self.filters))
        for i in range(self.kernel_size):
            for j in range(self.kernel_size):
                patch = xp[:, i:i + s * oh:s, j:j + s * ow:s, :]
                out += patch @ weight[i, j]
        out += params[self.key("bias")]
        return out, (xp, x.shape, (oh, ow, top, left))

    def backward(self, params, cache, dout, need_params=True):
        xp, x_shape, (oh, ow, top, left) = cache
        weight = params[self.key("weight")]
        s = self.stride
        dxp = np.zeros_like(xp)
        dweight = np.zeros_like(weight) if need_params else None
        for i in range(self.kernel_size):
            for j in range(self.kernel_size):
                window = (slice(None), slice(i, i + s * oh, s), slice(j, j + s * ow, s))
                if need_params:
                    dweight[i, j] = np.tensordot(
                        xp[window], dout, axes=([0, 1, 2], [0, 1, 2])
                    )
                dxp[window] += dout @ weight[i, j].T
        grads: Params = {}
        if need_params:
            grads[self.key("weight")] = dweight
            grads[self.key("bias")] = dout.sum(axis=(0, 1, 2))
        dx = dxp[:, top:top + x_shape[1], left:left + x_shape[2], :]
        return dx, grads


class ReLU(Layer):
    """Rectifier; the subgradient at exactly 0 is 0."""

    def forward(self, params, x):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, params, cache, dout, need_params=True):
        return np.where(cache, dout, 0.0), {}


class MaxPool2x2(Layer):
    """
    2x2 max-pool with stride 2. Odd trailing rows/columns are dropped.

    Ties route the gradient to the first maximal element in row-major
    order within the window.
    """

    def output_shape(self, input_shape: Shape) -> Shape:
        if len(input_shape) != 3:
            raise ConfigError(
                f"Layer '{self.name}' expects an (H, W, C) input, got shape {input_shape}"
            )
        h, w, c = input_shape
        if h < 2 or w < 2:
            raise ConfigError(f"Layer '{self.name}': input {input_shape} too small to pool")
        return (h // 2, w // 2, c)

    def forward(self, params, x):
        b, h, w, c = x.shape
        oh, ow = h // 2, w // 2
        windows = (
            x[:, :2 * oh, :2 * ow, :]
            .reshape(b, oh, 2, ow, 2, c)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(b, oh, ow, c, 4)
        )
        winner = windows.argmax(axis=-1)
        out = np.take_along_axis(windows, winner[..., None], axis=-1)[..., 0]
        return out, (x.shape, winner)

    def backward(self, params, cache, dout, need_params=True):
        x_shape, winner = cache
        b, h, w, c = x_shape
        oh, ow = h // 2, w // 2
        routed = np.zeros((b, oh, ow, c, 4))
        np.put_along_axis(routed, winner[..., None], dout[..., None], axis=-1)
        dx = np.zeros(x_shape)
        dx[:, :2 * oh, :2 * ow, :] = (
            routed.reshape(b, oh, ow, c, 2, 2)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(b, 2 * oh, 2 * ow, c)
        )
        return dx, {}


class Flatten(Layer):
    """Collapse every non-batch axis."""

    def output_shape(self, input_shape: Shape) -> Shape:
        return (int(np.prod(input_shape)),)

    def forward(self, params, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, cache, dout, need_params=True):
        return dout.reshape(cache), {}


@dataclass
class ComputationTrace:
    """
    Ordered record of the primitives applied in one forward pass.

    Each entry keeps the cached intermediates its backward step needs;
    backward() replays the entries in reverse, visiting each exactly once.
    """
    entries: List[Tuple[Layer, Any]] = field(default_factory=list)

    def record(self, layer: Layer, cache: Any) -> None:
        self.entries.append((layer, cache))

    def backward(
        self, params: Params, dout: Tensor, need_params: bool = True
    ) -> Tuple[Tensor, Params]:
        grads: Params = {}
        for layer, cache in reversed(self.entries):
            dout, layer_grads = layer.backward(params, cache, dout, need_params)
            grads.update(layer_grads)
        return dout, grads


def chain_shapes(layers: Sequence[Layer], input_shape: Shape) -> List[Shape]:
    """
    Propagate input_shape through layers.

    Returns the input shape of every layer followed by the output shape.

    Raises:
        ConfigError: If a layer cannot accept its predecessor's output
    """
    shapes = [tuple(input_shape)]
    for layer in layers:
        shapes.append(tuple(layer.output_shape(shapes[-1])))
    if len(shapes[-1]) != 1:
        raise ConfigError(f"Network must end in a flat logit layer, got shape {shapes[-1]}")
    return shapes


def init_params(
    layers: Sequence[Layer], input_shape: Shape, rng: np.random.Generator
) -> Params:
    """Scaled-uniform initialization: every entry drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    shapes = chain_shapes(layers, input_shape)
    params: Params = {}
    for layer, in_shape in zip(layers, shapes):
        bound = 1.0 / math.sqrt(layer.fan_in(in_shape))
        for pname, pshape in layer.param_shapes(in_shape).items():
            params[layer.key(pname)] = rng.uniform(-bound, bound, size=pshape)
    return params


class Network:
    """
    A fixed stack of primitive layers with named, read-only parameters.

    Forward and backward passes are pure functions of (params, input), so
    one Network can be evaluated from several threads at once.
    """

    def __init__(self, layers: Sequence[Layer], input_shape: Shape, params: Params):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self._shapes = chain_shapes(self.layers, self.input_shape)
        self.params = self._check_params(params)

    def _check_params(self, params: Params) -> Params:
        expected: Dict[str, Shape] = {}
        for layer, in_shape in zip(self.layers, self._shapes):
            for pname, pshape in layer.param_shapes(in_shape).items():
                expected[layer.key(pname)] = tuple(pshape)

        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        if missing or extra:
            raise ConfigError(f"Parameter mismatch: missing={missing} unexpected={extra}")

        checked: Params = {}
        for key, shape in expected.items():
            value = np.array(params[key], dtype=np.float64)
            if value.shape != shape:
                raise ConfigError(
                    f"Parameter '{key}' has shape {value.shape}, expected {shape}"
                )
            if not np.all(np.isfinite(value)):
                raise ConfigError(f"Parameter '{key}' contains non-finite values")
            value.setflags(write=False)
            checked[key] = value
        return checked

    @property
    def num_classes(self) -> int:
        return self._shapes[-1][0]

    def parameter_shapes(self) -> Dict[str, Shape]:
        return {key: value.shape for key, value in self.params.items()}

    def trace(self, x: Tensor) -> Tuple[Tensor, ComputationTrace]:
        """Run a forward pass and return (logits, trace)."""
        x = as_tensor(x)
        if x.ndim != len(self.input_shape) + 1 or x.shape[1:] != self.input_shape:
            first = self.layers[0].name if self.layers else "<input>"
            raise ConfigError(
                f"Layer '{first}' expects input shape (batch, "
                f"{', '.join(map(str, self.input_shape))}), got {x.shape}"
            )
        trace = ComputationTrace()
        out = x
        for layer in self.layers:
            out, cache = layer.forward(self.params, out)
            trace.record(layer, cache)
        return out, trace

    def logits(self, x: Tensor) -> Tensor:
        return self.trace(x)[0]

    def input_vjp(self, x: Tensor, dlogits: Tensor) -> Tensor:
        """Pull a logit-space cotangent back to the input."""
        _, trace = self.trace(x)
        dx, _ = trace.backward(self.params, as_tensor(dlogits), need_params=False)
        return dx

    def input_gradient(self, x: Tensor, labels: Any, reduction: str = "sum") -> Tensor:
        return grad_input(self, x, labels, reduction=reduction)


def softmax(logits: Tensor) -> Tensor:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def check_labels(labels: Any, num_classes: int, batch: Optional[int] = None) -> np.ndarray:
    """
    Validate class labels.

    Raises:
        InputError: If a label is outside [0, num_classes) or the count is wrong
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        labels = labels.reshape(0).astype(np.int64)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise InputError(f"Labels must be a 1-D integer sequence, got {labels.dtype} {labels.shape}")
    if batch is not None and labels.shape[0] != batch:
        raise InputError(f"Got {labels.shape[0]} labels for a batch of {batch}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InputError(f"Labels must lie in [0, {num_classes}), got {labels.min()}..{labels.max()}")
    return labels.astype(np.int64)


def loss_cross_entropy(logits: Tensor, labels: Any) -> Tuple[Tensor, float]:
    """
    Softmax cross-entropy with max-subtraction.

    Returns:
        (per-example losses, mean loss)

    Raises:
        InputError: If a label is out of range
    """
    logits = as_tensor(logits)
    labels = check_labels(labels, logits.shape[-1], logits.shape[0])
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1))
    losses = log_norm - shifted[np.arange(logits.shape[0]), labels]
    return losses, float(losses.mean())


def loss_gradient(logits: Tensor, labels: Any, reduction: str = "mean") -> Tensor:
    """Gradient of the fused softmax cross-entropy: softmax(logits) - onehot(labels)."""
    labels = check_labels(labels, logits.shape[-1], logits.shape[0])
    dlogits = softmax(logits)
    dlogits[np.arange(logits.shape[0]), labels] -= 1.0
    if reduction == "mean":
        dlogits /= logits.shape[0]
    elif reduction != "sum":
        raise ConfigError(f"Unknown reduction '{reduction}'")
    return dlogits


def forward(network: Network, x: Tensor) -> Tensor:
    """Pre-softmax logits of network on the batch x."""
    return network.logits(x)


def grad_input(network: Network, x: Tensor, labels: Any, reduction: str = "mean") -> Tensor:
    """
    Gradient of the cross-entropy loss with respect to the input batch.

    With reduction="mean" this is the gradient of the mean loss; with
    reduction="sum" every example's slab is its own loss gradient.
    """
    logits, trace = network.trace(x)
    dlogits = loss_gradient(logits, labels, reduction)
    dx, _ = trace.backward(network.params, dlogits, need_params=False)
    return dx


def grad_params(network: Network, x: Tensor, labels: Any) -> Params:
    """Gradient of the mean cross-entropy loss with respect to every parameter."""
    logits, trace = network.trace(x)
    dlogits = loss_gradient(logits, labels, "mean")
    _, grads = trace.backward(network.params, dlogits, need_params=True)
    return grads


def finite_diff_grad(f: Callable[[Tensor], float], x: Tensor, h: float = 1e-5) -> Tensor:
    """
    Central-difference gradient of a scalar function.

    Raises:
        ConfigError: If h is not positive
    """
    if h <= 0:
        raise ConfigError(f"Finite-difference step must be positive, got {h}")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        f_plus = f(x)
        flat[i] = original - h
        f_minus = f(x)
        flat[i] = original
        out[i] = (f_plus - f_minus) / (2 * h)
    return grad
