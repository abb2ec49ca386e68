"""
Layer implementations for the layered network engine.

Every layer works on batches (leading axis = samples) and exposes a pure pair:

    forward(x)              -> (y, cache)
    backward(cache, grad_y) -> (grad_x, {param_name: grad})

Layers never modify their own parameters; the trainer owns updates. Arithmetic follows
the dtype of the input, so float64 inputs give float64 gradients (used by gradient checks).

Supported kinds: dense, conv2d, relu, maxpool2d, flatten.
"""

from __future__ import annotations

import copy
from enum import Enum
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from fire_repair.errors import ParameterError, ShapeError

Shape = tuple[int, ...]


class LayerKind(str, Enum):
    """Layer kinds understood by the engine and the checkpoint format."""
    DENSE     = "dense"
    CONV2D    = "conv2d"
    RELU      = "relu"
    MAXPOOL2D = "maxpool2d"
    FLATTEN   = "flatten"


class Layer:
    """Base class. Subclasses set ``kind`` and ``param_names``."""

    kind: LayerKind
    param_names: tuple[str, ...] = ()

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}

    def output_shape(self, input_shape: Shape) -> Shape:
        raise NotImplementedError

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, cache: Any, grad: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        raise NotImplementedError

    def spec(self) -> dict[str, Any]:
        """JSON-serializable description (without parameter values)."""
        return {"kind": self.kind.value}

    def param_shapes(self) -> dict[str, Shape]:
        return {}

    def init_params(self, rng: np.random.Generator) -> None:
        """He-normal weights, zero biases. No-op for parameter-free layers."""
        shapes = self.param_shapes()
        if not shapes:
            return
        weight_shape = shapes["weight"]
        fan_in = int(np.prod(weight_shape[1:]))
        std = np.sqrt(2.0 / fan_in)
        self.params = {
            "weight": (rng.standard_normal(weight_shape) * std).astype(np.float32),
            "bias": np.zeros(shapes["bias"], dtype=np.float32),
        }

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        expected = self.param_shapes()
        if set(params) != set(expected):
            raise ShapeError(f"{self.kind.value}: expected parameters {sorted(expected)}, got {sorted(params)}")
        for name, shape in expected.items():
            if tuple(params[name].shape) != shape:
                raise ShapeError(
                    f"{self.kind.value}.{name}: expected shape {shape}, got {tuple(params[name].shape)}"
                )
        self.params = {name: np.asarray(params[name]) for name in self.param_names}

    def copy(self) -> Layer:
        return copy.deepcopy(self)

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v}" for k, v in self.spec().items() if k != "kind")
        return f"{type(self).__name__}({args})"


class Dense(Layer):
    kind = LayerKind.DENSE
    param_names = ("weight", "bias")

    def __init__(self, in_features: int, out_features: int) -> None:
        super().__init__()
        if in_features < 1 or out_features < 1:
            raise ParameterError("dense: feature counts must be positive")
        self.in_features = in_features
        self.out_features = out_features
        self.params = {
            "weight": np.zeros((out_features, in_features), dtype=np.float32),
            "bias": np.zeros(out_features, dtype=np.float32),
        }

    def param_shapes(self) -> dict[str, Shape]:
        return {"weight": (self.out_features, self.in_features), "bias": (self.out_features,)}

    def output_shape(self, input_shape: Shape) -> Shape:
        if tuple(input_shape) != (self.in_features,):
            raise ShapeError(f"dense: expected input shape ({self.in_features},), got {tuple(input_shape)}")
        return (self.out_features,)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Any]:
        y = x @ self.params["weight"].T + self.params["bias"]
        return y, x

    def backward(self, cache: Any, grad: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        x = cache
        grads = {"weight": grad.T @ x, "bias": grad.sum(axis=0)}
        return grad @ self.params["weight"], grads

    def spec(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "in_features": self.in_features, "out_features": self.out_features}


class Conv2d(Layer):
    """2-D cross-correlation over (N, C, H, W) batches, square kernels."""

    kind = LayerKind.CONV2D
    param_names = ("weight", "bias")

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, padding: int = 0) -> None:
        super().__init__()
        if min(in_channels, out_channels, kernel_size, stride) < 1 or padding < 0:
            raise ParameterError("conv2d: channels, kernel size and stride must be positive, padding >= 0")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        k = kernel_size
        self.params = {
            "weight": np.zeros((out_channels, in_channels, k, k), dtype=np.float32),
            "bias": np.zeros(out_channels, dtype=np.float32),
        }

    def param_shapes(self) -> dict[str, Shape]:
        k = self.kernel_size
        return {"weight": (self.out_channels, self.in_channels, k, k), "bias": (self.out_channels,)}

    def output_shape(self, input_shape: Shape) -> Shape:
        if len(input_shape) != 3 or input_shape[0] != self.in_channels:
            raise ShapeError(
                f"conv2d: expected input shape ({self.in_channels}, H, W), got {tuple(input_shape)}"
            )
        _, h, w = input_shape
        ho = (h + 2 * self.padding - self.kernel_size) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel_size) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d: input {tuple(input_shape)} too small for kernel {self.kernel_size}")
        return (self.out_channels, ho, wo)

    def _windows(self, x: np.ndarray) -> tuple[np.ndarray, Shape]:
        p, k, s = self.padding, self.kernel_size, self.stride
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        # (N, C, Ho, Wo, k, k)
        windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        return windows, xp.shape

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Any]:
        windows, padded_shape = self._windows(x)
        y = np.einsum("nchwij,ocij->nohw", windows, self.params["weight"], optimize=True)
        y = y + self.params["bias"][None, :, None, None]
        return y, (windows, padded_shape)

    def backward(self, cache: Any, grad: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        windows, padded_shape = cache
        p, k, s = self.padding, self.kernel_size, self.stride
        weight = self.params["weight"]
        grads = {
            "weight": np.einsum("nohw,nchwij->ocij", grad, windows, optimize=True),
            "bias": grad.sum(axis=(0, 2, 3)),
        }
        grad_xp = np.zeros(padded_shape, dtype=np.result_type(grad, weight))
        ho, wo = grad.shape[2], grad.shape[3]
        for i in range(k):
            for j in range(k):
                contrib = np.einsum("nohw,oc->nchw", grad, weight[:, :, i, j], optimize=True)
                grad_xp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += contrib
        if p:
            grad_xp = grad_xp[:, :, p:padded_shape[2] - p, p:padded_shape[3] - p]
        return grad_xp, grads

    def spec(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "padding": self.padding,
        }


class ReLU(Layer):
    kind = LayerKind.RELU

    def output_shape(self, input_shape: Shape) -> Shape:
        return tuple(input_shape)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Any]:
        mask = x > 0
        return np.where(mask, x, 0).astype(x.dtype, copy=False), mask

    def backward(self, cache: Any, grad: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        return grad * cache, {}


class MaxPool2d(Layer):
    kind = LayerKind.MAXPOOL2D

    def __init__(self, kernel_size: int = 2, stride: int | None = None) -> None:
        super().__init__()
        self.kernel_size = kernel_size
        self.stride = stride if stride is not None else kernel_size
        if self.kernel_size < 1 or self.stride < 1:
            raise ParameterError("maxpool2d: kernel size and stride must be positive")

    def output_shape(self, input_shape: Shape) -> Shape:
        if len(input_shape) != 3:
            raise ShapeError(f"maxpool2d: expected (C, H, W) input, got {tuple(input_shape)}")
        c, h, w = input_shape
        k, s = self.kernel_size, self.stride
        if h < k or w < k:
            raise ShapeError(f"maxpool2d: input {tuple(input_shape)} smaller than kernel {k}")
        return (c, (h - k) // s + 1, (w - k) // s + 1)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Any]:
        k, s = self.kernel_size, self.stride
        windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        flat = windows.reshape(*windows.shape[:4], k * k)
        # argmax picks the first maximum, so gradient ties go to the top-left element
        idx = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        return y, (x.shape, idx)

    def backward(self, cache: Any, grad: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        input_shape, idx = cache
        k, s = self.kernel_size, self.stride
        n, c, ho, wo = grad.shape
        di, dj = np.divmod(idx, k)
        rows = np.arange(ho)[None, None, :, None] * s + di
        cols = np.arange(wo)[None, None, None, :] * s + dj
        batch = np.arange(n)[:, None, None, None]
        chan = np.arange(c)[None, :, None, None]
        grad_x = np.zeros(input_shape, dtype=grad.dtype)
        np.add.at(grad_x, (batch, chan, rows, cols), grad)
        return grad_x, {}

    def spec(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "kernel_size": self.kernel_size, "stride": self.stride}


class Flatten(Layer):
    kind = LayerKind.FLATTEN

    def output_shape(self, input_shape: Shape) -> Shape:
        return (int(np.prod(input_shape)),)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Any]:
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache: Any, grad: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        return grad.reshape(cache), {}


_LAYER_TYPES: dict[LayerKind, type[Layer]] = {
    LayerKind.DENSE: Dense,
    LayerKind.CONV2D: Conv2d,
    LayerKind.RELU: ReLU,
    LayerKind.MAXPOOL2D: MaxPool2d,
    LayerKind.FLATTEN: Flatten,
}


def layer_from_spec(spec: dict[str, Any]) -> Layer:
    """Build an (unparameterized) layer from its ``spec()`` dict."""
    try:
        kind = LayerKind(spec["kind"])
    except (KeyError, ValueError):
        raise ShapeError(f"Unknown layer spec: {spec!r}") from None
    kwargs = {k: v for k, v in spec.items() if k != "kind"}
    try:
        return _LAYER_TYPES[kind](**kwargs)
    except TypeError as exc:
        raise ShapeError(f"Bad parameters for {kind.value} layer: {exc}") from None
