"""
Layered model: f = f_{L-1} o ... o f_0 with named tap points.

A tap is a layer index l. ``forward_to`` returns h_l(x), the output of layer l, and
``forward_from`` evaluates the tail g_l (layers l+1 .. L-1) on a latent. For every tap,
``forward_from(model, forward_to(model, x, l), l)`` reproduces ``forward(model, x)``.

Single-sample functions take tensors in their native shape (C, H, W for images); the
``*_batch`` variants take a leading sample axis.
"""

from __future__ import annotations

import hashlib
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from fire_repair.errors import NumericalError, ShapeError, TapError
from fire_repair.layers import Conv2d, Dense, Flatten, Layer, LayerKind, MaxPool2d, ReLU, Shape, layer_from_spec


@dataclass(frozen=True, eq=False)
class PredictionOutcome:
    """Logits and the argmax label (lowest index wins ties)."""

    logits: np.ndarray
    label: int


def argmax_label(logits: np.ndarray) -> int:
    # np.argmax returns the first maximal index
    return int(np.argmax(logits))


def default_taps(layers: Sequence[Layer]) -> tuple[int, ...]:
    """Tap after every conv/dense layer except the classifier head."""
    weighted = [i for i, layer in enumerate(layers) if layer.kind in (LayerKind.CONV2D, LayerKind.DENSE)]
    return tuple(weighted[:-1]) if len(weighted) > 1 else tuple(weighted)


class LayeredModel:
    """An ordered stack of layers with declared tap points.

    Parameters are treated as immutable once the model is built; training returns a
    new model. All forward-family functions are safe to call concurrently.
    """

    def __init__(
        self,
        layers: Sequence[Layer],
        input_shape: Shape,
        taps: Iterable[int] | None = None,
        num_classes: int | None = None,
    ) -> None:
        if not layers:
            raise ShapeError("A model needs at least one layer")
        self.layers: tuple[Layer, ...] = tuple(layers)
        self.input_shape: Shape = tuple(int(d) for d in input_shape)

        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(tuple(layer.output_shape(shapes[-1])))
        # shapes[i + 1] is the output shape of layer i
        self._shapes: tuple[Shape, ...] = tuple(shapes)

        out_shape = self._shapes[-1]
        if len(out_shape) != 1:
            raise ShapeError(f"Final layer must produce a vector of logits, got shape {out_shape}")
        if num_classes is None:
            num_classes = out_shape[0]
        if out_shape[0] != num_classes:
            raise ShapeError(f"Final output dimension {out_shape[0]} does not match num_classes={num_classes}")
        self.num_classes = int(num_classes)

        taps = default_taps(self.layers) if taps is None else tuple(int(t) for t in taps)
        if any(b <= a for a, b in zip(taps, taps[1:])):
            raise TapError(f"Taps must be strictly increasing, got {list(taps)}")
        if any(t < 0 or t >= len(self.layers) for t in taps):
            raise TapError(f"Taps must lie in [0, {len(self.layers) - 1}], got {list(taps)}")
        self.taps: tuple[int, ...] = taps

    def __len__(self) -> int:
        return len(self.layers)

    def __repr__(self) -> str:
        return f"LayeredModel(layers={len(self.layers)}, input_shape={self.input_shape}, taps={list(self.taps)})"

    def latent_shape(self, tap: int) -> Shape:
        self.check_tap(tap)
        return self._shapes[tap + 1]

    def check_tap(self, tap: int) -> int:
        if tap not in self.taps:
            raise TapError(f"Unknown tap {tap}; model taps are {list(self.taps)}")
        return tap

    def run(self, x: np.ndarray, start: int = 0, stop: int | None = None) -> np.ndarray:
        """Apply layers[start:stop] to a batch. No shape validation."""
        a = x
        for layer in self.layers[start:stop]:
            a, _ = layer.forward(a)
        return a

    def parameters(self) -> list[np.ndarray]:
        """All parameter arrays in layer order (weight before bias)."""
        return [layer.params[name] for layer in self.layers for name in layer.param_names]

    def checksum(self) -> str:
        """SHA-256 over all parameter bytes; changes iff any parameter changes."""
        h = hashlib.sha256()
        for arr in self.parameters():
            h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return h.hexdigest()

    def architecture(self) -> list[dict[str, Any]]:
        return [layer.spec() for layer in self.layers]

    def with_layers(self, layers: Sequence[Layer]) -> LayeredModel:
        return LayeredModel(layers, self.input_shape, self.taps, self.num_classes)

    @classmethod
    def from_architecture(
        cls,
        architecture: Sequence[dict[str, Any]],
        input_shape: Shape,
        taps: Iterable[int] | None = None,
        num_classes: int | None = None,
    ) -> LayeredModel:
        return cls([layer_from_spec(spec) for spec in architecture], input_shape, taps, num_classes)


def _as_input(x: np.ndarray, shape: Shape, what: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float32)
    if arr.shape != shape:
        raise ShapeError(f"{what} shape mismatch: expected {shape}, got {arr.shape}")
    return arr


def _as_batch(x: np.ndarray, shape: Shape, what: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float32)
    if arr.shape[1:] != shape:
        raise ShapeError(f"{what} shape mismatch: expected (N, *{shape}), got {arr.shape}")
    return arr


def _check_finite(arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericalError("Forward pass produced non-finite values")
    return arr


def forward(model: LayeredModel, x: np.ndarray) -> PredictionOutcome:
    """Full forward pass on one sample."""
    arr = _as_input(x, model.input_shape, "input")
    logits = _check_finite(model.run(arr[None])[0])
    return PredictionOutcome(logits=logits, label=argmax_label(logits))


def forward_to(model: LayeredModel, x: np.ndarray, tap: int) -> np.ndarray:
    """h_tap(x): output of layer ``tap``, in its native shape."""
    model.check_tap(tap)
    arr = _as_input(x, model.input_shape, "input")
    return _check_finite(model.run(arr[None], 0, tap + 1)[0])


def forward_from(model: LayeredModel, z: np.ndarray, tap: int) -> PredictionOutcome:
    """g_tap(z): run the tail after layer ``tap``."""
    shape = model.latent_shape(tap)
    arr = _as_input(z, shape, "latent")
    logits = _check_finite(model.run(arr[None], tap + 1)[0])
    return PredictionOutcome(logits=logits, label=argmax_label(logits))


def forward_batch(model: LayeredModel, xs: np.ndarray) -> np.ndarray:
    """Logits for a batch of inputs, shape (N, num_classes)."""
    return _check_finite(model.run(_as_batch(xs, model.input_shape, "input")))


def predict_batch(model: LayeredModel, xs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Argmax labels for a batch, evaluated in chunks."""
    xs = _as_batch(xs, model.input_shape, "input")
    labels = [forward_batch(model, xs[i:i + batch_size]).argmax(axis=1) for i in range(0, len(xs), batch_size)]
    return np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64)


def forward_to_batch(model: LayeredModel, xs: np.ndarray, tap: int) -> np.ndarray:
    model.check_tap(tap)
    return _check_finite(model.run(_as_batch(xs, model.input_shape, "input"), 0, tap + 1))


def forward_from_batch(model: LayeredModel, zs: np.ndarray, tap: int) -> np.ndarray:
    """Tail logits for a batch of latents at ``tap``."""
    shape = model.latent_shape(tap)
    return _check_finite(model.run(_as_batch(zs, shape, "latent"), tap + 1))


def collect_latents(
    model: LayeredModel, xs: np.ndarray, taps: Iterable[int] | None = None
) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """One pass over a batch returning logits and the latents at every requested tap."""
    taps = model.taps if taps is None else tuple(taps)
    for tap in taps:
        model.check_tap(tap)
    wanted = set(taps)
    a = _as_batch(xs, model.input_shape, "input")
    latents: dict[int, np.ndarray] = {}
    for i, layer in enumerate(model.layers):
        a, _ = layer.forward(a)
        if i in wanted:
            latents[i] = _check_finite(a)
    return _check_finite(a), latents


def build_desk_model(
    seed: int,
    image_shape: Shape = (3, 16, 16),
    num_classes: int = 4,
    conv_channels: tuple[int, int] = (8, 16),
    hidden: int = 64,
) -> LayeredModel:
    """conv-relu-pool-conv-relu-pool-flatten-dense-relu-dense with taps after conv1, conv2, dense hidden.

    Layer indices: 0 conv1, 1 relu, 2 pool, 3 conv2, 4 relu, 5 pool, 6 flatten,
    7 dense hidden, 8 relu, 9 dense head.
    """
    c, h, w = image_shape
    c1, c2 = conv_channels
    layers: list[Layer] = [
        Conv2d(c, c1, kernel_size=3, padding=1),
        ReLU(),
        MaxPool2d(2),
        Conv2d(c1, c2, kernel_size=3, padding=1),
        ReLU(),
        MaxPool2d(2),
        Flatten(),
        Dense(c2 * (h // 4) * (w // 4), hidden),
        ReLU(),
        Dense(hidden, num_classes),
    ]
    rng = np.random.default_rng(seed)
    for layer in layers:
        layer.init_params(rng)
    return LayeredModel(layers, image_shape, taps=(0, 3, 7), num_classes=num_classes)
