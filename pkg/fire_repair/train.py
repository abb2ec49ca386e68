"""
Desk-scale training for layered models.

Mini-batch SGD with momentum, L2 weight decay on weights, and a cosine learning-rate
schedule. Shuffling uses a generator seeded from ``Hyperparams.seed``, so a run is
deterministic given the initial model and the seed.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax
from tqdm import tqdm

from fire_repair.dataset import LabeledImages
from fire_repair.errors import EmptyInputError, ParameterError, ShapeError, TrainingDivergedError
from fire_repair.model import LayeredModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Hyperparams:
    """Training hyperparameters."""

    epochs: int = 20
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    weight_decay: float = 5e-4
    seed: int = 0
    progress: bool = False  # show a tqdm bar over epochs

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.weight_decay < 0:
            raise ParameterError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    accuracy: float
    learning_rate: float


@dataclass
class TrainingRun:
    model: LayeredModel
    history: list[EpochStats] = field(default_factory=list)
    seconds: float = 0.0  # wall time of the epoch loop


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    n = logits.shape[0]
    log_probs = log_softmax(logits.astype(np.float64), axis=1)
    rows = np.arange(n)
    loss = float(-log_probs[rows, labels].mean())
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype)


def _validate(model: LayeredModel, data: LabeledImages) -> None:
    if len(data) == 0:
        raise EmptyInputError("Cannot train on an empty dataset")
    if data.images.shape[1:] != model.input_shape:
        raise ShapeError(f"Dataset image shape {data.images.shape[1:]} does not match model input {model.input_shape}")
    if data.labels.min() < 0 or data.labels.max() >= model.num_classes:
        raise ParameterError(f"Labels must lie in [0, {model.num_classes}), got range "
                             f"[{data.labels.min()}, {data.labels.max()}]")


def fit(model: LayeredModel, data: LabeledImages, hyperparams: Hyperparams | None = None) -> TrainingRun:
    """Train a copy of ``model`` and return it with per-epoch statistics.

    Raises:
        EmptyInputError: If ``data`` holds no samples.
        TrainingDivergedError: If the loss becomes NaN or infinite.
    """
    hp = hyperparams or Hyperparams()
    _validate(model, data)

    layers = [layer.copy() for layer in model.layers]
    velocity = {(i, name): np.zeros_like(layer.params[name])
                for i, layer in enumerate(layers) for name in layer.param_names}
    rng = np.random.default_rng(hp.seed)
    images = data.images.astype(np.float32, copy=False)
    labels = data.labels.astype(np.int64, copy=False)
    n = len(labels)
    history: list[EpochStats] = []
    start_time = time.perf_counter()

    for epoch in tqdm(range(hp.epochs), desc="train", disable=not hp.progress):
        lr = 0.5 * hp.learning_rate * (1.0 + math.cos(math.pi * epoch / max(hp.epochs, 1)))
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, hp.batch_size):
            idx = order[start:start + hp.batch_size]
            a = images[idx]
            caches = []
            for layer in layers:
                a, cache = layer.forward(a)
                caches.append(cache)
            loss, grad = softmax_cross_entropy(a, labels[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"Loss became {loss} at epoch {epoch + 1}, batch starting {start}")
            total_loss += loss * len(idx)
            correct += int((a.argmax(axis=1) == labels[idx]).sum())

            for i in range(len(layers) - 1, -1, -1):
                layer = layers[i]
                grad, grads = layer.backward(caches[i], grad)
                for name, g in grads.items():
                    param = layer.params[name]
                    if name == "weight" and hp.weight_decay:
                        g = g + hp.weight_decay * param
                    v = velocity[(i, name)]
                    v *= hp.momentum
                    v += g
                    param -= (lr * v).astype(param.dtype)

        stats = EpochStats(epoch=epoch + 1, loss=total_loss / n, accuracy=correct / n, learning_rate=lr)
        history.append(stats)
        logger.info("epoch %d/%d loss=%.4f acc=%.4f lr=%.4f",
                    stats.epoch, hp.epochs, stats.loss, stats.accuracy, lr)

    return TrainingRun(model=model.with_layers(layers), history=history, seconds=time.perf_counter() - start_time)


def train(model: LayeredModel, data: LabeledImages, hyperparams: Hyperparams | None = None) -> LayeredModel:
    """Train a copy of ``model``; the input model is left untouched."""
    return fit(model, data, hyperparams).model
