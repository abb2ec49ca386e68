"""Model builders shared by the test modules."""

import numpy as np

from fire_repair.layers import Dense, ReLU
from fire_repair.model import LayeredModel


def dense(weight, bias=None):
    """Dense layer with the given weight matrix (out, in)."""
    weight = np.asarray(weight, dtype=np.float32)
    layer = Dense(weight.shape[1], weight.shape[0])
    bias = np.zeros(weight.shape[0], dtype=np.float32) if bias is None else np.asarray(bias, dtype=np.float32)
    layer.set_params({"weight": weight, "bias": bias})
    return layer


def make_mlp(seed, sizes=(4, 6, 3), taps=None):
    rng = np.random.default_rng(seed)
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        if i:
            layers.append(ReLU())
        layers.append(dense(rng.normal(0, 0.7, (n_out, n_in)), rng.normal(0, 0.1, n_out)))
    return LayeredModel(layers, (sizes[0],), taps=taps)


def constant_model(label, num_classes=3, input_dim=4):
    """Ignores its input and always predicts ``label``; taps at both dense layers."""
    bias = np.zeros(num_classes, dtype=np.float32)
    bias[label] = 1.0
    layers = [
        dense(np.eye(input_dim)),
        ReLU(),
        dense(np.zeros((num_classes, input_dim)), bias),
    ]
    return LayeredModel(layers, (input_dim,), taps=(0, 2))
