"""
Pytest configuration for fire_repair tests.

Small hand-built models keep the fast suite quick. Tests marked ``slow`` train the
desk-scale reference models; deselect them with ``-m "not slow"``.
"""

import numpy as np
import pytest

from fire_repair.config import ExperimentConfig, config_from_dict
from fire_repair.layers import ReLU
from fire_repair.model import LayeredModel, build_desk_model
from fire_repair.recipes import make_dataset, run_desk_experiment
from tests.helpers import dense, make_mlp


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def mlp():
    """dense(4->6) relu dense(6->3), taps at every layer."""
    return make_mlp(0, taps=(0, 1, 2))


@pytest.fixture
def affine_model():
    """Affine tap 0 (dense 4->4), then relu and a 3-class head."""
    rng = np.random.default_rng(7)
    layers = [
        dense(rng.normal(0, 1.0, (4, 4)), rng.normal(0, 0.1, 4)),
        ReLU(),
        dense(rng.normal(0, 1.0, (3, 4)), rng.normal(0, 0.1, 3)),
    ]
    return LayeredModel(layers, (4,), taps=(0,))


@pytest.fixture
def tiny_conv():
    """Desk architecture scaled down to 3x8x8 inputs and 3 classes."""
    return build_desk_model(0, image_shape=(3, 8, 8), num_classes=3, conv_channels=(2, 3), hidden=5)


@pytest.fixture
def tiny_config():
    """Config small enough for CLI round trips in a couple of seconds."""
    return config_from_dict({
        "seed": 3,
        "data": {"image_size": 8, "train_size": 200, "test_size": 80},
        "train": {"epochs": 1, "batch_size": 32},
        "stream": {"length": 12, "replicas": 2, "num_clean": 10, "num_pairs": 10, "warmup": 1,
                   "ablation_counts": [1, 5], "ablation_position": 3},
    })


_DESK_CACHE = {}


@pytest.fixture(scope="session")
def desk_dataset():
    return make_dataset(ExperimentConfig())


@pytest.fixture(scope="session")
def desk_experiment(desk_dataset):
    """Factory: trained desk experiment per attack kind, trained once per session."""

    def get(kind, seed=0):
        key = (kind, seed)
        if key not in _DESK_CACHE:
            _DESK_CACHE[key] = run_desk_experiment(kind, seed=seed, dataset=desk_dataset if seed == 0 else None)
        return _DESK_CACHE[key]

    return get
