"""
Synthetic desk-scale image datasets and their on-disk format.

Each class draws images from its own seeded distribution: an oriented sinusoidal
texture (orientation and frequency per class), a class tint, a soft blob at a random
position away from the bottom-right corner, and pixel noise. Images are (C, H, W)
float32 in [0, 1]; labels are class indices.

On disk a dataset is a directory:

    index.json    shape, class count, split sizes, seed, digest
    images.f32    little-endian float32 images, train split then test split
    labels.u16    little-endian uint16 labels in the same order
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fire_repair.errors import EmptyInputError, FormatError, ParameterError

logger = logging.getLogger(__name__)

DATASET_FORMAT = "fire-dataset/1"


@dataclass(frozen=True, eq=False)
class LabeledImages:
    """A batch of images with their labels."""

    images: np.ndarray  # (N, C, H, W) float32
    labels: np.ndarray  # (N,) int64

    def __post_init__(self) -> None:
        if len(self.images) != len(self.labels):
            raise ParameterError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def subset(self, indices: np.ndarray) -> LabeledImages:
        return LabeledImages(self.images[indices], self.labels[indices])

    def where(self, mask: np.ndarray) -> LabeledImages:
        return self.subset(np.flatnonzero(mask))

    def sample(self, count: int, seed: int) -> LabeledImages:
        """``count`` distinct entries chosen by a seeded generator."""
        if count > len(self):
            raise EmptyInputError(f"Requested {count} samples from a set of {len(self)}")
        idx = np.sort(np.random.default_rng(seed).choice(len(self), size=count, replace=False))
        return self.subset(idx)


@dataclass(frozen=True, eq=False)
class Dataset:
    train: LabeledImages
    test: LabeledImages
    num_classes: int
    seed: int

    @property
    def image_shape(self) -> tuple[int, ...]:
        return self.train.image_shape

    def digest(self) -> str:
        return dataset_digest(self)


def _balanced_labels(n: int, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n) % num_classes).astype(np.int64)


def _render(labels: np.ndarray, prototypes: dict[str, np.ndarray], shape: tuple[int, int, int],
            rng: np.random.Generator) -> np.ndarray:
    c, h, w = shape
    n = len(labels)
    yy, xx = np.mgrid[0:h, 0:w]
    yy = (yy / h)[None]
    xx = (xx / w)[None]

    theta = prototypes["angles"][labels] + rng.normal(0.0, 0.08, n)
    freq = prototypes["freqs"][labels] * rng.uniform(0.9, 1.1, n)
    phase = rng.uniform(0.0, 2 * np.pi, n)
    proj = np.cos(theta)[:, None, None] * xx + np.sin(theta)[:, None, None] * yy
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * freq[:, None, None] * proj + phase[:, None, None])

    # blob centres stay clear of the bottom-right corner where the patch trigger goes
    centres = rng.uniform(0.2, 0.65, size=(n, 2))
    dist2 = (yy - centres[:, 0, None, None]) ** 2 + (xx - centres[:, 1, None, None]) ** 2
    blob = np.exp(-dist2 / (2 * 0.12 ** 2))

    tint = prototypes["palette"][labels] + rng.normal(0.0, 0.05, size=(n, c))
    images = (
        0.15
        + 0.45 * stripes[:, None] * tint[:, :, None, None]
        + 0.25 * blob[:, None] * (1.0 - tint)[:, :, None, None]
    )
    images += rng.normal(0.0, 0.04, size=images.shape)
    return np.clip(images, 0.0, 1.0).astype(np.float32)


def generate_synthetic(
    seed: int,
    num_classes: int = 4,
    image_size: int = 16,
    channels: int = 3,
    train_size: int = 4000,
    test_size: int = 1000,
) -> Dataset:
    """Generate a seeded class-conditional texture/blob dataset."""
    if num_classes < 2:
        raise ParameterError(f"num_classes must be >= 2, got {num_classes}")
    if train_size < 1 or test_size < 0:
        raise ParameterError("train_size must be >= 1 and test_size >= 0")
    rng = np.random.default_rng(seed)
    prototypes = {
        "angles": np.arange(num_classes) * np.pi / num_classes,
        "freqs": rng.uniform(1.5, 3.0, size=num_classes),
        "palette": rng.uniform(0.25, 0.75, size=(num_classes, channels)),
    }
    shape = (channels, image_size, image_size)
    splits = []
    for n in (train_size, test_size):
        labels = _balanced_labels(n, num_classes, rng)
        splits.append(LabeledImages(_render(labels, prototypes, shape, rng), labels))
    logger.debug("generated dataset seed=%d train=%d test=%d", seed, train_size, test_size)
    return Dataset(train=splits[0], test=splits[1], num_classes=num_classes, seed=seed)


def _payload(dataset: Dataset) -> tuple[bytes, bytes]:
    images = np.concatenate([dataset.train.images, dataset.test.images]).astype("<f4")
    labels = np.concatenate([dataset.train.labels, dataset.test.labels]).astype("<u2")
    return images.tobytes(), labels.tobytes()


def dataset_digest(dataset: Dataset) -> str:
    """SHA-256 over the image and label payloads."""
    images, labels = _payload(dataset)
    return hashlib.sha256(images + labels).hexdigest()


def save_dataset(dataset: Dataset, directory: str | Path) -> str:
    """Write the dataset directory and return its digest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    images, labels = _payload(dataset)
    digest = hashlib.sha256(images + labels).hexdigest()
    index = {
        "format": DATASET_FORMAT,
        "shape": list(dataset.image_shape),
        "num_classes": dataset.num_classes,
        "splits": {"train": len(dataset.train), "test": len(dataset.test)},
        "seed": dataset.seed,
        "digest": digest,
    }
    (directory / "images.f32").write_bytes(images)
    (directory / "labels.u16").write_bytes(labels)
    (directory / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True), encoding="utf-8")
    logger.debug("wrote dataset to %s (%s)", directory, digest[:12])
    return digest


def load_dataset(directory: str | Path) -> Dataset:
    """Read a dataset directory written by ``save_dataset``.

    Raises:
        FileNotFoundError: If the directory or its files are missing.
        FormatError: If the payload sizes do not match the index.
    """
    directory = Path(directory)
    try:
        index = json.loads((directory / "index.json").read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"Bad dataset index in {directory}: {exc}") from None
    if index.get("format") != DATASET_FORMAT:
        raise FormatError(f"Unsupported dataset format {index.get('format')!r}")
    shape = tuple(index["shape"])
    n_train, n_test = index["splits"]["train"], index["splits"]["test"]
    total = n_train + n_test
    images = np.frombuffer((directory / "images.f32").read_bytes(), dtype="<f4")
    labels = np.frombuffer((directory / "labels.u16").read_bytes(), dtype="<u2")
    if images.size != total * int(np.prod(shape)) or labels.size != total:
        raise FormatError(f"Dataset payload in {directory} does not match its index")
    images = images.astype(np.float32).reshape((total, *shape))
    labels = labels.astype(np.int64)
    dataset = Dataset(
        train=LabeledImages(images[:n_train], labels[:n_train]),
        test=LabeledImages(images[n_train:], labels[n_train:]),
        num_classes=int(index["num_classes"]),
        seed=int(index["seed"]),
    )
    if dataset_digest(dataset) != index["digest"]:
        raise FormatError(f"Dataset digest mismatch in {directory}")
    return dataset
