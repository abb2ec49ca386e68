"""
Image augmentation and corruption operators.

These serve as the corruption operator of the augmentation-based direction estimate,
and ShrinkPad doubles as a standalone input-space baseline. Every operator returns a
new (C, H, W) image clamped to [0, 1] and is deterministic given its seed.

Usage:
    from fire_repair.augment import AugmentChain, default_chain
    chain = default_chain()               # color jitter, then Gaussian blur
    x_aug = chain.apply(x, seed=123)
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any

import numpy as np
from scipy.ndimage import correlate

from fire_repair.errors import ParameterError
from fire_repair.resample import resize_bilinear

logger = logging.getLogger(__name__)


class AugmentKind(str, Enum):
    COLOR_JITTER   = "color_jitter"
    GAUSSIAN_BLUR  = "gaussian_blur"
    GAUSSIAN_NOISE = "gaussian_noise"
    SHRINK_PAD     = "shrink_pad"


@dataclass(frozen=True)
class Augmentation:
    """One augmentation step. Only the fields of its ``kind`` are read.

    Attributes:
        brightness: Multiplicative brightness factor drawn from [1 - b, 1 + b] (color_jitter).
        contrast: Contrast factor drawn from [1 - c, 1 + c] around the image mean (color_jitter).
        kernel_size: Odd blur kernel side (gaussian_blur).
        sigma: Blur or noise standard deviation (gaussian_blur, gaussian_noise).
        shrink_ratio: Scale factor in (0, 1] (shrink_pad). The pad offset is drawn from the seed.
    """

    kind: AugmentKind
    brightness: float = 0.2
    contrast: float = 0.2
    kernel_size: int = 3
    sigma: float = 1.0
    shrink_ratio: float = 0.9

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", AugmentKind(self.kind))
        if not 0.0 <= self.brightness <= 1.0 or not 0.0 <= self.contrast <= 1.0:
            raise ParameterError(f"brightness and contrast must lie in [0, 1], got {self.brightness}, {self.contrast}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ParameterError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if self.sigma < 0:
            raise ParameterError(f"sigma must be >= 0, got {self.sigma}")
        _check_ratio(self.shrink_ratio)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["kind"] = self.kind.value
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Augmentation:
        return cls(**data)


def _check_ratio(ratio: float) -> None:
    if not 0.0 < ratio <= 1.0:
        raise ParameterError(f"shrink_ratio must be in (0, 1], got {ratio}")


def gaussian_kernel(kernel_size: int, sigma: float) -> np.ndarray:
    """Normalized 2-D Gaussian kernel; sigma 0 gives a centred impulse."""
    if kernel_size == 1 or sigma == 0:
        kernel = np.zeros((kernel_size, kernel_size))
        kernel[kernel_size // 2, kernel_size // 2] = 1.0
        return kernel
    r = np.arange(kernel_size) - kernel_size // 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _color_jitter(a: Augmentation, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    b = rng.uniform(1 - a.brightness, 1 + a.brightness)
    c = rng.uniform(1 - a.contrast, 1 + a.contrast)
    y = np.clip(x.astype(np.float64) * b, 0.0, 1.0)
    mean = y.mean()
    return (y - mean) * c + mean


def _gaussian_blur(a: Augmentation, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    kernel = gaussian_kernel(a.kernel_size, a.sigma)
    return np.stack([correlate(channel.astype(np.float64), kernel, mode="reflect") for channel in x])


def _gaussian_noise(a: Augmentation, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if a.sigma == 0:
        return x
    return x + rng.normal(0.0, a.sigma, size=x.shape)


def _shrink_pad(a: Augmentation, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return _shrinkpad(x, a.shrink_ratio, rng)


def _shrinkpad(x: np.ndarray, ratio: float, rng: np.random.Generator) -> np.ndarray:
    _, h, w = x.shape
    sh = max(1, int(round(h * ratio)))
    sw = max(1, int(round(w * ratio)))
    top = int(rng.integers(0, h - sh + 1))
    left = int(rng.integers(0, w - sw + 1))
    out = np.zeros_like(x, dtype=np.float32)
    out[:, top:top + sh, left:left + sw] = resize_bilinear(x, sh, sw)
    return out


_APPLY = {
    AugmentKind.COLOR_JITTER: _color_jitter,
    AugmentKind.GAUSSIAN_BLUR: _gaussian_blur,
    AugmentKind.GAUSSIAN_NOISE: _gaussian_noise,
    AugmentKind.SHRINK_PAD: _shrink_pad,
}


def augment(a: Augmentation, x: np.ndarray, seed: int) -> np.ndarray:
    """Return a corrupted copy of ``x``; ``x`` itself is never modified."""
    x = np.asarray(x, dtype=np.float32)
    rng = np.random.default_rng(seed)
    return np.clip(_APPLY[a.kind](a, x, rng), 0.0, 1.0).astype(np.float32)


def shrinkpad(x: np.ndarray, shrink_ratio: float = 0.9, seed: int = 0) -> np.ndarray:
    """Shrink ``x`` by ``shrink_ratio`` (bilinear) and zero-pad it back at a seeded offset.

    Raises:
        ParameterError: If ``shrink_ratio`` is outside (0, 1].
    """
    _check_ratio(shrink_ratio)
    x = np.asarray(x, dtype=np.float32)
    return np.clip(_shrinkpad(x, shrink_ratio, np.random.default_rng(seed)), 0.0, 1.0)


def sample_seed(stream_seed: int, index: int) -> int:
    """Per-sample augmentation seed derived from (stream seed, sample index)."""
    return int(np.random.SeedSequence([stream_seed, index]).generate_state(1)[0])


@dataclass(frozen=True)
class AugmentChain:
    """Augmentations applied left to right, each with its own seed split from the call seed."""

    steps: tuple[Augmentation, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.steps)

    def step_seeds(self, seed: int) -> list[int]:
        children = np.random.SeedSequence(seed).spawn(len(self.steps))
        return [int(child.generate_state(1)[0]) for child in children]

    def apply(self, x: np.ndarray, seed: int) -> np.ndarray:
        out = np.asarray(x, dtype=np.float32)
        for step, step_seed in zip(self.steps, self.step_seeds(seed)):
            out = augment(step, out, step_seed)
        return out

    def apply_batch(self, xs: np.ndarray, seeds: Sequence[int]) -> np.ndarray:
        return np.stack([self.apply(x, s) for x, s in zip(xs, seeds)])

    def describe(self) -> str:
        return " -> ".join(step.kind.value for step in self.steps) or "identity"

    def to_list(self) -> list[dict[str, Any]]:
        return [step.to_dict() for step in self.steps]

    @classmethod
    def from_list(cls, items: Sequence[dict[str, Any]]) -> AugmentChain:
        return cls(tuple(Augmentation.from_dict(item) for item in items))


def default_chain() -> AugmentChain:
    """Color jitter (brightness and contrast +-0.2) followed by a 3x3 Gaussian blur with sigma 1."""
    return AugmentChain((
        Augmentation(AugmentKind.COLOR_JITTER),
        Augmentation(AugmentKind.GAUSSIAN_BLUR),
    ))


def shrinkpad_chain(ratio: float = 0.9) -> AugmentChain:
    return AugmentChain((Augmentation(AugmentKind.SHRINK_PAD, shrink_ratio=ratio),))
