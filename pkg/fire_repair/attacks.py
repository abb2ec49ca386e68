"""
Trigger-injection operators and dataset poisoning.

Three desk-scale trigger kinds:

    patch    a small square of fixed pixel values (BadNets style)
    blended  (1 - rho) * x + rho * trigger_image (Blended style)
    warp     bilinear resampling along a smooth sinusoidal displacement field (WaNet style)

Every operator returns a new image clamped to [0, 1] and never touches its input.
Poisoning is dirty-label: poisoned samples are relabelled to the target class.

Usage:
    from fire_repair.attacks import patch_trigger, apply_trigger, PoisonPlan, poison_dataset
    t = patch_trigger()
    x_pois = apply_trigger(t, x)
    poisoned = poison_dataset(train_set, PoisonPlan(t, target_label=0, poison_ratio=0.1), seed=7)
"""

from __future__ import annotations

import logging
from collections.abc import Iterable
from dataclasses import dataclass
from enum import Enum

import numpy as np

from fire_repair.dataset import LabeledImages
from fire_repair.errors import EmptyInputError, ParameterError, TriggerError
from fire_repair.resample import bilinear_sample

logger = logging.getLogger(__name__)


class TriggerKind(str, Enum):
    """Trigger families."""
    PATCH   = "patch"
    BLENDED = "blended"
    WARP    = "warp"


DEFAULT_PATCH_SIZE = 3
DEFAULT_BLEND_RATIO = 0.2
DEFAULT_WARP_STRENGTH = 1.5


@dataclass(frozen=True, eq=False)
class TriggerOp:
    """A parameterized trigger operator. Build with the ``*_trigger`` helpers.

    Attributes:
        kind: Trigger family.
        patch_size: Side length of the square patch (patch).
        patch_location: Top-left (row, col) of the patch; None means bottom-right (patch).
        patch_value: Scalar, per-channel (C,), or full (C, size, size) pixel values (patch).
        blend_image: (C, H, W) trigger image (blended).
        blend_ratio: rho in [0, 1] (blended).
        warp_field: (2, H, W) unit displacement field, rows then cols (warp).
        warp_strength: Displacement amplitude in pixels (warp).
    """

    kind: TriggerKind
    patch_size: int = DEFAULT_PATCH_SIZE
    patch_location: tuple[int, int] | None = None
    patch_value: float | np.ndarray = 1.0
    blend_image: np.ndarray | None = None
    blend_ratio: float = DEFAULT_BLEND_RATIO
    warp_field: np.ndarray | None = None
    warp_strength: float = DEFAULT_WARP_STRENGTH

    def __post_init__(self) -> None:
        if self.kind is TriggerKind.PATCH and self.patch_size < 1:
            raise TriggerError(f"patch_size must be >= 1, got {self.patch_size}")
        if self.kind is TriggerKind.BLENDED:
            if self.blend_image is None:
                raise TriggerError("blended trigger needs a blend_image")
            if not 0.0 <= self.blend_ratio <= 1.0:
                raise TriggerError(f"blend_ratio must be in [0, 1], got {self.blend_ratio}")
        if self.kind is TriggerKind.WARP:
            if self.warp_field is None or self.warp_field.ndim != 3 or self.warp_field.shape[0] != 2:
                raise TriggerError("warp trigger needs a (2, H, W) warp_field")


def patch_trigger(size: int = DEFAULT_PATCH_SIZE, location: tuple[int, int] | None = None,
                  value: float | np.ndarray = 1.0) -> TriggerOp:
    return TriggerOp(TriggerKind.PATCH, patch_size=size, patch_location=location, patch_value=value)


def blended_trigger(image: np.ndarray, ratio: float = DEFAULT_BLEND_RATIO) -> TriggerOp:
    return TriggerOp(TriggerKind.BLENDED, blend_image=np.asarray(image, dtype=np.float32), blend_ratio=ratio)


def warp_field(height: int, width: int, frequency: float = 1.0, seed: int = 0) -> np.ndarray:
    """Smooth sinusoidal unit displacement field with seeded phases, shape (2, H, W)."""
    rng = np.random.default_rng(seed)
    phase_r, phase_c = rng.uniform(0.0, 2 * np.pi, size=2)
    yy, xx = np.mgrid[0:height, 0:width]
    d_rows = np.sin(2 * np.pi * frequency * xx / width + phase_r)
    d_cols = np.sin(2 * np.pi * frequency * yy / height + phase_c)
    return np.stack([d_rows, d_cols]).astype(np.float32)


def warp_trigger(field: np.ndarray, strength: float = DEFAULT_WARP_STRENGTH) -> TriggerOp:
    return TriggerOp(TriggerKind.WARP, warp_field=np.asarray(field, dtype=np.float32), warp_strength=strength)


def default_trigger(
    kind: TriggerKind | str,
    image_shape: tuple[int, int, int],
    seed: int = 0,
    patch_size: int = DEFAULT_PATCH_SIZE,
    blend_ratio: float = DEFAULT_BLEND_RATIO,
    warp_strength: float = DEFAULT_WARP_STRENGTH,
) -> TriggerOp:
    """Trigger of ``kind``; the blend image and warp phases come from ``seed``.

    The defaults give the desk triggers: 3x3 white patch bottom-right, rho=0.2 noise blend,
    1.5 px sinusoidal warp.
    """
    kind = TriggerKind(kind)
    c, h, w = image_shape
    if kind is TriggerKind.PATCH:
        return patch_trigger(size=patch_size)
    if kind is TriggerKind.BLENDED:
        image = np.random.default_rng(seed).uniform(0.0, 1.0, size=(c, h, w))
        return blended_trigger(image, ratio=blend_ratio)
    return warp_trigger(warp_field(h, w, seed=seed), strength=warp_strength)


def _check_image(x: np.ndarray) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim != 3:
        raise TriggerError(f"Expected a (C, H, W) image, got shape {arr.shape}")
    return arr


def _apply_patch(t: TriggerOp, x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    s = t.patch_size
    row, col = t.patch_location if t.patch_location is not None else (h - s, w - s)
    if row < 0 or col < 0 or row + s > h or col + s > w:
        raise TriggerError(f"{s}x{s} patch at ({row}, {col}) does not fit a {h}x{w} image")
    value = np.asarray(t.patch_value, dtype=np.float32)
    if value.ndim == 1:
        value = value[:, None, None]
    try:
        patch = np.broadcast_to(value, (c, s, s))
    except ValueError:
        raise TriggerError(f"Patch values of shape {value.shape} do not fit ({c}, {s}, {s})") from None
    out = x.copy()
    out[:, row:row + s, col:col + s] = patch
    return out


def _apply_blend(t: TriggerOp, x: np.ndarray) -> np.ndarray:
    if t.blend_image.shape != x.shape:
        raise TriggerError(f"Blend image shape {t.blend_image.shape} does not match image {x.shape}")
    rho = np.float32(t.blend_ratio)
    return (1 - rho) * x + rho * t.blend_image


def _apply_warp(t: TriggerOp, x: np.ndarray) -> np.ndarray:
    _, h, w = x.shape
    if t.warp_field.shape[1:] != (h, w):
        raise TriggerError(f"Warp field shape {t.warp_field.shape} does not match a {h}x{w} image")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    rows = yy + t.warp_strength * t.warp_field[0]
    cols = xx + t.warp_strength * t.warp_field[1]
    return bilinear_sample(x, rows, cols)


_APPLY = {
    TriggerKind.PATCH: _apply_patch,
    TriggerKind.BLENDED: _apply_blend,
    TriggerKind.WARP: _apply_warp,
}


def apply_trigger(t: TriggerOp, x: np.ndarray) -> np.ndarray:
    """Return the triggered copy of image ``x``, clamped to [0, 1].

    Raises:
        TriggerError: If the trigger parameters do not fit the image.
    """
    x = _check_image(x)
    return np.clip(_APPLY[t.kind](t, x), 0.0, 1.0).astype(np.float32, copy=False)


def apply_trigger_batch(t: TriggerOp, images: np.ndarray) -> np.ndarray:
    return np.stack([apply_trigger(t, x) for x in images]) if len(images) else np.asarray(images, np.float32)


@dataclass(frozen=True, eq=False)
class PoisonPlan:
    trigger: TriggerOp
    target_label: int
    poison_ratio: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 < self.poison_ratio <= 1.0:
            raise ParameterError(f"poison_ratio must be in (0, 1], got {self.poison_ratio}")
        if self.target_label < 0:
            raise ParameterError(f"target_label must be >= 0, got {self.target_label}")


@dataclass(frozen=True, eq=False)
class PoisonedSet:
    data: LabeledImages
    indices: np.ndarray  # sorted indices of poisoned entries


def poison_count(n: int, ratio: float) -> int:
    return min(n, int(round(ratio * n)))


def poison_dataset(data: LabeledImages, plan: PoisonPlan, seed: int, num_classes: int | None = None) -> PoisonedSet:
    """Trigger and relabel a seeded ``poison_ratio`` fraction of ``data``.

    Raises:
        EmptyInputError: If ``data`` is empty.
        ParameterError: If the target label is outside ``num_classes``.
    """
    n = len(data)
    if n == 0:
        raise EmptyInputError("Cannot poison an empty dataset")
    if num_classes is not None and plan.target_label >= num_classes:
        raise ParameterError(f"target_label {plan.target_label} >= num_classes {num_classes}")
    count = poison_count(n, plan.poison_ratio)
    indices = np.sort(np.random.default_rng(seed).choice(n, size=count, replace=False))
    images = data.images.copy()
    labels = data.labels.copy()
    for i in indices:
        images[i] = apply_trigger(plan.trigger, images[i])
    labels[indices] = plan.target_label
    logger.info("poisoned %d/%d samples with %s trigger -> label %d",
                count, n, plan.trigger.kind.value, plan.target_label)
    return PoisonedSet(data=LabeledImages(images, labels), indices=indices)


def make_paired_set(clean: Iterable[np.ndarray], t: TriggerOp) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairs (clean_i, apply_trigger(t, clean_i)), aligned by index."""
    pairs = []
    for x in clean:
        x = _check_image(x)
        pairs.append((x, apply_trigger(t, x)))
    return pairs
