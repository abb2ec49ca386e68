"""
Trigger-direction estimators and the per-stream online statistics they read.

Estimators:

    paired          mean of h(x_pois) - h(x_clean) over known (clean, poisoned) pairs
    centroid diff   mu_pois - mu_clean, from streamed poisoned latents and a clean set
    augmentation    mu_pois - mu_pois_aug, from streamed latents and their augmented copies
    combined        lam * centroid_diff + (1 - lam) * augmentation

Centroids are kept in float64 and updated with the incremental mean
``mu <- mu + (z - mu) / n``; emitted directions are float32.
"""

from __future__ import annotations

import copy
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from fire_repair.checkpoint import read_envelope, split_payload, write_envelope
from fire_repair.errors import EmptyInputError, FormatError, ParameterError, ShapeError, StateError, TapError
from fire_repair.model import LayeredModel, collect_latents, forward_to, forward_to_batch

logger = logging.getLogger(__name__)

STATE_FORMAT = "fire-direction-state/1"


class CentroidKind(str, Enum):
    """Which streamed centroid an update targets."""
    POIS     = "pois"
    POIS_AUG = "pois_aug"


@dataclass(frozen=True, eq=False)
class Displacement:
    tap: int
    vector: np.ndarray


@dataclass(eq=False)
class TapStatistics:
    """Running statistics for one tap. Centroids start at zero with count 0."""

    shape: tuple[int, ...]
    pois_centroid: np.ndarray | None = None
    pois_aug_centroid: np.ndarray | None = None
    direction: np.ndarray | None = None
    clean_centroid: np.ndarray | None = None
    count: int = 0

    def __post_init__(self) -> None:
        if self.pois_centroid is None:
            self.pois_centroid = np.zeros(self.shape, dtype=np.float64)
        if self.pois_aug_centroid is None:
            self.pois_aug_centroid = np.zeros(self.shape, dtype=np.float64)
        if self.direction is None:
            self.direction = np.zeros(self.shape, dtype=np.float32)

    def centroid(self, which: CentroidKind) -> np.ndarray:
        return self.pois_centroid if which is CentroidKind.POIS else self.pois_aug_centroid


@dataclass(eq=False)
class DirectionState:
    """Per-stream statistics for every tap. Single writer: one stream owns one state."""

    taps: dict[int, TapStatistics] = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: LayeredModel, taps: Iterable[int] | None = None) -> DirectionState:
        taps = model.taps if taps is None else tuple(taps)
        return cls({tap: TapStatistics(model.latent_shape(tap)) for tap in taps})

    def __getitem__(self, tap: int) -> TapStatistics:
        try:
            return self.taps[tap]
        except KeyError:
            raise TapError(f"Direction state has no tap {tap}; known taps are {sorted(self.taps)}") from None

    def __contains__(self, tap: int) -> bool:
        return tap in self.taps

    @property
    def clean_initialized(self) -> bool:
        return bool(self.taps) and all(s.clean_centroid is not None for s in self.taps.values())

    def counts(self) -> dict[int, int]:
        return {tap: s.count for tap, s in self.taps.items()}

    def increment(self, tap: int) -> int:
        stats = self[tap]
        stats.count += 1
        return stats.count

    def set_clean_centroid(self, tap: int, centroid: np.ndarray) -> None:
        stats = self[tap]
        centroid = np.asarray(centroid, dtype=np.float64)
        if centroid.shape != stats.shape:
            raise ShapeError(f"Clean centroid shape {centroid.shape} does not match tap {tap} shape {stats.shape}")
        stats.clean_centroid = centroid.copy()

    def snapshot(self) -> DirectionState:
        """Independent copy for reporting."""
        return copy.deepcopy(self)


def _require_nonempty(images: np.ndarray, what: str) -> np.ndarray:
    images = np.asarray(images, dtype=np.float32)
    if len(images) == 0:
        raise EmptyInputError(f"{what} is empty")
    return images


def clean_centroid(model: LayeredModel, clean: np.ndarray, tap: int, batch_size: int = 256) -> np.ndarray:
    """Mean latent of the clean set at ``tap`` (float64, native shape)."""
    clean = _require_nonempty(clean, "Clean set")
    total = np.zeros(model.latent_shape(tap), dtype=np.float64)
    for start in range(0, len(clean), batch_size):
        total += forward_to_batch(model, clean[start:start + batch_size], tap).sum(axis=0, dtype=np.float64)
    return total / len(clean)


def clean_centroids(model: LayeredModel, clean: np.ndarray, taps: Iterable[int] | None = None,
                    batch_size: int = 256) -> dict[int, np.ndarray]:
    """Clean centroids for several taps in one pass per batch."""
    clean = _require_nonempty(clean, "Clean set")
    taps = model.taps if taps is None else tuple(taps)
    totals = {tap: np.zeros(model.latent_shape(tap), dtype=np.float64) for tap in taps}
    for start in range(0, len(clean), batch_size):
        _, latents = collect_latents(model, clean[start:start + batch_size], taps)
        for tap in taps:
            totals[tap] += latents[tap].sum(axis=0, dtype=np.float64)
    return {tap: total / len(clean) for tap, total in totals.items()}


def initialize_clean(state: DirectionState, model: LayeredModel, clean: np.ndarray) -> DirectionState:
    """Initialization phase: fill every tap's clean centroid from the clean set."""
    for tap, centroid in clean_centroids(model, clean, list(state.taps)).items():
        state.set_clean_centroid(tap, centroid)
    logger.debug("initialized clean centroids from %d samples at taps %s", len(clean), sorted(state.taps))
    return state


def samplewise_displacement(model: LayeredModel, x_clean: np.ndarray, x_pois: np.ndarray, tap: int) -> Displacement:
    """h(x_pois) - h(x_clean) at ``tap``."""
    return Displacement(tap=tap, vector=forward_to(model, x_pois, tap) - forward_to(model, x_clean, tap))


def _stack_pairs(pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    if len(pairs) == 0:
        raise EmptyInputError("Pair set is empty")
    clean = np.stack([np.asarray(c, dtype=np.float32) for c, _ in pairs])
    pois = np.stack([np.asarray(p, dtype=np.float32) for _, p in pairs])
    return clean, pois


def estimate_direction_paired(model: LayeredModel, pairs: Sequence[tuple[np.ndarray, np.ndarray]],
                              tap: int) -> np.ndarray:
    """Mean sample-wise displacement over ``pairs``."""
    return estimate_directions_paired(model, pairs, [tap])[tap]


def estimate_directions_paired(model: LayeredModel, pairs: Sequence[tuple[np.ndarray, np.ndarray]],
                               taps: Iterable[int] | None = None, batch_size: int = 256) -> dict[int, np.ndarray]:
    clean, pois = _stack_pairs(pairs)
    taps = model.taps if taps is None else tuple(taps)
    totals = {tap: np.zeros(model.latent_shape(tap), dtype=np.float64) for tap in taps}
    for start in range(0, len(clean), batch_size):
        _, lat_c = collect_latents(model, clean[start:start + batch_size], taps)
        _, lat_p = collect_latents(model, pois[start:start + batch_size], taps)
        for tap in taps:
            totals[tap] += (lat_p[tap].astype(np.float64) - lat_c[tap]).sum(axis=0)
    return {tap: (total / len(clean)).astype(np.float32) for tap, total in totals.items()}


def centroid_diff_direction(state: DirectionState, tap: int) -> np.ndarray:
    """mu_pois - mu_clean.

    Raises:
        StateError: If no poisoned sample has been seen or the clean centroid is missing.
    """
    stats = state[tap]
    if stats.clean_centroid is None:
        raise StateError(f"Clean centroid at tap {tap} is not initialized")
    if stats.count < 1:
        raise StateError(f"No poisoned samples incorporated at tap {tap}")
    return (stats.pois_centroid - stats.clean_centroid).astype(np.float32)


def estimate_direction_augmentation(state: DirectionState, tap: int) -> np.ndarray:
    """mu_pois - mu_pois_aug, equal to the mean of per-sample augmentation displacements."""
    stats = state[tap]
    if stats.count < 1:
        raise StateError(f"No poisoned samples incorporated at tap {tap}")
    return (stats.pois_centroid - stats.pois_aug_centroid).astype(np.float32)


def check_mixing_weight(lam: float) -> float:
    if not 0.0 <= lam <= 1.0:
        raise ParameterError(f"Mixing weight must lie in [0, 1], got {lam}")
    return lam


def combine_directions(d_diff: np.ndarray, d_aug: np.ndarray, lam: float) -> np.ndarray:
    """lam * d_diff + (1 - lam) * d_aug."""
    check_mixing_weight(lam)
    d_diff = np.asarray(d_diff)
    d_aug = np.asarray(d_aug)
    if d_diff.shape != d_aug.shape:
        raise ShapeError(f"Direction shapes differ: {d_diff.shape} vs {d_aug.shape}")
    if lam == 1.0:
        return d_diff.astype(np.float32)
    if lam == 0.0:
        return d_aug.astype(np.float32)
    return (lam * d_diff.astype(np.float64) + (1.0 - lam) * d_aug.astype(np.float64)).astype(np.float32)


def update_centroid(state: DirectionState, tap: int, which: CentroidKind | str, latent: np.ndarray) -> DirectionState:
    """Incremental-mean update of one streamed centroid.

    The caller increments the tap count (``state.increment``) once per sample before
    updating its centroids.

    Raises:
        StateError: If the count is 0 or the latent shape does not match the tap.
    """
    which = CentroidKind(which)
    stats = state[tap]
    latent = np.asarray(latent)
    if latent.shape != stats.shape:
        raise StateError(f"Latent shape {latent.shape} does not match tap {tap} shape {stats.shape}")
    if stats.count < 1:
        raise StateError(f"Increment the count at tap {tap} before updating its centroids")
    mu = stats.centroid(which)
    mu += (latent.astype(np.float64) - mu) / stats.count
    return state


def save_state(path: str | Path, state: DirectionState, extra: dict[str, Any] | None = None) -> None:
    """Write the state in the checkpoint envelope: per tap clean, pois, pois_aug centroids and direction."""
    taps = sorted(state.taps)
    arrays = []
    entries = []
    for tap in taps:
        stats = state.taps[tap]
        has_clean = stats.clean_centroid is not None
        entries.append({"tap": tap, "shape": list(stats.shape), "count": stats.count, "has_clean": has_clean})
        if has_clean:
            arrays.append(stats.clean_centroid)
        arrays.extend([stats.pois_centroid, stats.pois_aug_centroid, stats.direction])
    metadata = {"format": STATE_FORMAT, "taps": entries}
    if extra:
        metadata["extra"] = extra
    write_envelope(path, metadata, arrays)
    logger.debug("saved direction state %s", path)


def load_state(path: str | Path) -> tuple[DirectionState, dict[str, Any]]:
    """Read a state written by ``save_state``. Centroids come back at float32 precision."""
    metadata, payload = read_envelope(path)
    if metadata.get("format") != STATE_FORMAT:
        raise FormatError(f"{path}: not a direction state file")
    shapes = []
    for entry in metadata["taps"]:
        shapes.extend([entry["shape"]] * (4 if entry["has_clean"] else 3))
    arrays = iter(split_payload(payload, shapes))
    state = DirectionState()
    for entry in metadata["taps"]:
        shape = tuple(entry["shape"])
        clean = next(arrays).astype(np.float64) if entry["has_clean"] else None
        state.taps[int(entry["tap"])] = TapStatistics(
            shape=shape,
            pois_centroid=next(arrays).astype(np.float64),
            pois_aug_centroid=next(arrays).astype(np.float64),
            direction=next(arrays),
            clean_centroid=clean,
            count=int(entry["count"]),
        )
    return state, metadata
