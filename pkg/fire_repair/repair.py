"""
Latent repair operators and the streaming mitigation engine.

For a flagged input x the engine records the unmitigated label, then walks the taps in
ascending order. At each tap it folds the sample's latent into the running centroids,
forms the current trigger direction, repairs the latent and re-runs the tail. The first
tap whose repaired label differs from the unmitigated one decides the output; if no tap
changes the prediction the unmitigated label stands.

Variants pick the direction:

    combined       lam * (mu_pois - mu_clean) + (1 - lam) * (mu_pois - mu_pois_aug)
    augment_only   mu_pois - mu_pois_aug
    no_augment     mu_pois - mu_clean

Repair modes: ``subtract`` (z - alpha * b) and ``project`` (remove the component of
z - mu_clean along b).
"""

from __future__ import annotations

import logging
import time
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
import polars as pl
from tqdm import tqdm

from fire_repair.augment import AugmentChain, default_chain, sample_seed
from fire_repair.direction import (
    CentroidKind,
    DirectionState,
    TapStatistics,
    check_mixing_weight,
    estimate_directions_paired,
    initialize_clean,
    update_centroid,
)
from fire_repair.errors import (
    ConfigError,
    DegenerateDirectionError,
    EmptyInputError,
    FireError,
    NumericalError,
    ShapeError,
    StateError,
    TapError,
)
from fire_repair.model import (
    LayeredModel,
    PredictionOutcome,
    argmax_label,
    collect_latents,
    forward_from,
    forward_from_batch,
    forward_to,
    forward_to_batch,
    predict_batch,
)

logger = logging.getLogger(__name__)

PROJECTION_EPS = 1e-8


class RepairMode(str, Enum):
    SUBTRACT = "subtract"
    PROJECT  = "project"


class Variant(str, Enum):
    """Direction estimate used by the stream engine."""
    COMBINED     = "combined"
    AUGMENT_ONLY = "augment_only"
    NO_AUGMENT   = "no_augment"

    @property
    def needs_augmentation(self) -> bool:
        return self is not Variant.NO_AUGMENT

    @property
    def needs_clean(self) -> bool:
        return self is not Variant.AUGMENT_ONLY


@dataclass(frozen=True)
class RepairConfig:
    """
    Attributes:
        mixing_weight: lam in [0, 1] weighting the centroid-difference estimate (combined variant).
        alpha: Repair strength for every tap without an entry in ``alpha_per_tap``.
        alpha_per_tap: Optional per-tap overrides of ``alpha``.
        mode: subtract or project.
        variant: combined, augment_only or no_augment.
        taps: Ascending subset of the model taps to visit; None means all of them.
    """

    mixing_weight: float = 0.5
    alpha: float = 1.0
    alpha_per_tap: Mapping[int, float] | None = None
    mode: RepairMode = RepairMode.SUBTRACT
    variant: Variant = Variant.COMBINED
    taps: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        check_mixing_weight(self.mixing_weight)
        object.__setattr__(self, "mode", RepairMode(self.mode))
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.taps is not None:
            object.__setattr__(self, "taps", tuple(int(t) for t in self.taps))
        if self.alpha_per_tap is not None:
            object.__setattr__(self, "alpha_per_tap", {int(k): float(v) for k, v in self.alpha_per_tap.items()})

    def alpha_for(self, tap: int) -> float:
        if self.alpha_per_tap and tap in self.alpha_per_tap:
            return self.alpha_per_tap[tap]
        return self.alpha

    @property
    def needs_clean(self) -> bool:
        return self.variant.needs_clean or self.mode is RepairMode.PROJECT

    def resolve_taps(self, model: LayeredModel) -> tuple[int, ...]:
        """The taps to visit, validated against the model."""
        if self.taps is None:
            return model.taps
        if any(b <= a for a, b in zip(self.taps, self.taps[1:])):
            raise ConfigError(f"repair.taps must be ascending, got {list(self.taps)}")
        for tap in self.taps:
            model.check_tap(tap)
        return self.taps

    def to_dict(self) -> dict[str, Any]:
        return {
            "mixing_weight": self.mixing_weight,
            "alpha": self.alpha,
            "alpha_per_tap": {str(k): v for k, v in self.alpha_per_tap.items()} if self.alpha_per_tap else None,
            "mode": self.mode.value,
            "variant": self.variant.value,
            "taps": list(self.taps) if self.taps is not None else None,
        }


@dataclass(frozen=True)
class RepairOutcome:
    """Result of mitigating one sample. ``exit_tap`` is set iff the label changed."""

    final_label: int
    unmitigated_label: int
    exit_tap: int | None
    per_tap_labels: tuple[int, ...]

    @property
    def changed(self) -> bool:
        return self.exit_tap is not None


# --- operators -------------------------------------------------------------------


def _same_shape(x: np.ndarray, b: np.ndarray) -> None:
    if x.shape != b.shape:
        raise ShapeError(f"Latent shape {x.shape} does not match direction shape {b.shape}")


def _out_dtype(x: np.ndarray) -> np.dtype:
    return np.result_type(x.dtype, np.float32)


def repair_subtract(x: np.ndarray, direction: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    """x - alpha * direction."""
    x = np.asarray(x)
    direction = np.asarray(direction)
    _same_shape(x, direction)
    out = x.astype(np.float64) - alpha * direction.astype(np.float64)
    return out.astype(_out_dtype(x))


def repair_project(x: np.ndarray, direction: np.ndarray, clean_centroid: np.ndarray) -> np.ndarray:
    """Remove the component of (x - clean_centroid) along ``direction``.

    Raises:
        DegenerateDirectionError: If the direction norm is at most 1e-8.
    """
    x = np.asarray(x)
    b = np.asarray(direction, dtype=np.float64)
    mu = np.asarray(clean_centroid, dtype=np.float64)
    _same_shape(x, b)
    _same_shape(x, mu)
    norm2 = float(np.vdot(b, b))
    if norm2 <= PROJECTION_EPS ** 2:
        raise DegenerateDirectionError(f"Direction norm {np.sqrt(norm2):.3g} too small to project along")
    x64 = x.astype(np.float64)
    coef = float(np.vdot(x64 - mu, b)) / norm2
    return (x64 - coef * b).astype(_out_dtype(x))


def apply_repair(z: np.ndarray, direction: np.ndarray, config: RepairConfig, tap: int,
                 clean_centroid: np.ndarray | None = None) -> np.ndarray:
    """Repair a latent per ``config.mode``; a degenerate projection leaves ``z`` unchanged."""
    if config.mode is RepairMode.SUBTRACT:
        return repair_subtract(z, direction, config.alpha_for(tap))
    if clean_centroid is None:
        raise StateError(f"Projection at tap {tap} needs a clean centroid")
    try:
        return repair_project(z, direction, clean_centroid)
    except DegenerateDirectionError:
        logger.debug("degenerate direction at tap %d, projection skipped", tap)
        return np.asarray(z)


def repaired_predict(model: LayeredModel, x: np.ndarray, tap: int, direction: np.ndarray,
                     config: RepairConfig | None = None,
                     clean_centroid: np.ndarray | None = None) -> PredictionOutcome:
    """Forward to ``tap``, repair the latent, run the tail."""
    config = config or RepairConfig()
    z = forward_to(model, x, tap)
    return forward_from(model, apply_repair(z, direction, config, tap, clean_centroid), tap)


# --- manual per-layer sweep -------------------------------------------------------


def best_tap(pa_by_tap: Mapping[int, float] | Sequence[float]) -> int:
    """Argmax of PA; the lowest tap (or position) wins ties."""
    if isinstance(pa_by_tap, Mapping):
        keys = sorted(pa_by_tap)
        values = [pa_by_tap[k] for k in keys]
    else:
        keys = list(range(len(pa_by_tap)))
        values = list(pa_by_tap)
    if not values:
        raise EmptyInputError("No PA values to choose from")
    return keys[int(np.argmax(values))]


@dataclass(frozen=True)
class SweepRow:
    tap: int
    pa: float
    relative_pa: float
    diff_to_ca: float


@dataclass(frozen=True)
class SweepTable:
    """Per-tap PA after repairing with the paired direction, with the unmitigated reference."""

    rows: tuple[SweepRow, ...]
    clean_accuracy: float
    unmitigated_pa: float
    num_samples: int

    @property
    def best_tap(self) -> int:
        return best_tap({row.tap: row.pa for row in self.rows})

    def pa_by_tap(self) -> dict[int, float]:
        return {row.tap: row.pa for row in self.rows}

    def to_frame(self) -> pl.DataFrame:
        best = self.best_tap
        return pl.DataFrame(
            {
                "tap": [row.tap for row in self.rows],
                "pa": [row.pa for row in self.rows],
                "relative_pa": [row.relative_pa for row in self.rows],
                "diff_to_ca": [row.diff_to_ca for row in self.rows],
                "best": [row.tap == best for row in self.rows],
            },
            schema={"tap": pl.Int64, "pa": pl.Float64, "relative_pa": pl.Float64,
                    "diff_to_ca": pl.Float64, "best": pl.Boolean},
        )


def layer_sweep(
    model: LayeredModel,
    pairs: Sequence[tuple[np.ndarray, np.ndarray]],
    labels: np.ndarray,
    taps: Iterable[int] | None = None,
    config: RepairConfig | None = None,
    eval_pairs: Sequence[tuple[np.ndarray, np.ndarray]] | None = None,
    eval_labels: np.ndarray | None = None,
) -> SweepTable:
    """Repair at each tap separately with the paired direction and measure PA.

    The direction comes from ``pairs``. PA is measured on ``eval_pairs`` (default: the
    same pairs) against ground-truth ``eval_labels``.

    Raises:
        EmptyInputError: If the pair set is empty.
    """
    config = config or RepairConfig()
    taps = tuple(taps) if taps is not None else config.resolve_taps(model)
    if len(pairs) == 0:
        raise EmptyInputError("Sweep needs at least one pair")
    if eval_pairs is None:
        eval_pairs, eval_labels = pairs, labels
    if len(eval_pairs) == 0:
        raise EmptyInputError("Sweep evaluation set is empty")
    eval_labels = np.asarray(eval_labels, dtype=np.int64)
    if len(eval_labels) != len(eval_pairs):
        raise ShapeError(f"{len(eval_pairs)} evaluation pairs but {len(eval_labels)} labels")

    directions = estimate_directions_paired(model, pairs, taps)
    clean = np.stack([np.asarray(c, dtype=np.float32) for c, _ in eval_pairs])
    pois = np.stack([np.asarray(p, dtype=np.float32) for _, p in eval_pairs])
    ca = float((predict_batch(model, clean) == eval_labels).mean())
    unmitigated = float((predict_batch(model, pois) == eval_labels).mean())

    centroids: dict[int, np.ndarray] = {}
    if config.mode is RepairMode.PROJECT:
        pair_clean = np.stack([np.asarray(c, dtype=np.float32) for c, _ in pairs])
        _, lat = collect_latents(model, pair_clean, taps)
        centroids = {tap: lat[tap].mean(axis=0, dtype=np.float64) for tap in taps}

    rows = []
    for tap in taps:
        latents = forward_to_batch(model, pois, tap)
        repaired = np.stack([apply_repair(z, directions[tap], config, tap, centroids.get(tap)) for z in latents])
        predicted = forward_from_batch(model, repaired, tap).argmax(axis=1)
        pa = float((predicted == eval_labels).mean())
        rows.append(SweepRow(tap=tap, pa=pa, relative_pa=pa / ca if ca > 0 else float("nan"), diff_to_ca=ca - pa))
        logger.debug("sweep tap %d: pa=%.4f", tap, pa)

    table = SweepTable(rows=tuple(rows), clean_accuracy=ca, unmitigated_pa=unmitigated, num_samples=len(eval_pairs))
    logger.info("layer sweep over %d samples: ca=%.4f unmitigated pa=%.4f best tap %d",
                len(eval_pairs), ca, unmitigated, table.best_tap)
    return table


# --- streaming engine ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StreamItem:
    """One flagged input. ``label`` is the ground truth, used only for reporting."""

    image: np.ndarray
    label: int | None = None
    poisoned: bool = True


@dataclass(frozen=True)
class SampleRecord:
    index: int
    unmitigated_label: int | None
    final_label: int | None
    exit_tap: int | None
    per_tap_labels: tuple[int, ...]
    latency_us: float
    true_label: int | None = None
    poisoned: bool = True
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "unmitigated_label": self.unmitigated_label,
            "final_label": self.final_label,
            "exit_tap": self.exit_tap,
            "per_tap_labels": list(self.per_tap_labels),
            "latency_us": self.latency_us,
            "true_label": self.true_label,
            "poisoned": self.poisoned,
            "error": self.error,
        }


@dataclass
class StreamReport:
    """Per-sample records of one stream, in arrival order."""

    config: RepairConfig
    records: list[SampleRecord] = field(default_factory=list)
    init_us: float = 0.0
    seed: int = 0

    def __len__(self) -> int:
        return len(self.records)

    @property
    def processed(self) -> list[SampleRecord]:
        return [r for r in self.records if r.error is None]

    @property
    def errors(self) -> list[SampleRecord]:
        return [r for r in self.records if r.error is not None]

    def to_frame(self) -> pl.DataFrame:
        return pl.DataFrame(
            [
                {k: v for k, v in r.to_dict().items() if k != "per_tap_labels"}
                for r in self.records
            ],
            schema={
                "index": pl.Int64, "unmitigated_label": pl.Int64, "final_label": pl.Int64, "exit_tap": pl.Int64,
                "latency_us": pl.Float64, "true_label": pl.Int64, "poisoned": pl.Boolean, "error": pl.Utf8,
            },
        )


def init_direction_state(model: LayeredModel, clean: np.ndarray | None, config: RepairConfig) -> DirectionState:
    """Initialization phase: an empty state over the configured taps, with clean centroids when needed.

    Raises:
        StateError: If the variant or repair mode needs clean centroids and no clean set is given.
    """
    state = DirectionState.for_model(model, config.resolve_taps(model))
    if config.needs_clean:
        if clean is None or len(clean) == 0:
            raise StateError(f"{config.variant.value}/{config.mode.value} needs clean samples to initialize")
        initialize_clean(state, model, clean)
    elif clean is not None and len(clean):
        initialize_clean(state, model, clean)
    return state


def _direction(stats: TapStatistics, config: RepairConfig, tap: int) -> np.ndarray:
    """Current direction at a tap in float64, straight from the centroids."""
    if config.variant.needs_clean and stats.clean_centroid is None:
        raise StateError(f"Clean centroid at tap {tap} is not initialized")
    if config.variant is Variant.NO_AUGMENT:
        return stats.pois_centroid - stats.clean_centroid
    d_aug = stats.pois_centroid - stats.pois_aug_centroid
    if config.variant is Variant.AUGMENT_ONLY:
        return d_aug
    lam = config.mixing_weight
    return lam * (stats.pois_centroid - stats.clean_centroid) + (1.0 - lam) * d_aug


def mitigate_one(
    model: LayeredModel,
    state: DirectionState,
    x: np.ndarray,
    config: RepairConfig,
    *,
    augmentation: AugmentChain | None = None,
    seed: int = 0,
) -> RepairOutcome:
    """Mitigate one flagged sample, updating ``state`` in place.

    Taps after the exit tap receive no update for this sample.

    Raises:
        ShapeError: If ``x`` does not match the model input.
        NumericalError: If a repaired forward pass goes non-finite.
        StateError: If the variant needs clean centroids that were never initialized.

    On any of these errors ``state`` is left as it was before the call.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.shape != model.input_shape:
        raise ShapeError(f"input shape mismatch: expected {model.input_shape}, got {x.shape}")
    taps = config.resolve_taps(model)
    for tap in taps:
        if tap not in state:
            raise TapError(f"Direction state has no tap {tap}")
    with_aug = config.variant.needs_augmentation
    batch = x[None]
    if with_aug:
        chain = augmentation if augmentation is not None else default_chain()
        batch = np.stack([x, chain.apply(x, seed)])
    logits, latents = collect_latents(model, batch, taps)
    y = argmax_label(logits[0])

    per_tap: list[int] = []
    saved: list[tuple[TapStatistics, int, np.ndarray, np.ndarray, np.ndarray]] = []
    try:
        for tap in taps:
            stats = state[tap]
            saved.append((stats, stats.count, stats.pois_centroid.copy(), stats.pois_aug_centroid.copy(),
                          stats.direction))
            state.increment(tap)
            update_centroid(state, tap, CentroidKind.POIS, latents[tap][0])
            if with_aug:
                update_centroid(state, tap, CentroidKind.POIS_AUG, latents[tap][1])
            direction = _direction(stats, config, tap)
            stats.direction = direction.astype(np.float32)
            z = latents[tap][0].astype(np.float64)
            repaired = apply_repair(z, direction, config, tap, stats.clean_centroid)
            label = forward_from(model, repaired.astype(np.float32), tap).label
            per_tap.append(label)
            if label != y:
                return RepairOutcome(final_label=label, unmitigated_label=y, exit_tap=tap,
                                     per_tap_labels=tuple(per_tap))
    except FireError:
        # restore every tap this sample touched
        for stats, count, pois, pois_aug, direction in saved:
            stats.count, stats.pois_centroid, stats.pois_aug_centroid, stats.direction = count, pois, pois_aug, direction
        raise
    return RepairOutcome(final_label=y, unmitigated_label=y, exit_tap=None, per_tap_labels=tuple(per_tap))


def _as_item(item: StreamItem | np.ndarray) -> StreamItem:
    return item if isinstance(item, StreamItem) else StreamItem(image=np.asarray(item))


def run_stream(
    model: LayeredModel,
    state: DirectionState,
    stream: Iterable[StreamItem | np.ndarray],
    config: RepairConfig,
    *,
    augmentation: AugmentChain | None = None,
    seed: int = 0,
    progress: bool = False,
) -> StreamReport:
    """Process a flagged stream strictly in arrival order.

    Sample ``i`` is augmented with ``sample_seed(seed, i)``. A sample of the wrong shape,
    or one whose forward pass goes non-finite, is recorded with its message and skipped.
    """
    report = StreamReport(config=config, seed=seed)
    for index, raw in enumerate(tqdm(stream, desc="stream", disable=not progress)):
        item = _as_item(raw)
        start = time.perf_counter_ns()
        try:
            outcome = mitigate_one(model, state, item.image, config,
                                   augmentation=augmentation, seed=sample_seed(seed, index))
        except (ShapeError, NumericalError) as exc:
            logger.warning("sample %d skipped: %s", index, exc)
            report.records.append(SampleRecord(
                index=index, unmitigated_label=None, final_label=None, exit_tap=None, per_tap_labels=(),
                latency_us=0.0, true_label=item.label, poisoned=item.poisoned, error=str(exc),
            ))
            continue
        latency_us = (time.perf_counter_ns() - start) / 1000.0
        report.records.append(SampleRecord(
            index=index,
            unmitigated_label=outcome.unmitigated_label,
            final_label=outcome.final_label,
            exit_tap=outcome.exit_tap,
            per_tap_labels=outcome.per_tap_labels,
            latency_us=latency_us,
            true_label=item.label,
            poisoned=item.poisoned,
        ))
    changed = sum(1 for r in report.processed if r.exit_tap is not None)
    logger.info("stream done: %d samples, %d repaired, %d errors (variant=%s mode=%s)",
                len(report), changed, len(report.errors), config.variant.value, config.mode.value)
    return report
