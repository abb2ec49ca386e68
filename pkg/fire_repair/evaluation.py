"""
Metrics, stream construction, ablations and timing.

    CA   accuracy on clean inputs
    PA   accuracy on triggered inputs against their ground-truth labels
    ASR  fraction of triggered inputs whose true label is not the target but are
         classified as the target

For a stream, PA uses the final (repaired) labels of the truly poisoned entries; the
PA curve is indexed by the order of those entries. Flagged clean entries of an
imperfect-detector stream are reported separately.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
import polars as pl

from fire_repair.augment import AugmentChain, sample_seed, shrinkpad_chain
from fire_repair.dataset import LabeledImages
from fire_repair.direction import DirectionState
from fire_repair.errors import EmptyInputError, InsufficientPoolError, ParameterError
from fire_repair.model import LayeredModel, forward, predict_batch
from fire_repair.repair import (
    RepairConfig,
    StreamItem,
    StreamReport,
    init_direction_state,
    mitigate_one,
    run_stream,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Metrics:
    """CA, PA and ASR as fractions. ``clean_accuracy`` is None when no clean set was scored."""

    clean_accuracy: float | None
    poisoned_accuracy: float
    attack_success_rate: float
    pa_curve: np.ndarray | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "ca": self.clean_accuracy,
            "pa": self.poisoned_accuracy,
            "asr": self.attack_success_rate,
            "pa_curve": None if self.pa_curve is None else [float(v) for v in self.pa_curve],
        }


def _require(data: LabeledImages | None, what: str) -> LabeledImages:
    if data is None or len(data) == 0:
        raise EmptyInputError(f"{what} is empty")
    return data


def accuracy(model: LayeredModel, data: LabeledImages) -> float:
    data = _require(data, "Evaluation set")
    return float((predict_batch(model, data.images) == data.labels).mean())


def attack_success_rate(predicted: np.ndarray, true_labels: np.ndarray, target_label: int) -> float:
    """Share of non-target-class samples predicted as the target; 0 if every sample is of the target class."""
    mask = np.asarray(true_labels) != target_label
    if not mask.any():
        return 0.0
    return float((np.asarray(predicted)[mask] == target_label).mean())


def _report_arrays(report: StreamReport) -> tuple[np.ndarray, np.ndarray]:
    records = [r for r in report.processed if r.poisoned]
    if records and any(r.true_label is None for r in records):
        raise ParameterError("Stream records need ground-truth labels to score")
    final = np.array([r.final_label for r in records], dtype=np.int64)
    truth = np.array([r.true_label for r in records], dtype=np.int64)
    return final, truth


def compute_metrics(
    source: LayeredModel | StreamReport,
    target_label: int,
    clean: LabeledImages | None = None,
    poisoned: LabeledImages | None = None,
    model: LayeredModel | None = None,
) -> Metrics:
    """Score a model on clean and poisoned sets, or a stream report by its final labels.

    For a model, ``clean`` and ``poisoned`` are required. For a report, the poisoned
    entries come from its records and CA is taken from ``clean`` when ``model`` is
    given, else from the report's flagged clean entries if there are any.

    Raises:
        EmptyInputError: If a required set is empty.
    """
    if isinstance(source, LayeredModel):
        clean = _require(clean, "Clean set")
        poisoned = _require(poisoned, "Poisoned set")
        predicted = predict_batch(source, poisoned.images)
        return Metrics(
            clean_accuracy=accuracy(source, clean),
            poisoned_accuracy=float((predicted == poisoned.labels).mean()),
            attack_success_rate=attack_success_rate(predicted, poisoned.labels, target_label),
        )

    final, truth = _report_arrays(source)
    if len(final) == 0:
        raise EmptyInputError("Stream report holds no scored poisoned samples")
    correct = (final == truth).astype(np.float64)
    if model is not None and clean is not None:
        ca = accuracy(model, clean)
    else:
        ca = flagged_clean_accuracy(source)
    return Metrics(
        clean_accuracy=ca,
        poisoned_accuracy=float(correct.mean()),
        attack_success_rate=attack_success_rate(final, truth, target_label),
        pa_curve=correct,
    )


def flagged_clean_accuracy(report: StreamReport) -> float | None:
    """Accuracy of the final labels on clean entries that were flagged, None if there are none."""
    records = [r for r in report.processed if not r.poisoned and r.true_label is not None]
    if not records:
        return None
    return float(np.mean([r.final_label == r.true_label for r in records]))


def pa_curve(report: StreamReport) -> np.ndarray:
    """1.0/0.0 correctness of each poisoned entry, in arrival order."""
    final, truth = _report_arrays(report)
    return (final == truth).astype(np.float64)


def pa_at_position(reports: Sequence[StreamReport], position: int) -> float:
    """Mean correctness at the 1-based poisoned-entry ``position`` over replicas.

    Raises:
        ParameterError: If some report is shorter than ``position``.
    """
    if position < 1:
        raise ParameterError(f"position is 1-based, got {position}")
    if not reports:
        raise EmptyInputError("No stream reports")
    values = []
    for report in reports:
        curve = pa_curve(report)
        if len(curve) < position:
            raise ParameterError(f"Stream has {len(curve)} poisoned entries, position {position} requested")
        values.append(curve[position - 1])
    return float(np.mean(values))


def mean_pa_between(reports: Sequence[StreamReport], first: int, last: int) -> float:
    """Mean PA over 1-based poisoned-entry positions ``first`` .. ``last`` inclusive, across replicas."""
    if not reports:
        raise EmptyInputError("No stream reports")
    curves = [pa_curve(r) for r in reports]
    if first < 1 or any(len(c) < last for c in curves):
        raise ParameterError(f"Positions {first}..{last} fall outside a stream")
    return float(np.mean([c[first - 1:last].mean() for c in curves]))


def pa_curve_frame(reports: Sequence[StreamReport]) -> pl.DataFrame:
    """Per-position PA averaged over replicas (columns: position, pa, replicas)."""
    rows = [
        {"replica": i, "position": pos + 1, "correct": float(v)}
        for i, report in enumerate(reports)
        for pos, v in enumerate(pa_curve(report))
    ]
    if not rows:
        return pl.DataFrame(schema={"position": pl.Int64, "pa": pl.Float64, "replicas": pl.UInt32})
    return (
        pl.DataFrame(rows)
        .group_by("position")
        .agg(pl.col("correct").mean().alias("pa"), pl.len().alias("replicas"))
        .sort("position")
    )


def latency_percentiles(values: Sequence[float]) -> dict[str, float | None]:
    if len(values) == 0:
        return {"median_us": None, "p95_us": None}
    arr = np.asarray(values, dtype=np.float64)
    return {"median_us": float(np.median(arr)), "p95_us": float(np.percentile(arr, 95))}


def summarize_report(report: StreamReport, target_label: int, model: LayeredModel | None = None,
                     clean: LabeledImages | None = None) -> dict[str, Any]:
    """Summary JSON payload for one stream: metrics, counts, exit taps and latency percentiles.

    ``ca`` is scored on ``clean`` when both ``model`` and ``clean`` are given. A stream with no
    scored poisoned entries (an all-clean detector) reports ``pa`` and ``asr`` as None and an
    empty curve.
    """
    final, truth = _report_arrays(report)
    correct = (final == truth).astype(np.float64)
    processed = report.processed
    exits: dict[str, int] = {}
    for r in processed:
        key = "none" if r.exit_tap is None else str(r.exit_tap)
        exits[key] = exits.get(key, 0) + 1
    return {
        "samples": len(report),
        "poisoned": sum(1 for r in processed if r.poisoned),
        "flagged_clean": sum(1 for r in processed if not r.poisoned),
        "errors": len(report.errors),
        "ca": accuracy(model, clean) if model is not None and clean is not None else None,
        "pa": float(correct.mean()) if len(correct) else None,
        "asr": attack_success_rate(final, truth, target_label) if len(correct) else None,
        "flagged_clean_accuracy": flagged_clean_accuracy(report),
        "exit_taps": exits,
        "pa_curve": [float(v) for v in correct],
        "init_us": report.init_us,
        "latency": latency_percentiles([r.latency_us for r in processed]),
    }


# --- streams ------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectorSpec:
    """Simulated upstream detector: ``poison_fraction`` of flagged entries are truly poisoned."""

    poison_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.poison_fraction <= 1.0:
            raise ParameterError(f"poison_fraction must lie in [0, 1], got {self.poison_fraction}")


def make_stream(poisoned: LabeledImages, clean: LabeledImages | None, spec: DetectorSpec,
                length: int) -> list[StreamItem]:
    """Seeded interleaving with exactly round(fraction * length) poisoned entries.

    Raises:
        InsufficientPoolError: If a pool holds fewer entries than the stream needs.
    """
    if length < 0:
        raise ParameterError(f"length must be >= 0, got {length}")
    n_pois = int(round(spec.poison_fraction * length))
    n_clean = length - n_pois
    n_avail_clean = 0 if clean is None else len(clean)
    if n_pois > len(poisoned):
        raise InsufficientPoolError(f"Stream needs {n_pois} poisoned samples, pool holds {len(poisoned)}")
    if n_clean > n_avail_clean:
        raise InsufficientPoolError(f"Stream needs {n_clean} clean samples, pool holds {n_avail_clean}")
    rng = np.random.default_rng(spec.seed)
    pois_idx = rng.choice(len(poisoned), size=n_pois, replace=False)
    items = [StreamItem(poisoned.images[i], int(poisoned.labels[i]), True) for i in pois_idx]
    if n_clean:
        clean_idx = rng.choice(n_avail_clean, size=n_clean, replace=False)
        items += [StreamItem(clean.images[i], int(clean.labels[i]), False) for i in clean_idx]
    order = rng.permutation(length)
    return [items[i] for i in order]


def run_replica(
    model: LayeredModel,
    clean_init: np.ndarray | None,
    stream: Sequence[StreamItem],
    config: RepairConfig,
    *,
    augmentation: AugmentChain | None = None,
    seed: int = 0,
) -> tuple[StreamReport, DirectionState]:
    """Initialization phase followed by the online phase; returns the report and final state."""
    start = time.perf_counter_ns()
    state = init_direction_state(model, clean_init, config)
    init_us = (time.perf_counter_ns() - start) / 1000.0
    report = run_stream(model, state, stream, config, augmentation=augmentation, seed=seed)
    report.init_us = init_us
    return report, state


# --- ablation -----------------------------------------------------------------------


def clean_count_ablation(
    model: LayeredModel,
    clean_pool: LabeledImages,
    poisoned_pool: LabeledImages,
    counts: Sequence[int],
    config: RepairConfig,
    *,
    stream_seeds: Sequence[int] = (0, 1, 2, 3, 4),
    position: int = 10,
    augmentation: AugmentChain | None = None,
) -> pl.DataFrame:
    """PA at ``position`` as a function of the number of clean initialization samples.

    Each seed draws its own clean subset and its own all-poisoned stream.

    Raises:
        InsufficientPoolError: If a count exceeds the clean pool.
    """
    rows = []
    for n_clean in counts:
        if n_clean < 1:
            raise ParameterError(f"Clean sample counts must be >= 1, got {n_clean}")
        if n_clean > len(clean_pool):
            raise InsufficientPoolError(f"N_c={n_clean} exceeds the clean pool of {len(clean_pool)}")
        reports = []
        for seed in stream_seeds:
            subset = clean_pool.sample(n_clean, seed=sample_seed(seed, n_clean))
            stream = make_stream(poisoned_pool, None, DetectorSpec(1.0, seed), position)
            report, _ = run_replica(model, subset.images, stream, config, augmentation=augmentation, seed=seed)
            reports.append(report)
        pa = pa_at_position(reports, position)
        rows.append({"n_clean": n_clean, "pa_at_position": pa, "position": position, "seeds": len(stream_seeds)})
        logger.info("ablation N_c=%d: PA@%d=%.4f", n_clean, position, pa)
    return pl.DataFrame(rows, schema={"n_clean": pl.Int64, "pa_at_position": pl.Float64,
                                      "position": pl.Int64, "seeds": pl.Int64})


# --- timing -------------------------------------------------------------------------


@dataclass(frozen=True)
class LatencySummary:
    """Initialization time and per-sample online/forward times in microseconds."""

    init_us: float
    online_median_us: float | None
    online_p95_us: float | None
    forward_median_us: float | None
    samples: int

    @property
    def overhead_ratio(self) -> float | None:
        if self.online_median_us is None or not self.forward_median_us:
            return None
        return self.online_median_us / self.forward_median_us

    def to_dict(self) -> dict[str, Any]:
        return {
            "init_us": self.init_us,
            "online_median_us": self.online_median_us,
            "online_p95_us": self.online_p95_us,
            "forward_median_us": self.forward_median_us,
            "overhead_ratio": self.overhead_ratio,
            "samples": self.samples,
        }


def bench_latency(
    model: LayeredModel,
    config: RepairConfig,
    stream: Sequence[StreamItem | np.ndarray],
    clean_init: np.ndarray | None,
    *,
    augmentation: AugmentChain | None = None,
    seed: int = 0,
    warmup: int = 5,
) -> LatencySummary:
    """Time the initialization phase once, then each online sample and a plain forward pass.

    Warmup iterations run on a throwaway state and are not timed.
    """
    images = [item.image if isinstance(item, StreamItem) else np.asarray(item) for item in stream]

    start = time.perf_counter_ns()
    state = init_direction_state(model, clean_init, config)
    init_us = (time.perf_counter_ns() - start) / 1000.0
    if not images:
        return LatencySummary(init_us, None, None, None, 0)

    scratch = state.snapshot()
    for i in range(min(warmup, len(images))):
        mitigate_one(model, scratch, images[i], config, augmentation=augmentation, seed=sample_seed(seed, i))
        forward(model, images[i])

    online, plain = [], []
    for i, x in enumerate(images):
        t0 = time.perf_counter_ns()
        mitigate_one(model, state, x, config, augmentation=augmentation, seed=sample_seed(seed, i))
        online.append((time.perf_counter_ns() - t0) / 1000.0)
        t0 = time.perf_counter_ns()
        forward(model, x)
        plain.append((time.perf_counter_ns() - t0) / 1000.0)

    pct = latency_percentiles(online)
    summary = LatencySummary(
        init_us=init_us,
        online_median_us=pct["median_us"],
        online_p95_us=pct["p95_us"],
        forward_median_us=float(np.median(plain)),
        samples=len(images),
    )
    logger.info("latency: init=%.0fus online median=%.0fus p95=%.0fus forward median=%.0fus",
                init_us, summary.online_median_us, summary.online_p95_us, summary.forward_median_us)
    return summary


@dataclass(frozen=True)
class ShrinkPadResult:
    poisoned_accuracy: float
    latency_median_us: float
    samples: int


def shrinkpad_baseline(model: LayeredModel, poisoned: LabeledImages, ratio: float = 0.9,
                       seed: int = 0) -> ShrinkPadResult:
    """PA of ShrinkPad alone. Sample ``i`` uses the same seed the stream engine would give it."""
    poisoned = _require(poisoned, "Poisoned set")
    chain = shrinkpad_chain(ratio)
    correct = 0
    times = []
    for i, (x, y) in enumerate(zip(poisoned.images, poisoned.labels)):
        t0 = time.perf_counter_ns()
        label = forward(model, chain.apply(x, sample_seed(seed, i))).label
        times.append((time.perf_counter_ns() - t0) / 1000.0)
        correct += int(label == y)
    return ShrinkPadResult(
        poisoned_accuracy=correct / len(poisoned),
        latency_median_us=float(np.median(times)),
        samples=len(poisoned),
    )
