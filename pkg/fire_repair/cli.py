"""CLI entry point for fire-repair.

    fire gen-data       write the seeded synthetic dataset
    fire train          train a backdoored desk model, write its checkpoint and training row
    fire sweep          per-tap PA with the paired direction
    fire stream         streaming mitigation over seeded replicas
    fire bench          initialization and per-sample latency
    fire ablate-clean   PA at a fixed position vs. number of clean samples

Every command takes ``--config FILE`` and any number of ``--set key.path=value``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path
from typing import Any

import numpy as np
import polars as pl

from fire_repair.checkpoint import load_checkpoint, save_checkpoint
from fire_repair.config import ExperimentConfig, config_hash, load_config, sub_seed
from fire_repair.data import (
    get_checkpoint_file,
    get_dataset_dir,
    get_out_dir,
    get_run_dir,
    require_checkpoint,
    require_dataset,
)
from fire_repair.dataset import Dataset, load_dataset, save_dataset
from fire_repair.direction import save_state
from fire_repair.errors import ConfigError, FireError, FormatError, TrainingDivergedError
from fire_repair.evaluation import (
    DetectorSpec,
    accuracy,
    bench_latency,
    clean_count_ablation,
    latency_percentiles,
    make_stream,
    mean_pa_between,
    pa_at_position,
    pa_curve,
    pa_curve_frame,
    run_replica,
    shrinkpad_baseline,
    summarize_report,
)
from fire_repair.recipes import BackdoorExperiment, build_experiment, make_dataset
from fire_repair.repair import layer_sweep
from fire_repair.report import print_frame, print_rows, write_csv, write_json, write_jsonl

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4


def _load_dataset(config: ExperimentConfig, out_dir: Path) -> Dataset:
    dataset = load_dataset(require_dataset(out_dir))
    if dataset.seed != config.seed_for("data"):
        logger.warning("dataset in %s was generated from a different seed", out_dir)
    return dataset


def _load_experiment(config: ExperimentConfig, out_dir: Path) -> BackdoorExperiment:
    dataset = _load_dataset(config, out_dir)
    model, metadata = load_checkpoint(require_checkpoint(out_dir, config.attack.kind))
    if metadata.get("dataset_digest") not in (None, dataset.digest()):
        logger.warning("checkpoint was trained on a different dataset (digest mismatch)")
    return build_experiment(config, dataset, model)


def cmd_gen_data(config: ExperimentConfig, out_dir: Path) -> dict[str, Any]:
    dataset = make_dataset(config)
    directory = get_dataset_dir(out_dir)
    digest = save_dataset(dataset, directory)
    counts = np.bincount(dataset.train.labels, minlength=dataset.num_classes)
    return {"path": str(directory), "digest": digest, "train": len(dataset.train), "test": len(dataset.test),
            "class_counts": [int(c) for c in counts]}


def cmd_train(config: ExperimentConfig, out_dir: Path) -> dict[str, Any]:
    dataset = _load_dataset(config, out_dir)
    experiment = build_experiment(config, dataset)
    kind = config.attack.kind
    path = get_checkpoint_file(out_dir, kind)
    save_checkpoint(path, experiment.model, seed=config.seed, epochs=config.train.epochs,
                    dataset_digest=dataset.digest(), extra={"attack": kind, "config_hash": config_hash(config)})
    m = experiment.metrics()
    row = {"attack": kind, "epochs": config.train.epochs, "ca": m.clean_accuracy,
           "asr": m.attack_success_rate, "pa": m.poisoned_accuracy, "seconds": round(experiment.train_seconds, 3)}
    run_dir = get_run_dir(out_dir, "train", kind)
    write_csv(pl.DataFrame([row]), run_dir / "training.csv", config)
    history = pl.DataFrame([asdict(s) for s in experiment.history],
                           schema={"epoch": pl.Int64, "loss": pl.Float64, "accuracy": pl.Float64,
                                   "learning_rate": pl.Float64})
    write_csv(history, run_dir / "history.csv", config, attack=kind)
    return {"checkpoint": str(path), **row}


def cmd_sweep(config: ExperimentConfig, out_dir: Path) -> dict[str, Any]:
    experiment = _load_experiment(config, out_dir)
    pairs, labels = experiment.paired_set(config.stream.num_pairs, config.seed_for("pairs"))
    eval_pairs, eval_labels = experiment.eval_pairs()
    table = layer_sweep(experiment.model, pairs, labels, config=config.repair,
                        eval_pairs=eval_pairs, eval_labels=eval_labels)
    frame = table.to_frame()
    path = write_csv(frame, get_run_dir(out_dir, "sweep", config.attack.kind) / "sweep.csv", config,
                     attack=config.attack.kind, ca=f"{table.clean_accuracy:.6f}",
                     unmitigated_pa=f"{table.unmitigated_pa:.6f}", samples=table.num_samples)
    return {"path": str(path), "ca": table.clean_accuracy, "unmitigated_pa": table.unmitigated_pa,
            "best_tap": table.best_tap, "frame": frame}


def replica_seed(config: ExperimentConfig, replica: int) -> int:
    return sub_seed(config.seed, f"stream/{replica}")


def _replica_job(args: tuple) -> tuple:
    config, experiment, replica = args
    seed = replica_seed(config, replica)
    spec = DetectorSpec(config.detector.poison_fraction, seed)
    stream = make_stream(experiment.poisoned_test(), experiment.clean_test, spec, config.stream.length)
    clean_init = experiment.clean_init(config.stream.num_clean, sub_seed(seed, "clean"))
    report, state = run_replica(experiment.model, clean_init, stream, config.repair,
                                augmentation=config.augment.build(), seed=sub_seed(seed, "augment"))
    return replica, report, state


def _mean_or_none(values: list[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def cmd_stream(config: ExperimentConfig, out_dir: Path) -> dict[str, Any]:
    experiment = _load_experiment(config, out_dir)
    run_dir = get_run_dir(out_dir, "stream", config.attack.kind)
    jobs = [(config, experiment, r) for r in range(config.stream.replicas)]
    if config.stream.workers > 1:
        with ProcessPoolExecutor(max_workers=config.stream.workers) as pool:
            results = list(pool.map(_replica_job, jobs))
    else:
        results = [_replica_job(job) for job in jobs]

    target = config.attack.target_label
    ca = accuracy(experiment.model, experiment.clean_test)
    reports, summaries = [], []
    for replica, report, state in sorted(results, key=lambda r: r[0]):
        reports.append(report)
        write_jsonl((r.to_dict() for r in report.records), run_dir / f"replica-{replica}.jsonl", config,
                    replica=replica, variant=report.config.variant.value)
        replica_summary = summarize_report(report, target, experiment.model, experiment.clean_test)
        summaries.append(replica_summary)
        write_json(replica_summary, run_dir / f"summary-{replica}.json", config, replica=replica)
        if replica == 0:
            save_state(run_dir / "state-0.fire", state, extra={"config_hash": config_hash(config)})

    curve = pa_curve_frame(reports)
    write_csv(curve, run_dir / "pa_curve.csv", config, attack=config.attack.kind,
              variant=config.repair.variant.value, replicas=len(reports))
    shortest = min(len(pa_curve(r)) for r in reports)
    summary: dict[str, Any] = {
        "attack": config.attack.kind,
        "variant": config.repair.variant.value,
        "mode": config.repair.mode.value,
        "replicas": len(reports),
        "poison_fraction": config.detector.poison_fraction,
        "ca": ca,
        "pa": _mean_or_none([s["pa"] for s in summaries]),
        "asr": _mean_or_none([s["asr"] for s in summaries]),
        "flagged_clean_accuracy": _mean_or_none([s["flagged_clean_accuracy"] for s in summaries]),
        "pa_pos1": pa_at_position(reports, 1) if shortest >= 1 else None,
        "pa_pos10": pa_at_position(reports, 10) if shortest >= 10 else None,
        "pa_first10": mean_pa_between(reports, 1, 10) if shortest >= 10 else None,
        "pa_101_200": mean_pa_between(reports, 101, 200) if shortest >= 200 else None,
        "latency": latency_percentiles([r.latency_us for report in reports for r in report.processed]),
    }
    write_json(summary, run_dir / "summary.json", config)
    return {"path": str(run_dir), **{k: v for k, v in summary.items() if k != "latency"}}


def cmd_bench(config: ExperimentConfig, out_dir: Path) -> dict[str, Any]:
    experiment = _load_experiment(config, out_dir)
    seed = replica_seed(config, 0)
    poisoned = experiment.poisoned_test()
    stream = make_stream(poisoned, None, DetectorSpec(1.0, seed), min(config.stream.length, len(poisoned)))
    clean_init = experiment.clean_init(config.stream.num_clean, sub_seed(seed, "clean"))
    summary = bench_latency(experiment.model, config.repair, stream, clean_init,
                            augmentation=config.augment.build(), seed=sub_seed(seed, "augment"),
                            warmup=config.stream.warmup)
    baseline = shrinkpad_baseline(experiment.model, poisoned, config.augment.shrinkpad_ratio, seed)
    payload = {
        "attack": config.attack.kind,
        "variant": config.repair.variant.value,
        "timing": summary.to_dict(),
        "shrinkpad": {"pa": baseline.poisoned_accuracy, "latency_median_us": baseline.latency_median_us,
                      "samples": baseline.samples},
    }
    path = write_json(payload, get_run_dir(out_dir, "bench", config.attack.kind) / "bench.json", config)
    return {"path": str(path), **summary.to_dict(), "shrinkpad_pa": baseline.poisoned_accuracy}


def cmd_ablate_clean(config: ExperimentConfig, out_dir: Path) -> dict[str, Any]:
    experiment = _load_experiment(config, out_dir)
    frame = clean_count_ablation(
        experiment.model,
        experiment.clean_pool(),
        experiment.poisoned_test(),
        config.stream.ablation_counts,
        config.repair,
        stream_seeds=[replica_seed(config, r) for r in range(config.stream.replicas)],
        position=config.stream.ablation_position,
        augmentation=config.augment.build(),
    )
    path = write_csv(frame, get_run_dir(out_dir, "ablate-clean", config.attack.kind) / "ablation.csv", config,
                     attack=config.attack.kind, variant=config.repair.variant.value)
    return {"path": str(path), "frame": frame}


COMMANDS = {
    "gen-data": (cmd_gen_data, "Generate the seeded synthetic dataset"),
    "train": (cmd_train, "Train a backdoored model and write its checkpoint"),
    "sweep": (cmd_sweep, "Per-tap PA with the paired direction"),
    "stream": (cmd_stream, "Run streaming mitigation over seeded replicas"),
    "bench": (cmd_bench, "Time the initialization and online phases"),
    "ablate-clean": (cmd_ablate_clean, "PA vs. number of clean initialization samples"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fire", description="Inference-time backdoor mitigation in latent space.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="JSON experiment config")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="Override a config key by dotted path (repeatable)")
        p.add_argument("--attack", choices=["patch", "blended", "warp"], help="Shortcut for --set attack.kind=...")
        p.add_argument("--out", type=Path, help="Output directory (FIRE_OUT_DIR takes precedence)")
        verbosity = p.add_mutually_exclusive_group()
        verbosity.add_argument("-v", "--verbose", action="store_true")
        verbosity.add_argument("-q", "--quiet", action="store_true")
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _print_result(result: dict[str, Any]) -> None:
    frame = result.pop("frame", None)
    print_rows(list(result.items()))
    if frame is not None:
        print_frame(frame)


def run(argv: Sequence[str] | None = None) -> int:
    """Parse ``argv``, run one command and return its exit code."""
    args = build_parser().parse_args(argv)
    _configure_logging(args)
    try:
        overrides = list(args.overrides)
        if args.attack:
            overrides.append(f"attack.kind={args.attack}")
        config = load_config(args.config, overrides)
        if args.out is not None:
            config = replace(config, out_dir=str(args.out))
        out_dir = get_out_dir(config.out_dir)
        handler, _ = COMMANDS[args.command]
        result = handler(config, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FireError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    _print_result(result)
    return EXIT_OK


def main() -> None:
    sys.exit(run())
