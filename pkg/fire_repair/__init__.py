"""fire-repair: inference-time backdoor mitigation by latent trigger-direction repair."""

__version__ = "0.1.0"

from fire_repair.attacks import PoisonPlan, TriggerKind, TriggerOp, apply_trigger, make_paired_set, poison_dataset
from fire_repair.augment import Augmentation, AugmentChain, AugmentKind, augment, default_chain, shrinkpad
from fire_repair.checkpoint import load_checkpoint, save_checkpoint
from fire_repair.config import ExperimentConfig, config_hash, load_config
from fire_repair.data import get_out_dir
from fire_repair.dataset import Dataset, LabeledImages, generate_synthetic, load_dataset, save_dataset
from fire_repair.direction import (
    DirectionState,
    Displacement,
    centroid_diff_direction,
    clean_centroid,
    combine_directions,
    estimate_direction_augmentation,
    estimate_direction_paired,
    load_state,
    samplewise_displacement,
    save_state,
    update_centroid,
)
from fire_repair.errors import FireError
from fire_repair.evaluation import (
    DetectorSpec,
    Metrics,
    bench_latency,
    clean_count_ablation,
    compute_metrics,
    make_stream,
    pa_at_position,
    shrinkpad_baseline,
)
from fire_repair.model import (
    LayeredModel,
    PredictionOutcome,
    build_desk_model,
    forward,
    forward_from,
    forward_to,
)
from fire_repair.recipes import BackdoorExperiment, run_desk_experiment
from fire_repair.repair import (
    RepairConfig,
    RepairMode,
    RepairOutcome,
    StreamItem,
    StreamReport,
    Variant,
    layer_sweep,
    mitigate_one,
    repair_project,
    repair_subtract,
    repaired_predict,
    run_stream,
)
from fire_repair.train import Hyperparams, train

__all__ = [
    "__version__",
    "FireError",
    "LayeredModel",
    "PredictionOutcome",
    "build_desk_model",
    "forward",
    "forward_to",
    "forward_from",
    "train",
    "Hyperparams",
    "save_checkpoint",
    "load_checkpoint",
    "Dataset",
    "LabeledImages",
    "generate_synthetic",
    "save_dataset",
    "load_dataset",
    "TriggerKind",
    "TriggerOp",
    "PoisonPlan",
    "apply_trigger",
    "poison_dataset",
    "make_paired_set",
    "AugmentKind",
    "Augmentation",
    "AugmentChain",
    "augment",
    "shrinkpad",
    "default_chain",
    "DirectionState",
    "Displacement",
    "clean_centroid",
    "samplewise_displacement",
    "estimate_direction_paired",
    "centroid_diff_direction",
    "estimate_direction_augmentation",
    "combine_directions",
    "update_centroid",
    "save_state",
    "load_state",
    "RepairConfig",
    "RepairMode",
    "Variant",
    "RepairOutcome",
    "StreamItem",
    "StreamReport",
    "repair_subtract",
    "repair_project",
    "repaired_predict",
    "layer_sweep",
    "run_stream",
    "mitigate_one",
    "Metrics",
    "DetectorSpec",
    "compute_metrics",
    "make_stream",
    "clean_count_ablation",
    "bench_latency",
    "shrinkpad_baseline",
    "pa_at_position",
    "BackdoorExperiment",
    "run_desk_experiment",
    "ExperimentConfig",
    "load_config",
    "config_hash",
    "get_out_dir",
]
