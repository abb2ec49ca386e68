"""
Desk-scale backdoor experiments.

A ``BackdoorExperiment`` bundles one synthetic dataset, one trigger, the model trained on
the poisoned training split, and the evaluation pools every command draws from:

    clean pool      clean training samples that were not poisoned (the defender's clean set)
    poisoned test   triggered test samples whose true label is not the target, true labels kept
    paired set      (clean, triggered) pairs for the paired direction estimate
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from fire_repair.attacks import (
    PoisonedSet,
    PoisonPlan,
    TriggerOp,
    apply_trigger_batch,
    default_trigger,
    make_paired_set,
    poison_dataset,
)
from fire_repair.config import AttackConfig, ExperimentConfig
from fire_repair.dataset import Dataset, LabeledImages, generate_synthetic
from fire_repair.evaluation import Metrics, compute_metrics
from fire_repair.model import LayeredModel, build_desk_model
from fire_repair.train import EpochStats, Hyperparams, fit

logger = logging.getLogger(__name__)


def make_dataset(config: ExperimentConfig) -> Dataset:
    d = config.data
    return generate_synthetic(
        config.seed_for("data"),
        num_classes=d.num_classes,
        image_size=d.image_size,
        channels=d.channels,
        train_size=d.train_size,
        test_size=d.test_size,
    )


def make_trigger(attack: AttackConfig, image_shape: tuple[int, ...], seed: int) -> TriggerOp:
    """Trigger for ``attack.kind`` with the configured patch size, blend ratio and warp strength."""
    return default_trigger(attack.kind, image_shape, seed, patch_size=attack.patch_size,
                           blend_ratio=attack.blend_ratio, warp_strength=attack.warp_strength)


def make_model(config: ExperimentConfig, image_shape: tuple[int, ...]) -> LayeredModel:
    return build_desk_model(
        config.seed_for("init"),
        image_shape=image_shape,
        num_classes=config.data.num_classes,
        conv_channels=config.model.conv_channels,
        hidden=config.model.hidden,
    )


def hyperparams(config: ExperimentConfig) -> Hyperparams:
    t = config.train
    return Hyperparams(
        epochs=t.epochs,
        learning_rate=t.learning_rate,
        momentum=t.momentum,
        batch_size=t.batch_size,
        weight_decay=t.weight_decay,
        seed=config.seed_for("train"),
        progress=t.progress,
    )


@dataclass(eq=False)
class BackdoorExperiment:
    config: ExperimentConfig
    dataset: Dataset
    trigger: TriggerOp
    poisoned_train: PoisonedSet
    model: LayeredModel
    history: list[EpochStats] = field(default_factory=list)
    train_seconds: float = 0.0

    @property
    def target_label(self) -> int:
        return self.config.attack.target_label

    @property
    def clean_test(self) -> LabeledImages:
        return self.dataset.test

    def clean_pool(self) -> LabeledImages:
        """Clean training samples left untouched by poisoning."""
        mask = np.ones(len(self.dataset.train), dtype=bool)
        mask[self.poisoned_train.indices] = False
        return self.dataset.train.where(mask)

    def poisoned_test(self) -> LabeledImages:
        """Triggered non-target test samples with their true labels."""
        source = self.dataset.test.where(self.dataset.test.labels != self.target_label)
        return LabeledImages(apply_trigger_batch(self.trigger, source.images), source.labels.copy())

    def paired_set(self, count: int, seed: int) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
        """``count`` (clean, triggered) pairs drawn from non-target clean pool samples, with true labels."""
        pool = self.clean_pool()
        pool = pool.where(pool.labels != self.target_label)
        chosen = pool.sample(count, seed)
        return make_paired_set(chosen.images, self.trigger), chosen.labels

    def eval_pairs(self) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
        """Every non-target test sample paired with its triggered copy."""
        source = self.dataset.test.where(self.dataset.test.labels != self.target_label)
        return make_paired_set(source.images, self.trigger), source.labels

    def clean_init(self, count: int, seed: int) -> np.ndarray:
        return self.clean_pool().sample(count, seed).images

    def metrics(self) -> Metrics:
        return compute_metrics(self.model, self.target_label, clean=self.clean_test, poisoned=self.poisoned_test())


def poison_training_set(config: ExperimentConfig, dataset: Dataset, trigger: TriggerOp) -> PoisonedSet:
    plan = PoisonPlan(trigger, config.attack.target_label, config.attack.poison_ratio)
    return poison_dataset(dataset.train, plan, seed=config.seed_for("poison"), num_classes=dataset.num_classes)


def build_experiment(config: ExperimentConfig, dataset: Dataset | None = None,
                     model: LayeredModel | None = None) -> BackdoorExperiment:
    """Assemble an experiment; trains the model unless one is given."""
    dataset = dataset if dataset is not None else make_dataset(config)
    trigger = make_trigger(config.attack, dataset.image_shape, config.seed_for("trigger"))
    poisoned = poison_training_set(config, dataset, trigger)
    history: list[EpochStats] = []
    seconds = 0.0
    if model is None:
        run = fit(make_model(config, dataset.image_shape), poisoned.data, hyperparams(config))
        model, history, seconds = run.model, run.history, run.seconds
    return BackdoorExperiment(config=config, dataset=dataset, trigger=trigger, poisoned_train=poisoned,
                              model=model, history=history, train_seconds=seconds)


def run_desk_experiment(kind: str = "patch", seed: int = 0, config: ExperimentConfig | None = None,
                        dataset: Dataset | None = None) -> BackdoorExperiment:
    """Train the reference desk model for one attack kind."""
    config = config or ExperimentConfig()
    config = replace(config, seed=seed, attack=replace(config.attack, kind=kind))
    experiment = build_experiment(config, dataset)
    m = experiment.metrics()
    logger.info("desk experiment %s seed=%d: ca=%.4f asr=%.4f pa=%.4f",
                kind, seed, m.clean_accuracy, m.attack_success_rate, m.poisoned_accuracy)
    return experiment
