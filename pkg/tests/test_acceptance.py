"""
Desk-scale end-to-end checks.

These train the reference models (16x16 synthetic images, 10% poisoning) and run
full streams, so they are marked ``slow``.
"""

import numpy as np
import pytest

from fire_repair.augment import default_chain, shrinkpad_chain
from fire_repair.config import sub_seed
from fire_repair.dataset import LabeledImages
from fire_repair.evaluation import (
    DetectorSpec,
    bench_latency,
    clean_count_ablation,
    make_stream,
    mean_pa_between,
    pa_at_position,
    run_replica,
    shrinkpad_baseline,
)
from fire_repair.model import forward, forward_to
from fire_repair.repair import RepairConfig, Variant, init_direction_state, layer_sweep, mitigate_one

pytestmark = pytest.mark.slow

KINDS = ["patch", "blended", "warp"]
MODEL_SEEDS = range(5)
STREAM_SEEDS = range(5)


def _reports(experiment, config, seeds=STREAM_SEEDS, fraction=1.0, length=200, augmentation=None):
    reports = []
    for seed in seeds:
        stream = make_stream(experiment.poisoned_test(), experiment.clean_test, DetectorSpec(fraction, seed), length)
        clean_init = experiment.clean_init(100, sub_seed(seed, "clean"))
        report, _ = run_replica(experiment.model, clean_init, stream, config,
                                augmentation=augmentation or default_chain(), seed=sub_seed(seed, "augment"))
        reports.append(report)
    return reports


class TestBackdoorQuality:
    @pytest.mark.parametrize("seed", MODEL_SEEDS)
    @pytest.mark.parametrize("kind", KINDS)
    def test_trained_model(self, desk_experiment, kind, seed):
        experiment = desk_experiment(kind, seed)
        m = experiment.metrics()
        assert m.clean_accuracy >= 0.90
        assert m.attack_success_rate >= (0.80 if kind == "warp" else 0.90)
        assert 0.0 < experiment.train_seconds <= 60.0

    def test_metrics_match_per_sample_loop(self, desk_experiment):
        experiment = desk_experiment("patch")
        m = experiment.metrics()
        poisoned = experiment.poisoned_test()
        hits = sum(forward(experiment.model, x).label == experiment.target_label for x in poisoned.images)
        assert m.attack_success_rate == pytest.approx(hits / len(poisoned))
        assert m.attack_success_rate + m.poisoned_accuracy <= 1.0


class TestLayerSweep:
    @pytest.mark.parametrize("kind", KINDS)
    def test_some_tap_recovers(self, desk_experiment, kind):
        experiment = desk_experiment(kind)
        pairs, labels = experiment.paired_set(100, seed=0)
        eval_pairs, eval_labels = experiment.eval_pairs()
        table = layer_sweep(experiment.model, pairs, labels, eval_pairs=eval_pairs, eval_labels=eval_labels)
        margin = 0.05 if kind == "patch" else 0.15
        assert max(table.pa_by_tap().values()) >= table.clean_accuracy - margin
        assert table.pa_by_tap()[table.best_tap] == max(table.pa_by_tap().values())


class TestStreaming:
    @pytest.mark.parametrize("kind", KINDS)
    def test_pa_improves_along_stream(self, desk_experiment, kind):
        reports = _reports(desk_experiment(kind), RepairConfig())
        assert mean_pa_between(reports, 101, 200) >= mean_pa_between(reports, 1, 10) + 0.10

    def test_no_augment_first_sample_hits_clean_centroid(self, desk_experiment):
        experiment = desk_experiment("patch")
        config = RepairConfig(variant=Variant.NO_AUGMENT)
        state = init_direction_state(experiment.model, experiment.clean_init(100, seed=1), config)
        x = experiment.poisoned_test().images[0]
        mitigate_one(experiment.model, state, x, config)
        first = experiment.model.taps[0]
        repaired = forward_to(experiment.model, x, first) - state[first].direction
        np.testing.assert_allclose(repaired, state[first].clean_centroid, rtol=1e-6, atol=1e-6)

    def test_augment_only_close_to_combined(self, desk_experiment):
        experiment = desk_experiment("patch")
        combined = mean_pa_between(_reports(experiment, RepairConfig()), 101, 200)
        augment_only = mean_pa_between(_reports(experiment, RepairConfig(variant=Variant.AUGMENT_ONLY)), 101, 200)
        assert augment_only >= combined - 0.15

    @pytest.mark.parametrize("fraction,tolerance", [(0.9, 0.10), (0.8, 0.15)])
    def test_imperfect_detector(self, desk_experiment, fraction, tolerance):
        experiment = desk_experiment("patch")
        full = mean_pa_between(_reports(experiment, RepairConfig()), 141, 150)
        mixed = mean_pa_between(_reports(experiment, RepairConfig(), fraction=fraction), 141, 150)
        assert mixed >= full - tolerance


class TestAblationAndTiming:
    def test_ten_clean_samples_suffice(self, desk_experiment):
        experiment = desk_experiment("patch")
        frame = clean_count_ablation(experiment.model, experiment.clean_pool(), experiment.poisoned_test(),
                                     [1, 10, 50, 100], RepairConfig(), stream_seeds=range(20), position=10,
                                     augmentation=default_chain())
        pa = dict(zip(frame["n_clean"].to_list(), frame["pa_at_position"].to_list()))
        assert abs(pa[10] - pa[100]) <= 0.05
        assert pa[50] >= pa[1] - 0.05

    def test_online_overhead(self, desk_experiment):
        experiment = desk_experiment("patch")
        stream = make_stream(experiment.poisoned_test(), None, DetectorSpec(1.0, 0), 100)
        summary = bench_latency(experiment.model, RepairConfig(), stream, experiment.clean_init(100, 0),
                                augmentation=default_chain(), warmup=5)
        assert summary.init_us > 0
        assert summary.overhead_ratio < 10

    def test_shrinkpad_first_sample_matches_standalone(self, desk_experiment):
        experiment = desk_experiment("patch")
        config = RepairConfig(variant=Variant.AUGMENT_ONLY)
        chain = shrinkpad_chain(0.9)
        seeds = range(50)
        reports = _reports(experiment, config, seeds=seeds, length=1, augmentation=chain)
        firsts = []
        for seed in seeds:
            item = make_stream(experiment.poisoned_test(), None, DetectorSpec(1.0, seed), 1)[0]
            firsts.append(shrinkpad_baseline(experiment.model, LabeledImages(item.image[None], np.array([item.label])),
                                             ratio=0.9, seed=sub_seed(seed, "augment")).poisoned_accuracy)
        assert abs(pa_at_position(reports, 1) - float(np.mean(firsts))) <= 0.02
