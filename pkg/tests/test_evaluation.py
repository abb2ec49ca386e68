import numpy as np
import pytest

from fire_repair.dataset import LabeledImages
from fire_repair.errors import EmptyInputError, InsufficientPoolError, ParameterError
from fire_repair.evaluation import (
    DetectorSpec,
    LatencySummary,
    accuracy,
    attack_success_rate,
    bench_latency,
    clean_count_ablation,
    compute_metrics,
    flagged_clean_accuracy,
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
from fire_repair.repair import RepairConfig, SampleRecord, StreamReport, Variant
from tests.helpers import constant_model

NO_AUGMENT = RepairConfig(variant=Variant.NO_AUGMENT)


def _record(index, final, true, poisoned=True, exit_tap=None, error=None):
    return SampleRecord(index=index, unmitigated_label=final, final_label=final, exit_tap=exit_tap,
                        per_tap_labels=(), latency_us=10.0 + index, true_label=true, poisoned=poisoned, error=error)


def _report(pairs, **kwargs):
    """Report from (final, true) pairs, all poisoned."""
    return StreamReport(config=RepairConfig(), records=[_record(i, f, t, **kwargs) for i, (f, t) in enumerate(pairs)])


def _vectors(n, seed=0, num_classes=3):
    rng = np.random.default_rng(seed)
    return LabeledImages(rng.normal(size=(n, 4)).astype(np.float32), rng.integers(0, num_classes, n))


class TestScoring:
    def test_accuracy(self):
        data = LabeledImages(np.zeros((4, 4), np.float32), np.array([1, 1, 0, 2]))
        assert accuracy(constant_model(1), data) == 0.5

    def test_attack_success_rate_skips_target_class(self):
        assert attack_success_rate(np.array([0, 0, 1, 2]), np.array([1, 0, 1, 2]), 0) == pytest.approx(1 / 3)

    def test_attack_success_rate_all_target(self):
        assert attack_success_rate(np.array([0, 1]), np.array([0, 0]), 0) == 0.0

    def test_model_metrics(self):
        clean = LabeledImages(np.zeros((4, 4), np.float32), np.array([0, 0, 1, 1]))
        poisoned = LabeledImages(np.zeros((3, 4), np.float32), np.array([1, 2, 0]))
        metrics = compute_metrics(constant_model(0), 0, clean=clean, poisoned=poisoned)
        assert metrics.clean_accuracy == 0.5
        assert metrics.poisoned_accuracy == pytest.approx(1 / 3)
        assert metrics.attack_success_rate == 1.0
        assert metrics.to_dict()["pa_curve"] is None

    def test_model_metrics_need_sets(self):
        with pytest.raises(EmptyInputError):
            compute_metrics(constant_model(0), 0, clean=_vectors(3), poisoned=None)

    def test_report_metrics(self):
        report = _report([(1, 1), (0, 2), (2, 2)])
        report.records.append(_record(3, 1, 1, poisoned=False))
        metrics = compute_metrics(report, target_label=0)
        assert metrics.poisoned_accuracy == pytest.approx(2 / 3)
        assert metrics.attack_success_rate == pytest.approx(1 / 3)
        assert metrics.clean_accuracy == 1.0
        np.testing.assert_array_equal(metrics.pa_curve, [1.0, 0.0, 1.0])

    def test_report_metrics_with_clean_set(self):
        clean = LabeledImages(np.zeros((2, 4), np.float32), np.array([2, 1]))
        metrics = compute_metrics(_report([(1, 1)]), 0, clean=clean, model=constant_model(2))
        assert metrics.clean_accuracy == 0.5

    def test_errors_are_not_scored(self):
        report = _report([(1, 1)])
        report.records.append(_record(1, None, 2, error="bad shape"))
        np.testing.assert_array_equal(pa_curve(report), [1.0])

    def test_unlabeled_report(self):
        with pytest.raises(ParameterError):
            pa_curve(_report([(1, None)]))

    def test_empty_report(self):
        with pytest.raises(EmptyInputError):
            compute_metrics(_report([]), 0)

    def test_flagged_clean_accuracy_absent(self):
        assert flagged_clean_accuracy(_report([(1, 1)])) is None


class TestCurves:
    def test_pa_at_position(self):
        reports = [_report([(1, 1), (0, 1)]), _report([(1, 1), (1, 1)])]
        assert pa_at_position(reports, 1) == 1.0
        assert pa_at_position(reports, 2) == 0.5

    def test_position_out_of_range(self):
        with pytest.raises(ParameterError):
            pa_at_position([_report([(1, 1)])], 2)
        with pytest.raises(ParameterError):
            pa_at_position([_report([(1, 1)])], 0)

    def test_mean_between(self):
        reports = [_report([(0, 1), (1, 1), (1, 1), (0, 1)])]
        assert mean_pa_between(reports, 2, 3) == 1.0
        assert mean_pa_between(reports, 1, 4) == 0.5
        with pytest.raises(ParameterError):
            mean_pa_between(reports, 3, 5)

    def test_curve_frame(self):
        frame = pa_curve_frame([_report([(1, 1), (0, 1)]), _report([(0, 1), (0, 1)])])
        assert frame.columns == ["position", "pa", "replicas"]
        assert frame["position"].to_list() == [1, 2]
        assert frame["pa"].to_list() == [0.5, 0.0]
        assert frame["replicas"].to_list() == [2, 2]

    def test_empty_curve_frame(self):
        assert pa_curve_frame([]).height == 0


class TestSummary:
    def test_latency_percentiles(self):
        assert latency_percentiles([]) == {"median_us": None, "p95_us": None}
        assert latency_percentiles([1.0, 2.0, 3.0])["median_us"] == 2.0

    def test_summarize_report(self):
        report = _report([(1, 1), (0, 2)])
        report.records[0] = _record(0, 1, 1, exit_tap=3)
        report.records.append(_record(2, 0, 0, poisoned=False))
        report.records.append(_record(3, None, 1, error="bad"))
        summary = summarize_report(report, target_label=0)
        assert summary["samples"] == 4
        assert summary["poisoned"] == 2 and summary["flagged_clean"] == 1 and summary["errors"] == 1
        assert summary["pa"] == 0.5
        assert summary["exit_taps"] == {"3": 1, "none": 2}
        assert summary["pa_curve"] == [1.0, 0.0]
        assert summary["latency"]["median_us"] == 11.0
        assert summary["ca"] is None
        assert summary["asr"] == 0.5

    def test_clean_accuracy_and_asr(self):
        report = _report([(0, 1), (0, 2), (2, 2), (0, 0)])
        clean = LabeledImages(np.zeros((4, 4), np.float32), np.array([0, 0, 1, 2]))
        summary = summarize_report(report, 0, constant_model(0), clean)
        assert summary["ca"] == 0.5
        assert summary["asr"] == pytest.approx(2 / 3)
        assert summary["pa"] == 0.5

    def test_all_clean_stream(self):
        report = StreamReport(config=RepairConfig(),
                              records=[_record(i, 1, t, poisoned=False) for i, t in enumerate([1, 1, 2])])
        summary = summarize_report(report, target_label=0)
        assert summary["pa"] is None and summary["asr"] is None
        assert summary["pa_curve"] == []
        assert summary["poisoned"] == 0 and summary["flagged_clean"] == 3
        assert summary["flagged_clean_accuracy"] == pytest.approx(2 / 3)


class TestMakeStream:
    def test_composition(self):
        stream = make_stream(_vectors(20), _vectors(20, seed=1), DetectorSpec(0.7, seed=3), 10)
        assert len(stream) == 10
        assert sum(item.poisoned for item in stream) == 7

    def test_deterministic(self):
        a = make_stream(_vectors(20), _vectors(20, seed=1), DetectorSpec(0.5, seed=3), 8)
        b = make_stream(_vectors(20), _vectors(20, seed=1), DetectorSpec(0.5, seed=3), 8)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.image, y.image)
            assert x.poisoned == y.poisoned and x.label == y.label

    def test_all_poisoned_without_clean_pool(self):
        stream = make_stream(_vectors(5), None, DetectorSpec(), 5)
        assert all(item.poisoned for item in stream)

    def test_insufficient_pools(self):
        with pytest.raises(InsufficientPoolError):
            make_stream(_vectors(3), None, DetectorSpec(), 4)
        with pytest.raises(InsufficientPoolError):
            make_stream(_vectors(10), None, DetectorSpec(0.5), 4)

    def test_invalid_fraction(self):
        with pytest.raises(ParameterError):
            DetectorSpec(poison_fraction=1.2)


class TestReplicas:
    def test_run_replica(self, mlp):
        stream = make_stream(_vectors(10), None, DetectorSpec(seed=2), 6)
        report, state = run_replica(mlp, _vectors(5, seed=9).images, stream, NO_AUGMENT, seed=4)
        assert len(report.processed) == 6
        assert report.init_us > 0
        assert state.counts()[0] == 6

    def test_clean_count_ablation(self, mlp):
        frame = clean_count_ablation(mlp, _vectors(10, seed=1), _vectors(10, seed=2), [1, 3], NO_AUGMENT,
                                     stream_seeds=(0, 1), position=3)
        assert frame.columns == ["n_clean", "pa_at_position", "position", "seeds"]
        assert frame["n_clean"].to_list() == [1, 3]
        assert frame["seeds"].to_list() == [2, 2]
        assert all(0.0 <= v <= 1.0 for v in frame["pa_at_position"])

    def test_ablation_count_exceeds_pool(self, mlp):
        with pytest.raises(InsufficientPoolError):
            clean_count_ablation(mlp, _vectors(2), _vectors(10), [3], NO_AUGMENT, position=2)


class TestTiming:
    def test_bench_latency(self, mlp):
        stream = list(_vectors(6).images)
        summary = bench_latency(mlp, NO_AUGMENT, stream, _vectors(5, seed=3).images, warmup=2)
        assert summary.samples == 6
        assert summary.online_median_us > 0 and summary.forward_median_us > 0
        assert summary.online_p95_us >= summary.online_median_us
        assert summary.to_dict()["overhead_ratio"] == pytest.approx(summary.overhead_ratio)

    def test_bench_empty_stream(self, mlp):
        summary = bench_latency(mlp, NO_AUGMENT, [], _vectors(5).images)
        assert summary.samples == 0 and summary.overhead_ratio is None

    def test_overhead_ratio(self):
        assert LatencySummary(1.0, 30.0, 40.0, 10.0, 3).overhead_ratio == 3.0

    def test_shrinkpad_unit_ratio_matches_plain_accuracy(self, tiny_conv, rng):
        data = LabeledImages(rng.uniform(size=(12, 3, 8, 8)).astype(np.float32), rng.integers(0, 3, 12))
        result = shrinkpad_baseline(tiny_conv, data, ratio=1.0, seed=2)
        assert result.samples == 12
        assert result.poisoned_accuracy == accuracy(tiny_conv, data)
