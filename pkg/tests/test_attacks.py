import numpy as np
import pytest

from fire_repair.attacks import (
    PoisonPlan,
    TriggerKind,
    apply_trigger,
    apply_trigger_batch,
    blended_trigger,
    default_trigger,
    make_paired_set,
    patch_trigger,
    poison_dataset,
    warp_field,
    warp_trigger,
)
from fire_repair.config import AttackConfig
from fire_repair.dataset import LabeledImages
from fire_repair.errors import EmptyInputError, ParameterError, TriggerError
from fire_repair.recipes import make_trigger
from fire_repair.resample import bilinear_sample, resize_bilinear


@pytest.fixture
def image(rng):
    return rng.uniform(0.0, 1.0, size=(3, 8, 8)).astype(np.float32)


def _pool(n, seed=0):
    rng = np.random.default_rng(seed)
    return LabeledImages(rng.uniform(size=(n, 1, 4, 4)).astype(np.float32), rng.integers(0, 4, n))


class TestPatch:
    def test_single_pixel(self):
        x = np.zeros((1, 4, 4), np.float32)
        out = apply_trigger(patch_trigger(size=1, location=(0, 0), value=1.0), x)
        expected = np.zeros((1, 4, 4))
        expected[0, 0, 0] = 1.0
        np.testing.assert_array_equal(out, expected)
        assert x.sum() == 0.0

    def test_default_is_bottom_right(self, image):
        out = apply_trigger(patch_trigger(), image)
        np.testing.assert_array_equal(out[:, 5:, 5:], 1.0)
        np.testing.assert_array_equal(out[:, :5, :], image[:, :5, :])

    def test_idempotent(self, image):
        t = patch_trigger(size=2, value=np.array([0.1, 0.5, 0.9]))
        once = apply_trigger(t, image)
        np.testing.assert_array_equal(apply_trigger(t, once), once)

    def test_values_clamped(self, image):
        out = apply_trigger(patch_trigger(value=2.0), image)
        assert out.max() == 1.0

    def test_does_not_fit(self, image):
        with pytest.raises(TriggerError):
            apply_trigger(patch_trigger(size=9), image)
        with pytest.raises(TriggerError):
            apply_trigger(patch_trigger(size=2, location=(7, 0)), image)

    def test_invalid_size(self):
        with pytest.raises(TriggerError):
            patch_trigger(size=0)


class TestBlend:
    def test_zero_ratio_is_identity(self, image, rng):
        t = blended_trigger(rng.uniform(size=image.shape), ratio=0.0)
        np.testing.assert_array_equal(apply_trigger(t, image), image)

    def test_full_ratio_is_trigger_image(self, image, rng):
        pattern = rng.uniform(size=image.shape).astype(np.float32)
        np.testing.assert_allclose(apply_trigger(blended_trigger(pattern, ratio=1.0), image), pattern, atol=1e-7)

    def test_convex_combination(self, image, rng):
        pattern = rng.uniform(size=image.shape)
        out = apply_trigger(blended_trigger(pattern, ratio=0.2), image)
        np.testing.assert_allclose(out, 0.8 * image + 0.2 * pattern, atol=1e-6)

    def test_shape_mismatch(self, image):
        with pytest.raises(TriggerError):
            apply_trigger(blended_trigger(np.zeros((3, 4, 4))), image)

    def test_invalid_ratio(self):
        with pytest.raises(TriggerError):
            blended_trigger(np.zeros((1, 2, 2)), ratio=1.5)


class TestWarp:
    def test_zero_field_is_identity(self, image):
        t = warp_trigger(np.zeros((2, 8, 8)), strength=3.0)
        np.testing.assert_allclose(apply_trigger(t, image), image, atol=1e-6)

    def test_half_pixel_shift_matches_bilinear(self, image):
        field = np.zeros((2, 8, 8))
        field[0] = 1.0
        out = apply_trigger(warp_trigger(field, strength=0.5), image)
        below = np.concatenate([image[:, 1:], image[:, -1:]], axis=1)
        np.testing.assert_allclose(out, 0.5 * (image + below), atol=1e-6)

    def test_field_is_seeded_and_bounded(self):
        a = warp_field(8, 8, seed=1)
        assert a.shape == (2, 8, 8)
        np.testing.assert_array_equal(a, warp_field(8, 8, seed=1))
        assert np.abs(a).max() <= 1.0

    def test_field_shape_mismatch(self, image):
        with pytest.raises(TriggerError):
            apply_trigger(warp_trigger(np.zeros((2, 4, 4))), image)


class TestResample:
    def test_integer_coordinates(self, image):
        yy, xx = np.mgrid[0:8, 0:8].astype(float)
        np.testing.assert_allclose(bilinear_sample(image, yy, xx), image, atol=1e-6)

    def test_halving_averages_blocks(self):
        x = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
        out = resize_bilinear(x, 2, 2)
        expected = x.reshape(1, 2, 2, 2, 2).mean(axis=(2, 4))
        np.testing.assert_allclose(out, expected, atol=1e-5)


class TestDefaultTrigger:
    @pytest.mark.parametrize("kind", list(TriggerKind))
    def test_changes_image(self, kind, image):
        t = default_trigger(kind, image.shape, seed=3)
        assert t.kind is kind
        assert not np.array_equal(apply_trigger(t, image), image)

    def test_non_image_input(self):
        with pytest.raises(TriggerError):
            apply_trigger(patch_trigger(), np.zeros((4, 4)))

    def test_strength_knobs(self, image):
        assert default_trigger("patch", image.shape, patch_size=2).patch_size == 2
        assert default_trigger("blended", image.shape, blend_ratio=0.5).blend_ratio == 0.5
        assert default_trigger("warp", image.shape, warp_strength=0.7).warp_strength == 0.7

    @pytest.mark.parametrize("kind", ["patch", "blended", "warp"])
    def test_config_trigger_matches(self, kind, image):
        attack = AttackConfig(kind=kind, patch_size=2, blend_ratio=0.35, warp_strength=0.9)
        built = make_trigger(attack, image.shape, seed=11)
        expected = default_trigger(kind, image.shape, seed=11, patch_size=2, blend_ratio=0.35, warp_strength=0.9)
        np.testing.assert_array_equal(apply_trigger(built, image), apply_trigger(expected, image))


class TestPoisonDataset:
    def test_count_and_labels(self):
        data = _pool(1000)
        result = poison_dataset(data, PoisonPlan(patch_trigger(size=1), target_label=2, poison_ratio=0.1), seed=7)
        assert len(result.indices) == 100
        assert len(np.unique(result.indices)) == 100
        assert np.all(result.data.labels[result.indices] == 2)

    def test_only_selected_entries_change(self):
        data = _pool(200)
        result = poison_dataset(data, PoisonPlan(patch_trigger(size=1), target_label=0), seed=3)
        chosen = np.zeros(200, bool)
        chosen[result.indices] = True
        np.testing.assert_array_equal(result.data.images[~chosen], data.images[~chosen])
        np.testing.assert_array_equal(result.data.labels[~chosen], data.labels[~chosen])
        for i in result.indices:
            np.testing.assert_array_equal(result.data.images[i], apply_trigger(patch_trigger(size=1), data.images[i]))

    def test_deterministic(self):
        data = _pool(100)
        plan = PoisonPlan(patch_trigger(size=1), target_label=1, poison_ratio=0.3)
        a = poison_dataset(data, plan, seed=11)
        b = poison_dataset(data, plan, seed=11)
        np.testing.assert_array_equal(a.indices, b.indices)
        np.testing.assert_array_equal(a.data.images, b.data.images)

    def test_input_untouched(self):
        data = _pool(50)
        before = data.images.copy()
        poison_dataset(data, PoisonPlan(patch_trigger(size=1), target_label=1, poison_ratio=1.0), seed=0)
        np.testing.assert_array_equal(data.images, before)

    def test_empty(self):
        empty = LabeledImages(np.zeros((0, 1, 4, 4), np.float32), np.zeros(0, np.int64))
        with pytest.raises(EmptyInputError):
            poison_dataset(empty, PoisonPlan(patch_trigger(), target_label=0), seed=0)

    def test_target_outside_classes(self):
        with pytest.raises(ParameterError):
            poison_dataset(_pool(10), PoisonPlan(patch_trigger(size=1), target_label=4), seed=0, num_classes=4)

    @pytest.mark.parametrize("ratio", [0.0, 1.5])
    def test_invalid_ratio(self, ratio):
        with pytest.raises(ParameterError):
            PoisonPlan(patch_trigger(), target_label=0, poison_ratio=ratio)


class TestPairedSet:
    def test_pairs_aligned(self, rng):
        clean = rng.uniform(size=(4, 3, 8, 8)).astype(np.float32)
        t = patch_trigger()
        pairs = make_paired_set(clean, t)
        assert len(pairs) == 4
        for (x, xp), original in zip(pairs, clean):
            np.testing.assert_array_equal(x, original)
            np.testing.assert_array_equal(xp, apply_trigger(t, original))
        np.testing.assert_array_equal(np.stack([p for _, p in pairs]), apply_trigger_batch(t, clean))
