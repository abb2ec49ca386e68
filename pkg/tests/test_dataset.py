import json

import numpy as np
import pytest

from fire_repair.dataset import LabeledImages, generate_synthetic, load_dataset, save_dataset
from fire_repair.errors import EmptyInputError, FormatError, ParameterError


@pytest.fixture
def small_dataset():
    return generate_synthetic(5, num_classes=3, image_size=8, train_size=30, test_size=12)


class TestGenerateSynthetic:
    def test_shapes_and_range(self, small_dataset):
        assert small_dataset.train.images.shape == (30, 3, 8, 8)
        assert small_dataset.test.images.shape == (12, 3, 8, 8)
        assert small_dataset.train.images.dtype == np.float32
        assert small_dataset.train.images.min() >= 0.0
        assert small_dataset.train.images.max() <= 1.0

    def test_balanced_labels(self, small_dataset):
        assert np.bincount(small_dataset.train.labels).tolist() == [10, 10, 10]

    def test_seeded(self, small_dataset):
        again = generate_synthetic(5, num_classes=3, image_size=8, train_size=30, test_size=12)
        assert again.digest() == small_dataset.digest()
        other = generate_synthetic(6, num_classes=3, image_size=8, train_size=30, test_size=12)
        assert other.digest() != small_dataset.digest()

    def test_invalid_arguments(self):
        with pytest.raises(ParameterError):
            generate_synthetic(0, num_classes=1)


class TestLabeledImages:
    def test_length_mismatch(self):
        with pytest.raises(ParameterError):
            LabeledImages(np.zeros((2, 1)), np.zeros(3))

    def test_where(self, small_dataset):
        ones = small_dataset.train.where(small_dataset.train.labels == 1)
        assert len(ones) == 10
        assert set(ones.labels.tolist()) == {1}

    def test_sample_is_seeded_and_distinct(self, small_dataset):
        a = small_dataset.train.sample(7, seed=2)
        b = small_dataset.train.sample(7, seed=2)
        np.testing.assert_array_equal(a.images, b.images)
        assert len({x.tobytes() for x in a.images}) == 7

    def test_sample_too_many(self, small_dataset):
        with pytest.raises(EmptyInputError):
            small_dataset.test.sample(13, seed=0)


class TestDiskFormat:
    def test_round_trip(self, small_dataset, tmp_path):
        digest = save_dataset(small_dataset, tmp_path / "data")
        loaded = load_dataset(tmp_path / "data")
        assert digest == small_dataset.digest() == loaded.digest()
        np.testing.assert_array_equal(loaded.test.labels, small_dataset.test.labels)
        assert loaded.num_classes == 3

    def test_truncated_images(self, small_dataset, tmp_path):
        save_dataset(small_dataset, tmp_path)
        images = tmp_path / "images.f32"
        images.write_bytes(images.read_bytes()[:-4])
        with pytest.raises(FormatError):
            load_dataset(tmp_path)

    def test_digest_mismatch(self, small_dataset, tmp_path):
        save_dataset(small_dataset, tmp_path)
        index = json.loads((tmp_path / "index.json").read_text())
        index["digest"] = "0" * 64
        (tmp_path / "index.json").write_text(json.dumps(index))
        with pytest.raises(FormatError):
            load_dataset(tmp_path)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "nowhere")
