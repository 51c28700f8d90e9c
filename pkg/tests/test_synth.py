"""Synthetic dataset generator: determinism, annotation exactness, structure."""

import json

import numpy as np
import pytest
from conftest import tree_digest

from crowdcount import dataset, synth
from crowdcount.errors import ConfigError


class TestDeterminism:
    def test_same_seed_writes_byte_identical_trees(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        synth.generate_dataset(a, 3, (30, 80), 17, size=128)
        synth.generate_dataset(b, 3, (30, 80), 17, size=128)
        da, db = tree_digest(a), tree_digest(b)
        assert da == db
        assert len(da) == 3 * 2 + 1  # image + annotation per id, one manifest

    def test_different_seeds_differ(self, tmp_path):
        synth.generate_dataset(tmp_path / "a", 2, (30, 80), 1, size=128)
        synth.generate_dataset(tmp_path / "b", 2, (30, 80), 2, size=128)
        assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "b")


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthsmall")
    manifest = synth.generate_dataset(out, 5, (40, 90), 23, size=128)
    return dataset.load_all(dataset.load_manifest(manifest))


class TestContents:
    def test_counts_stay_in_the_requested_range(self, small):
        for s in small:
            assert 40 <= s.annotation.count <= 90

    def test_dots_sit_below_the_horizon_band(self, small):
        # the top half of the frame stays dot-free by construction
        for s in small:
            assert np.all(s.annotation.points[:, 1] >= 0.5 * 128)

    def test_dots_are_inside_the_frame(self, small):
        for s in small:
            pts = s.annotation.points
            assert np.all(pts >= 0.0)
            assert np.all(pts[:, 0] < 128) and np.all(pts[:, 1] < 128)

    def test_pixels_are_normalized(self, small):
        for s in small:
            px = s.image.pixels
            assert px.shape == (128, 128)
            assert px.min() >= 0.0 and px.max() <= 1.0

    def test_ids_are_zero_padded_and_sorted(self, small):
        ids = [s.annotation.image_id for s in small]
        assert ids == sorted(ids)
        assert ids[0] == "img_000"

    def test_manifest_resolves_relative_to_itself(self, tmp_path):
        manifest = synth.generate_dataset(tmp_path / "ds", 2, (30, 60), 9, size=128)
        doc = json.loads(manifest.read_text())
        assert doc["root"] == "."
        assert all(not e["image"].startswith("/") for e in doc["entries"])


class TestValidation:
    def test_zero_images_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            synth.generate_dataset(tmp_path, 0, (10, 20), 0)

    def test_tiny_size_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            synth.generate_dataset(tmp_path, 1, (10, 20), 0, size=32)

    def test_bad_count_range_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ConfigError):
            synth.synth_image(rng, 128, (50, 10))
