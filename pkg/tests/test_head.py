"""Sliding-window head detector: features, training, NMS, statistics."""

import numpy as np
import pytest

from crowdcount.errors import DataError
from crowdcount.imaging import Patch
from crowdcount.sources import head


def head_template(side=16):
    """Dark disk on a light ground."""
    yy, xx = np.mgrid[0:side, 0:side].astype(float)
    r2 = (yy - side / 2) ** 2 + (xx - side / 2) ** 2
    return np.where(r2 <= (side / 3.2) ** 2, 0.2, 0.9)


def trained_filter(seed=23):
    rng = np.random.default_rng(seed)
    template = head_template()
    positives = [np.clip(template + rng.normal(0, 0.02, template.shape), 0, 1) for _ in range(12)]
    negatives = [rng.uniform(0, 1, (16, 16)) for _ in range(12)]
    return head.train_head_filter(positives, negatives, window=16)


class TestHogFeatures:
    def test_cell_grid_shape_and_mass(self):
        rng = np.random.default_rng(22)
        px = rng.random((20, 30))
        grid = head.hog_cell_grid(px)
        assert grid.shape == (5, 7, 8)
        gy, gx = np.gradient(px[:20, :28])
        assert abs(grid.sum() - np.hypot(gx, gy).sum()) <= 1e-9

    def test_window_features_norms_and_origins(self):
        rng = np.random.default_rng(24)
        px = rng.random((32, 32))
        feats, origins = head.window_features(px, 16)
        norms = np.linalg.norm(feats, axis=1)
        assert np.all((np.abs(norms - 1.0) <= 1e-12) | (norms == 0.0))
        assert feats.shape[1] == 16 * 8
        assert {tuple(o) for o in origins} == {
            (r, c) for r in range(0, 17, 4) for c in range(0, 17, 4)
        }

    def test_blank_window_keeps_zero_vector(self):
        feats, _ = head.window_features(np.full((16, 16), 0.6), 16)
        assert np.all(feats == 0.0)

    def test_window_must_be_cell_aligned(self):
        with pytest.raises(DataError):
            head.window_features(np.zeros((32, 32)), 18)


class TestTraining:
    def test_positive_examples_score_above_negatives(self):
        f = trained_filter()
        rng = np.random.default_rng(25)
        pos = head.hog_window(np.clip(head_template() + rng.normal(0, 0.02, (16, 16)), 0, 1), 16)
        neg = head.hog_window(rng.uniform(0, 1, (16, 16)), 16)
        assert head.score_filter(f, pos[None, :])[0] > head.score_filter(f, neg[None, :])[0]

    def test_too_few_examples_rejected(self):
        with pytest.raises(DataError):
            head.train_head_filter([np.zeros((16, 16))] * 3, [np.zeros((16, 16))] * 12)


class TestIou:
    def test_identical_boxes(self):
        d = head.Detection(x=10, y=10, scale=16, confidence=1.0)
        assert head._iou(d, d) == 1.0

    def test_disjoint_boxes(self):
        a = head.Detection(x=0, y=0, scale=16, confidence=1.0)
        b = head.Detection(x=100, y=0, scale=16, confidence=1.0)
        assert head._iou(a, b) == 0.0

    def test_half_shifted_boxes(self):
        a = head.Detection(x=0, y=0, scale=16, confidence=1.0)
        b = head.Detection(x=8, y=0, scale=16, confidence=1.0)
        assert abs(head._iou(a, b) - 1 / 3) <= 1e-12


class TestNms:
    def test_survivors_never_overlap_beyond_limit(self):
        rng = np.random.default_rng(26)
        dets = [
            head.Detection(
                x=float(rng.uniform(0, 80)), y=float(rng.uniform(0, 80)),
                scale=float(rng.choice([16.0, 24.0])), confidence=float(rng.normal()),
            )
            for _ in range(40)
        ]
        kept = head.nms(dets)
        for i, a in enumerate(kept):
            for b in kept[i + 1 :]:
                assert head._iou(a, b) <= head.NMS_IOU

    def test_highest_confidence_always_survives(self):
        dets = [
            head.Detection(x=10, y=10, scale=16, confidence=0.5),
            head.Detection(x=11, y=10, scale=16, confidence=2.0),
            head.Detection(x=12, y=10, scale=16, confidence=1.0),
        ]
        kept = head.nms(dets)
        assert kept[0].confidence == 2.0
        assert len(kept) == 1

    def test_touching_at_limit_is_kept(self):
        # IoU exactly 1/3 > 0.3 is suppressed; just under the limit survives
        a = head.Detection(x=0, y=0, scale=16, confidence=2.0)
        b = head.Detection(x=8, y=0, scale=16, confidence=1.0)  # IoU = 1/3
        c = head.Detection(x=9, y=0, scale=16, confidence=1.0)  # IoU < 0.3
        assert len(head.nms([a, b])) == 1
        assert len(head.nms([a, c])) == 2


class TestDetection:
    def test_blank_patch_yields_nothing(self):
        f = trained_filter()
        p = Patch(origin=(0, 0), pixels=np.full((64, 64), 0.9))
        assert head.detect_heads(p, f, threshold=0.0) == []

    def test_planted_template_found_once_near_plant(self):
        f = trained_filter()
        px = np.full((64, 64), 0.9)
        px[20:36, 28:44] = head_template()
        dets = head.detect_heads(Patch(origin=(0, 0), pixels=px), f, threshold=0.5)
        assert len(dets) == 1
        d = dets[0]
        assert abs(d.x - 36.0) <= 8.0 and abs(d.y - 28.0) <= 8.0

    def test_scales_too_coarse_for_patch_are_skipped(self):
        rng = np.random.default_rng(27)
        windows = head.multi_scale_windows(rng.random((20, 20)), 16, (1.0, 1.5, 2.25))
        assert [s for s, _, _ in windows] == [1.0]

    def test_window_cache_equals_direct_detection(self):
        f = trained_filter()
        rng = np.random.default_rng(28)
        px = rng.random((48, 48))
        cached = head.multi_scale_windows(px, f.window, (1.0, 1.5, 2.25))
        a = head.detections_from_windows(cached, f, threshold=0.0)
        b = head.detect_heads(Patch(origin=(0, 0), pixels=px), f, threshold=0.0)
        assert a == b


class TestHeadStats:
    def test_two_detection_moments(self):
        out = head.head_stats([
            head.Detection(x=1, y=1, scale=16.0, confidence=1.0),
            head.Detection(x=40, y=40, scale=24.0, confidence=3.0),
        ])
        assert out.eta_head == 2
        assert out.scale_mean == 20.0 and out.scale_var == 16.0
        assert out.conf_mean == 2.0 and out.conf_var == 1.0
        assert not out.empty

    def test_empty_is_flagged_zeros(self):
        out = head.head_stats([])
        assert out.empty
        assert np.all(out.as_vector() == 0.0)
