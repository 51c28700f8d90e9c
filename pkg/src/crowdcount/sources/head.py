"""Sliding-window head detector over gradient-orientation features.

A single linear filter is trained on small fixed-size windows (heads vs.
background) by ridge regression to +/-1 labels. Detection slides the
window over a scale ladder with greedy non-maximum suppression; the per
cell output is the surviving detection count plus scale and confidence
statistics. The detector is intentionally permissive: it feeds the fusion
layer evidence, not final counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DataError
from ..imaging import Patch

HOG_CELL = 4
HOG_BINS = 8
NMS_IOU = 0.3
MIN_CLASS_EXAMPLES = 10
RIDGE_L2 = 1.0
# Windows whose total gradient magnitude falls below this are numerically
# blank (resampling jitter on flat regions lands around 1e-15) and keep a
# zero feature vector instead of being normalized up to unit length.
NORM_FLOOR = 1e-8


@dataclass(frozen=True)
class HeadFilter:
    """Linear scorer over window gradient-orientation features."""

    window: int
    weights: np.ndarray
    bias: float

    @property
    def n_features(self) -> int:
        return int(self.weights.shape[0])


@dataclass(frozen=True)
class Detection:
    x: float  # center column in patch coordinates
    y: float  # center row
    scale: float  # window side in patch pixels
    confidence: float


@dataclass(frozen=True)
class HeadSourceOutput:
    eta_head: int
    scale_mean: float
    scale_var: float
    conf_mean: float
    conf_var: float
    empty: bool

    def as_vector(self) -> np.ndarray:
        return np.array(
            [float(self.eta_head), self.scale_mean, self.scale_var, self.conf_mean, self.conf_var]
        )


def hog_cell_grid(pixels: np.ndarray) -> np.ndarray:
    """Unsigned orientation histograms over non-overlapping 4px cells.

    Returns (rows // 4, cols // 4, 8); trailing pixels that do not fill a
    cell are ignored.
    """
    h, w = pixels.shape
    ch, cw = h // HOG_CELL, w // HOG_CELL
    if ch < 1 or cw < 1:
        raise DataError(f"array {h}x{w} smaller than one {HOG_CELL}px cell")
    crop = pixels[: ch * HOG_CELL, : cw * HOG_CELL]
    gy, gx = np.gradient(crop)
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx) % np.pi
    bins = np.minimum((ang / np.pi * HOG_BINS).astype(int), HOG_BINS - 1)
    rows = np.arange(ch * HOG_CELL) // HOG_CELL
    cols = np.arange(cw * HOG_CELL) // HOG_CELL
    grid = np.zeros((ch, cw, HOG_BINS))
    np.add.at(grid, (rows[:, None], cols[None, :], bins), mag)
    return grid


def window_features(pixels: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """L2-normalized features for every window position at stride window/4.

    The stride equals the histogram cell size, so windows align with the
    cell grid and each window is a block of cells. Returns (features with
    shape (n, window_cells^2 * bins), top-left pixel coordinates (n, 2)).
    """
    if window % HOG_CELL:
        raise DataError(f"window must be a multiple of {HOG_CELL}, got {window}")
    wc = window // HOG_CELL
    grid = hog_cell_grid(pixels)
    ch, cw, _ = grid.shape
    if ch < wc or cw < wc:
        return np.zeros((0, wc * wc * HOG_BINS)), np.zeros((0, 2))
    blocks = sliding_window_view(grid, (wc, wc, HOG_BINS))[..., 0, :, :, :]
    n_r, n_c = blocks.shape[0], blocks.shape[1]
    feats = blocks.reshape(n_r * n_c, wc * wc * HOG_BINS)
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    feats = np.where(norms > NORM_FLOOR, feats / np.where(norms == 0.0, 1.0, norms), 0.0)
    rr, cc = np.meshgrid(np.arange(n_r), np.arange(n_c), indexing="ij")
    origins = np.stack([rr.ravel() * HOG_CELL, cc.ravel() * HOG_CELL], axis=1)
    return feats, origins


def hog_window(pixels: np.ndarray, window: int) -> np.ndarray:
    """Feature vector of a single window-sized crop."""
    if pixels.shape[0] != window or pixels.shape[1] != window:
        raise DataError(f"expected a {window}x{window} crop, got {pixels.shape}")
    feats, _ = window_features(pixels, window)
    return feats[0]


def train_head_filter(
    positives: list[np.ndarray], negatives: list[np.ndarray], window: int = 16
) -> HeadFilter:
    """Ridge regression of window features to +/-1 class labels.

    Closed-form and deterministic; the L2 term keeps the normal matrix
    well conditioned when examples are few.
    """
    if len(positives) < MIN_CLASS_EXAMPLES or len(negatives) < MIN_CLASS_EXAMPLES:
        raise DataError(
            f"need at least {MIN_CLASS_EXAMPLES} examples per class, got "
            f"{len(positives)} positive / {len(negatives)} negative"
        )
    rows = [hog_window(np.asarray(p, dtype=np.float64), window) for p in positives]
    rows += [hog_window(np.asarray(n, dtype=np.float64), window) for n in negatives]
    x = np.stack(rows)
    y = np.concatenate([np.ones(len(positives)), -np.ones(len(negatives))])
    xa = np.hstack([x, np.ones((x.shape[0], 1))])
    gram = xa.T @ xa + RIDGE_L2 * np.eye(xa.shape[1])
    sol = np.linalg.solve(gram, xa.T @ y)
    return HeadFilter(window=window, weights=sol[:-1], bias=float(sol[-1]))


def score_filter(f: HeadFilter, features: np.ndarray) -> np.ndarray:
    if features.shape[-1] != f.n_features:
        raise DataError(
            f"feature length {features.shape[-1]} does not match filter {f.n_features}"
        )
    return features @ f.weights + f.bias


def _iou(a: Detection, b: Detection) -> float:
    ah, bh = a.scale / 2.0, b.scale / 2.0
    x0 = max(a.x - ah, b.x - bh)
    x1 = min(a.x + ah, b.x + bh)
    y0 = max(a.y - ah, b.y - bh)
    y1 = min(a.y + ah, b.y + bh)
    if x1 <= x0 or y1 <= y0:
        return 0.0
    inter = (x1 - x0) * (y1 - y0)
    union = a.scale**2 + b.scale**2 - inter
    return inter / union


def nms(dets: list[Detection], iou_limit: float = NMS_IOU) -> list[Detection]:
    """Greedy suppression in descending confidence order (stable ties)."""
    if not dets:
        return []
    order = np.argsort(-np.array([d.confidence for d in dets]), kind="stable")
    kept: list[Detection] = []
    for idx in order:
        d = dets[int(idx)]
        if all(_iou(d, k) <= iou_limit for k in kept):
            kept.append(d)
    return kept


def multi_scale_windows(
    pixels: np.ndarray, window: int, scales: tuple[float, ...]
) -> list[tuple[float, np.ndarray, np.ndarray]]:
    """Window features per scale: list of (scale, features, origins).

    Each scale resizes the patch by 1/scale and slides the native window,
    so a window at scale s covers s * window patch pixels. Scales whose
    resized patch is smaller than the window contribute nothing. This part
    is independent of the trained filter, so callers may compute it once
    and score against many filters.
    """
    out = []
    for s in scales:
        if s == 1.0:
            resized = pixels
        else:
            # Edge replication: zero padding would stamp a false step edge
            # around the border of every coarse-scale view.
            resized = ndimage.zoom(pixels, 1.0 / s, order=1, mode="nearest")
        if resized.shape[0] < window or resized.shape[1] < window:
            continue
        feats, origins = window_features(resized, window)
        if feats.shape[0]:
            out.append((float(s), feats, origins))
    return out


def detections_from_windows(
    windows: list[tuple[float, np.ndarray, np.ndarray]], f: HeadFilter, threshold: float
) -> list[Detection]:
    """Score precomputed windows, keep those above threshold, run NMS."""
    candidates: list[Detection] = []
    half = f.window / 2.0
    for s, feats, origins in windows:
        scores = score_filter(f, feats)
        # A window with no gradient energy carries no orientation evidence;
        # only the bias would speak for it, so it is never a candidate.
        textured = np.any(feats != 0.0, axis=1)
        keep = (scores >= threshold) & textured
        for (r0, c0), score in zip(origins[keep], scores[keep]):
            candidates.append(
                Detection(
                    x=(c0 + half) * s,
                    y=(r0 + half) * s,
                    scale=f.window * s,
                    confidence=float(score),
                )
            )
    return nms(candidates)


def detect_heads(
    p: Patch,
    f: HeadFilter,
    threshold: float,
    scales: tuple[float, ...] = (1.0, 1.5, 2.25),
) -> list[Detection]:
    """Multi-scale sliding-window detection with greedy NMS."""
    return detections_from_windows(multi_scale_windows(p.pixels, f.window, scales), f, threshold)


def head_stats(dets: list[Detection]) -> HeadSourceOutput:
    """Population mean/variance of scales and confidences; zeros when empty."""
    if not dets:
        return HeadSourceOutput(
            eta_head=0, scale_mean=0.0, scale_var=0.0, conf_mean=0.0, conf_var=0.0, empty=True
        )
    scales = np.array([d.scale for d in dets])
    confs = np.array([d.confidence for d in dets])
    return HeadSourceOutput(
        eta_head=len(dets),
        scale_mean=float(scales.mean()),
        scale_var=float(scales.var()),
        conf_mean=float(confs.mean()),
        conf_var=float(confs.var()),
        empty=False,
    )
