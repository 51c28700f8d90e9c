"""Gray-level co-occurrence texture features.

Pixel intensities are quantized to a small number of levels; for each of
four directions the normalized joint frequency of level pairs at distance 1
is summarized by dissimilarity, homogeneity, energy, and entropy, plus
variance/skewness/kurtosis of the flattened probability matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError
from ..imaging import Patch, moment_stats

# direction -> (row offset, col offset) for the ordered pair (p, q) with
# q = p + offset; rows grow downward, so 45 and 135 degrees point up
ANGLES = (0, 45, 90, 135)
OFFSETS = {0: (0, 1), 45: (-1, 1), 90: (-1, 0), 135: (-1, -1)}


@dataclass(frozen=True)
class GlcmFeatures:
    """Per direction: (dissimilarity, homogeneity, energy, entropy).

    ``matrix_stats`` holds (variance, skewness, kurtosis) of the flattened
    probability matrix per direction. ``degenerate`` flags directions that
    had no valid pixel pair; their features are reported as zeros.
    """

    features: tuple[tuple[float, float, float, float], ...]  # 4 directions
    matrix_stats: tuple[tuple[float, float, float], ...]  # 4 directions
    degenerate: tuple[bool, ...]

    def feature_vector(self) -> np.ndarray:
        """16 values: directions ascending, (D, H, E, P) within each."""
        return np.array([v for quad in self.features for v in quad])

    def stats_vector(self) -> np.ndarray:
        """12 values: directions ascending, (variance, skewness, kurtosis)."""
        return np.array([v for triple in self.matrix_stats for v in triple])


def quantize(p: Patch, levels: int) -> np.ndarray:
    """Uniform quantization of [0, 1] intensities into ``levels`` bins.

    Bin = floor(value * levels), with 1.0 folded into the top bin.
    """
    if levels < 2:
        raise ConfigError(f"quantization needs at least 2 levels, got {levels}")
    q = np.floor(p.pixels * levels).astype(np.int64)
    return np.clip(q, 0, levels - 1)


def cooccurrence(q: np.ndarray, levels: int, angle: int) -> tuple[np.ndarray, int]:
    """Normalized co-occurrence matrix for one direction.

    Ordered pairs only (no symmetrization). Returns (matrix, pair count);
    a direction with zero valid pairs returns a zero matrix.
    """
    dr, dc = OFFSETS[angle]
    h, w = q.shape
    r0, r1 = max(0, -dr), min(h, h - dr)
    c0, c1 = max(0, -dc), min(w, w - dc)
    if r0 >= r1 or c0 >= c1:
        return np.zeros((levels, levels)), 0
    src = q[r0:r1, c0:c1]
    dst = q[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
    flat = src.ravel() * levels + dst.ravel()
    counts = np.bincount(flat, minlength=levels * levels).reshape(levels, levels)
    n = int(counts.sum())
    return counts / n, n


def _direction_features(f: np.ndarray, levels: int) -> tuple[float, float, float, float]:
    i = np.arange(levels)
    diff = np.abs(i[:, None] - i[None, :])
    dis = float(np.sum(f * diff))
    hom = float(np.sum(f / (1.0 + diff**2)))
    ene = float(np.sum(f * f))
    nz = f[f > 0]
    ent = float(-np.sum(nz * np.log(nz)))
    return dis, hom, ene, ent


def glcm_features(q: np.ndarray, levels: int) -> GlcmFeatures:
    """All four directions' features and matrix statistics.

    Entropy uses the natural log with the 0 * log 0 = 0 convention.
    """
    q = np.asarray(q)
    if q.ndim != 2 or q.shape[0] < 2 or q.shape[1] < 2:
        raise DataError(f"co-occurrence needs a grid of at least 2x2, got {q.shape}")
    if q.min() < 0 or q.max() >= levels:
        raise DataError("quantized grid has values outside [0, levels)")
    feats = []
    stats = []
    degen = []
    for angle in ANGLES:
        f, n = cooccurrence(q, levels, angle)
        if n == 0:
            feats.append((0.0, 0.0, 0.0, 0.0))
            stats.append((0.0, 0.0, 0.0))
            degen.append(True)
            continue
        feats.append(_direction_features(f, levels))
        m = moment_stats(f.ravel())
        stats.append((m.variance, m.skewness, m.kurtosis))
        degen.append(False)
    return GlcmFeatures(
        features=tuple(feats), matrix_stats=tuple(stats), degenerate=tuple(degen)
    )
