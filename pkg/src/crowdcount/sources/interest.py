"""Interest points, bag-of-words histograms, and Poisson crowd confidence.

Keypoints come from difference-of-Gaussians extrema over a small scale
pyramid; each gets a 4x4-cell, 8-orientation-bin gradient histogram
descriptor (128 values). Descriptors are assigned to a trained codebook,
and the resulting word-count histogram feeds both an SVR count and a
two-model Poisson log-likelihood ratio that says how crowd-like the cell
is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import DataError
from ..imaging import Patch
from ..learn import Codebook, assign_clusters

MIN_SIDE = 16

N_OCTAVES = 3
LEVELS_PER_OCTAVE = 5  # gaussian levels -> 4 difference images
BASE_SIGMA = 1.6
STEP = 2.0 ** (1.0 / 3.0)
CONTRAST_THRESHOLD = 0.01
EDGE_RATIO = 10.0

DESC_WINDOW = 16  # pixels at the keypoint's octave resolution
DESC_GRID = 4
DESC_BINS = 8
DESC_CLAMP = 0.2


@dataclass(frozen=True)
class Descriptor:
    x: float
    y: float
    scale: float
    vector: np.ndarray  # 128 values, L2-normalized (or all-zero)


@dataclass(frozen=True)
class PoissonRates:
    """Per-word expected counts under the crowd (+) and non-crowd (-) models."""

    lambda_plus: np.ndarray
    lambda_minus: np.ndarray

    def __post_init__(self):
        lp = np.asarray(self.lambda_plus, dtype=np.float64)
        lm = np.asarray(self.lambda_minus, dtype=np.float64)
        if lp.shape != lm.shape or lp.ndim != 1:
            raise DataError("rate vectors must be 1-D and the same length")
        if (lp <= 0).any() or (lm <= 0).any():
            raise DataError("all word rates must be strictly positive")
        object.__setattr__(self, "lambda_plus", lp)
        object.__setattr__(self, "lambda_minus", lm)

    @property
    def size(self) -> int:
        return int(self.lambda_plus.shape[0])


def _gaussian_levels(base: np.ndarray) -> list[np.ndarray]:
    """Gaussian stack for one octave, sigmas BASE_SIGMA * STEP**i."""
    levels = [ndimage.gaussian_filter(base, BASE_SIGMA)]
    for i in range(1, LEVELS_PER_OCTAVE):
        prev_sigma = BASE_SIGMA * STEP ** (i - 1)
        next_sigma = BASE_SIGMA * STEP**i
        inc = math.sqrt(next_sigma**2 - prev_sigma**2)
        levels.append(ndimage.gaussian_filter(levels[-1], inc))
    return levels


def _scale_extrema(dogs: np.ndarray) -> list[tuple[int, int, int]]:
    """Strict 26-neighbor extrema of a (levels, h, w) difference stack.

    Only the interior difference levels are eligible; a 1-pixel spatial
    border is excluded.
    """
    fp = np.ones((3, 3, 3), dtype=bool)
    fp[1, 1, 1] = False
    neighbor_max = ndimage.maximum_filter(dogs, footprint=fp, mode="constant", cval=-np.inf)
    neighbor_min = ndimage.minimum_filter(dogs, footprint=fp, mode="constant", cval=np.inf)
    strong = np.abs(dogs) > CONTRAST_THRESHOLD
    extrema = ((dogs > neighbor_max) | (dogs < neighbor_min)) & strong
    extrema[0] = extrema[-1] = False
    extrema[:, 0, :] = extrema[:, -1, :] = False
    extrema[:, :, 0] = extrema[:, :, -1] = False
    return [tuple(idx) for idx in np.argwhere(extrema)]


def _passes_edge_check(dog: np.ndarray, r: int, c: int) -> bool:
    """Reject ridge-like responses via the 2x2 spatial Hessian ratio."""
    dxx = dog[r, c + 1] - 2 * dog[r, c] + dog[r, c - 1]
    dyy = dog[r + 1, c] - 2 * dog[r, c] + dog[r - 1, c]
    dxy = (dog[r + 1, c + 1] - dog[r + 1, c - 1] - dog[r - 1, c + 1] + dog[r - 1, c - 1]) / 4.0
    tr = dxx + dyy
    det = dxx * dyy - dxy * dxy
    if det <= 0:
        return False
    return tr * tr / det < (EDGE_RATIO + 1) ** 2 / EDGE_RATIO


def _descriptor_vector(level: np.ndarray, r: int, c: int) -> np.ndarray | None:
    """128-dim gradient-orientation histogram around (r, c), or None near borders."""
    half = DESC_WINDOW // 2
    if not (half <= r < level.shape[0] - half and half <= c < level.shape[1] - half):
        return None
    win = level[r - half : r + half, c - half : c + half]
    gy, gx = np.gradient(win)
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx) % (2.0 * math.pi)
    bins = np.minimum((ang / (2.0 * math.pi) * DESC_BINS).astype(int), DESC_BINS - 1)
    # center-weighted magnitudes emphasize structure near the keypoint
    coords = np.arange(DESC_WINDOW) - (DESC_WINDOW - 1) / 2.0
    g = np.exp(-(coords**2) / (2.0 * (DESC_WINDOW / 2.0) ** 2))
    weight = mag * g[:, None] * g[None, :]
    cell = DESC_WINDOW // DESC_GRID
    hist = np.zeros((DESC_GRID, DESC_GRID, DESC_BINS))
    cr = np.repeat(np.arange(DESC_GRID), cell)
    np.add.at(hist, (cr[:, None], cr[None, :], bins), weight)
    vec = hist.ravel()
    norm = float(np.linalg.norm(vec))
    if norm < 1e-12:
        return None
    vec = np.minimum(vec / norm, DESC_CLAMP)
    norm = float(np.linalg.norm(vec))
    return vec / norm


def extract_descriptors(p: Patch) -> list[Descriptor]:
    """Difference-of-Gaussians keypoints with orientation-histogram descriptors.

    Deterministic for fixed input. Keypoint coordinates are in patch-local
    pixels (x = column). Featureless patches return an empty list.
    """
    if p.height < MIN_SIDE or p.width < MIN_SIDE:
        raise DataError(f"patch {p.height}x{p.width} below the {MIN_SIDE}px descriptor minimum")
    out: list[Descriptor] = []
    base = p.pixels
    for octave in range(N_OCTAVES):
        if base.shape[0] < DESC_WINDOW + 2 or base.shape[1] < DESC_WINDOW + 2:
            break
        levels = _gaussian_levels(base)
        dogs = np.stack([levels[i + 1] - levels[i] for i in range(LEVELS_PER_OCTAVE - 1)])
        factor = float(2**octave)
        for li, r, c in _scale_extrema(dogs):
            if not _passes_edge_check(dogs[li], r, c):
                continue
            vec = _descriptor_vector(levels[li], r, c)
            if vec is None:
                continue
            out.append(
                Descriptor(
                    x=c * factor,
                    y=r * factor,
                    scale=BASE_SIGMA * STEP**li * factor,
                    vector=vec,
                )
            )
        base = levels[3][::2, ::2]  # sigma doubled at this level; halve resolution
    return out


def word_histogram(descs: list[Descriptor], codebook: Codebook) -> np.ndarray:
    """Counts of nearest-centroid assignments, ties to the lowest index."""
    if codebook.size < 1:
        raise DataError("codebook is empty")
    if not descs:
        return np.zeros(codebook.size, dtype=np.int64)
    vectors = np.stack([d.vector for d in descs])
    labels = assign_clusters(vectors, codebook.centroids)
    return np.bincount(labels, minlength=codebook.size).astype(np.int64)


def crowd_confidence(histogram: np.ndarray, rates: PoissonRates) -> float:
    """Log-likelihood ratio of the crowd vs. non-crowd word models.

    mu = sum_i [lambda_i^- - lambda_i^+ + k_i (ln lambda_i^+ - ln lambda_i^-)];
    the factorial terms of the two Poisson likelihoods cancel. Words are
    treated as independent, so the ratio is a plain sum.
    """
    k = np.asarray(histogram, dtype=np.float64)
    if k.shape != rates.lambda_plus.shape:
        raise DataError(
            f"histogram length {k.shape} does not match rate vectors {rates.lambda_plus.shape}"
        )
    lp, lm = rates.lambda_plus, rates.lambda_minus
    return float(np.sum(lm - lp + k * (np.log(lp) - np.log(lm))))


def estimate_rates(
    histograms: np.ndarray, crowd: np.ndarray, rate_floor: float = 0.01
) -> PoissonRates:
    """Per-word Poisson rates: class means floored away from zero.

    ``crowd`` is a boolean row mask; the sample mean is the Poisson
    maximum-likelihood rate, and the floor keeps unseen words from
    producing log 0.
    """
    h = np.asarray(histograms, dtype=np.float64)
    crowd = np.asarray(crowd, dtype=bool)
    if h.ndim != 2 or h.shape[0] != crowd.shape[0]:
        raise DataError("histograms must be (n, K) with one crowd flag per row")
    if rate_floor <= 0:
        raise DataError(f"rate_floor must be positive, got {rate_floor}")
    if not crowd.any() or crowd.all():
        raise DataError("rate estimation needs at least one crowd and one non-crowd cell")
    lam_plus = np.maximum(h[crowd].mean(axis=0), rate_floor)
    lam_minus = np.maximum(h[~crowd].mean(axis=0), rate_floor)
    return PoissonRates(lambda_plus=lam_plus, lambda_minus=lam_minus)
