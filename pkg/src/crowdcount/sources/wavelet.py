"""Pyramid Haar decomposition and sub-image energy features.

Three analysis levels recursing on the approximation band only give ten
sub-images: [LL3, LH3, HL3, HH3, LH2, HL2, HH2, LH1, HL1, HH1]. The energy
of a sub-image is the mean absolute coefficient; each sub-image also
contributes variance/skewness/kurtosis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from ..imaging import Patch, moment_stats

MIN_SIDE = 16
LEVELS = 3

SUBBAND_ORDER = ("LL3", "LH3", "HL3", "HH3", "LH2", "HL2", "HH2", "LH1", "HL1", "HH1")


@dataclass(frozen=True)
class WaveletFeatures:
    energies: np.ndarray  # 10 values in SUBBAND_ORDER
    subband_stats: np.ndarray  # 30 values: (variance, skewness, kurtosis) per sub-image

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.energies, self.subband_stats])


def _extend_even(a: np.ndarray) -> np.ndarray:
    """Half-sample symmetric extension: duplicate the last row/col if odd."""
    if a.shape[0] % 2:
        a = np.vstack([a, a[-1:]])
    if a.shape[1] % 2:
        a = np.hstack([a, a[:, -1:]])
    return a


def haar_step(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One orthonormal 2-D Haar analysis step -> (LL, LH, HL, HH).

    Vertical filtering first, then horizontal; LH carries horizontal
    detail (low vertical / high horizontal), HL carries vertical detail.
    The two 1/sqrt(2) filter passes are fused into one 2x2 block
    transform so the net normalization is an exact division by 2; a
    constant block then transforms without rounding error. Odd
    dimensions are extended to even length first.
    """
    a = _extend_even(np.asarray(a, dtype=np.float64))
    tl = a[0::2, 0::2]
    tr = a[0::2, 1::2]
    bl = a[1::2, 0::2]
    br = a[1::2, 1::2]
    ll = (tl + tr + bl + br) / 2.0
    lh = (tl - tr + bl - br) / 2.0
    hl = (tl + tr - bl - br) / 2.0
    hh = (tl - tr - bl + br) / 2.0
    return ll, lh, hl, hh


def pyramid(a: np.ndarray, levels: int = LEVELS) -> dict[str, np.ndarray]:
    """Multi-level decomposition recursing on LL only."""
    bands: dict[str, np.ndarray] = {}
    approx = a
    for lvl in range(1, levels + 1):
        approx, lh, hl, hh = haar_step(approx)
        bands[f"LH{lvl}"] = lh
        bands[f"HL{lvl}"] = hl
        bands[f"HH{lvl}"] = hh
    bands[f"LL{levels}"] = approx
    return bands


def subband_energy(band: np.ndarray) -> float:
    """Mean absolute coefficient."""
    return float(np.mean(np.abs(band)))


def wavelet_features(p: Patch) -> WaveletFeatures:
    """Ten pyramid energies plus per-sub-image moment statistics."""
    if p.height < MIN_SIDE or p.width < MIN_SIDE:
        raise DataError(
            f"patch {p.height}x{p.width} too small for {LEVELS} analysis levels"
        )
    bands = pyramid(p.pixels, LEVELS)
    energies = np.array([subband_energy(bands[name]) for name in SUBBAND_ORDER])
    stats = []
    for name in SUBBAND_ORDER:
        m = moment_stats(bands[name].ravel())
        stats.extend((m.variance, m.skewness, m.kurtosis))
    return WaveletFeatures(energies=energies, subband_stats=np.array(stats))
