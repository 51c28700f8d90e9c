"""Count estimation from periodicity of the gradient image.

Pipeline per cell: gradient magnitude -> centered 2-D spectrum -> ideal
circular low-pass -> inverse transform -> count regional maxima of the
reconstruction. Recurring structure (heads packed at similar spacing)
survives the low-pass; the maxima count tracks how many repetitions the
cell holds. The reconstruction and the reconstruction residual each
contribute moment statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import ConfigError, DataError
from ..imaging import MomentStats, Patch, gradient_magnitude, moment_stats

MIN_SIDE = 16


@dataclass(frozen=True)
class FourierOutput:
    maxima_count: float
    recon_stats: MomentStats
    residual_stats: MomentStats

    def as_vector(self) -> np.ndarray:
        """[maxima_count, recon stats (5), residual stats (5)] -> 11 values."""
        return np.array(
            [self.maxima_count, *self.recon_stats.as_tuple(), *self.residual_stats.as_tuple()]
        )


def low_pass_mask(shape: tuple[int, int], cutoff: float) -> np.ndarray:
    """Ideal circular mask on a centered spectrum.

    The radius is ``cutoff`` times the farthest spectral distance from the
    center (the corner), so cutoff = 1 keeps every coefficient and the
    filter is exactly the identity.
    """
    h, w = shape
    rows = np.arange(h) - h // 2
    cols = np.arange(w) - w // 2
    r = np.hypot(rows[:, None], cols[None, :])
    return r <= cutoff * r.max()


def reconstruct(grad: np.ndarray, cutoff: float) -> np.ndarray:
    """Low-pass reconstruction of a gradient-magnitude array."""
    spectrum = np.fft.fftshift(np.fft.fft2(grad))
    spectrum *= low_pass_mask(grad.shape, cutoff)
    return np.real(np.fft.ifft2(np.fft.ifftshift(spectrum)))


def count_regional_maxima(values: np.ndarray, threshold: float) -> int:
    """Regional maxima above a threshold, plateaus counted once.

    A cell survives when no 8-neighbor exceeds it; equal-valued plateaus
    are then pruned if any member has a strictly greater neighbor, and
    each surviving connected plateau counts as one maximum.
    """
    neighborhood_max = ndimage.maximum_filter(values, size=3, mode="constant", cval=-np.inf)
    bad = values < neighborhood_max
    # spread badness through equal-valued neighbors until stable; for float
    # data plateaus are rare so this loop usually runs once
    while True:
        bad_vals = np.where(bad, values, -np.inf)
        touched = (
            ndimage.maximum_filter(bad_vals, size=3, mode="constant", cval=-np.inf) == values
        )
        new_bad = bad | touched
        if np.array_equal(new_bad, bad):
            break
        bad = new_bad
    good = (~bad) & (values > threshold)
    _, n = ndimage.label(good, structure=np.ones((3, 3), dtype=int))
    return int(n)


def fourier_analyze(p: Patch, cutoff: float = 0.25, peak_sigma: float = 0.5) -> FourierOutput:
    """Low-pass reconstruction maxima count plus reconstruction statistics.

    The maxima threshold is mean + peak_sigma * std of the reconstruction;
    an all-zero gradient (constant patch) yields count 0 and degenerate
    statistics.
    """
    if p.height < MIN_SIDE or p.width < MIN_SIDE:
        raise DataError(f"patch {p.height}x{p.width} below the {MIN_SIDE}px analysis minimum")
    if not 0.0 < cutoff <= 1.0:
        raise ConfigError(f"cutoff must be in (0, 1], got {cutoff}")
    grad = gradient_magnitude(p).pixels
    recon = reconstruct(grad, cutoff)
    mean = float(recon.mean())
    std = float(recon.std())
    if std == 0.0:
        count = 0
    else:
        count = count_regional_maxima(recon, mean + peak_sigma * std)
    residual = np.abs(grad - recon)
    return FourierOutput(
        maxima_count=float(count),
        recon_stats=moment_stats(recon),
        residual_stats=moment_stats(residual),
    )
