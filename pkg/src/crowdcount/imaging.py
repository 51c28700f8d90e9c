"""Image decoding, grid partitioning, gradients, and shared moment statistics.

Images are grayscale intensity arrays in [0, 1], stored row-major as 2-D
float64 numpy arrays. The PNM decoder handles binary P5 (grayscale) and P6
(RGB, converted via the 0.299/0.587/0.114 luma weights); PNG is accepted
when Pillow is importable.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

MIN_PATCH_SIDE = 8
MIN_CELL_SIZE = 32

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class DecodeError(DataError):
    """Image payload could not be decoded."""


class PnmHeaderError(DecodeError):
    """Missing or malformed PNM magic/header tokens."""


class PnmTruncatedError(DecodeError):
    """Pixel payload shorter than the header promises."""


class PnmMaxvalError(DecodeError):
    """Only 8-bit PNM (maxval 255) is supported."""


@dataclass
class GrayImage:
    """A grayscale image: 2-D float64 intensities in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or self.pixels.shape[0] < 1 or self.pixels.shape[1] < 1:
            raise DataError(f"image must be 2-D and nonempty, got shape {self.pixels.shape}")
        if not np.all(np.isfinite(self.pixels)):
            raise DataError("image contains non-finite intensities")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def as_patch(self) -> "Patch":
        """View the whole image as a single patch at origin (0, 0)."""
        return Patch(origin=(0, 0), pixels=self.pixels)


@dataclass
class Patch:
    """A rectangular region of a parent image.

    ``origin`` is (row, col) of the top-left corner in the parent.
    """

    origin: tuple[int, int]
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise DataError("patch pixels must be 2-D")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def row0(self) -> int:
        return self.origin[0]

    @property
    def col0(self) -> int:
        return self.origin[1]

    @property
    def row1(self) -> int:
        return self.origin[0] + self.height

    @property
    def col1(self) -> int:
        return self.origin[1] + self.width


@dataclass(frozen=True)
class GridSpec:
    """Square-cell grid with merge handling for ragged edges.

    A trailing sliver narrower than half a cell is merged into its
    neighbor; an image smaller than one cell becomes a single clamped
    whole-image cell.
    """

    cell_size: int = 128

    def __post_init__(self):
        if self.cell_size < MIN_CELL_SIZE:
            raise DataError(f"cell_size must be >= {MIN_CELL_SIZE}, got {self.cell_size}")


@dataclass(frozen=True)
class MomentStats:
    """Entropy plus the first four moments of a value collection.

    For constant input the degenerate convention applies: variance,
    entropy, skewness and kurtosis are all reported as 0.
    """

    entropy: float
    mean: float
    variance: float
    skewness: float
    kurtosis: float

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.entropy, self.mean, self.variance, self.skewness, self.kurtosis)


def _split_edges(length: int, cell: int) -> list[tuple[int, int]]:
    """1-D cell boundaries along one axis, applying the ragged-edge policy."""
    if length <= cell:
        return [(0, length)]
    starts = list(range(0, length, cell))
    spans = [(s, min(s + cell, length)) for s in starts]
    last = spans[-1]
    if (last[1] - last[0]) < cell / 2 and len(spans) >= 2:
        prev = spans[-2]
        spans = spans[:-2] + [(prev[0], last[1])]
    return spans


def partition(img: GrayImage, grid: GridSpec) -> list[Patch]:
    """Split an image into disjoint grid cells, row-major order.

    Cells tile the image exactly once; trailing slivers are merged per the
    grid policy. Raises ``DataError`` for images below the minimum
    analyzable size.
    """
    if img.height < MIN_PATCH_SIDE or img.width < MIN_PATCH_SIDE:
        raise DataError(
            f"image {img.height}x{img.width} below minimum cell size {MIN_PATCH_SIDE}"
        )
    rows = _split_edges(img.height, grid.cell_size)
    cols = _split_edges(img.width, grid.cell_size)
    cells = []
    for r0, r1 in rows:
        for c0, c1 in cols:
            cells.append(Patch(origin=(r0, c0), pixels=img.pixels[r0:r1, c0:c1]))
    return cells


def sample_cells(img: GrayImage, cell_size: int, stride: int) -> list[Patch]:
    """Dense fixed-size cell sampling at the given stride (training path).

    Only fully-inside cells are returned; an image smaller than one cell
    yields the single clamped whole-image patch.
    """
    if stride < 1:
        raise DataError(f"stride must be positive, got {stride}")
    if img.height < cell_size or img.width < cell_size:
        return [img.as_patch()]
    out = []
    row_starts = list(range(0, img.height - cell_size + 1, stride))
    col_starts = list(range(0, img.width - cell_size + 1, stride))
    for r0 in row_starts:
        for c0 in col_starts:
            out.append(
                Patch(origin=(r0, c0), pixels=img.pixels[r0 : r0 + cell_size, c0 : c0 + cell_size])
            )
    return out


def gradient_magnitude(p: Patch) -> Patch:
    """Gradient magnitude sqrt(gx^2 + gy^2) of a patch.

    Central differences in the interior, one-sided at the borders; output
    has the same shape and origin as the input.
    """
    if p.height < 2 or p.width < 2:
        raise DataError("gradient needs a patch of at least 2x2")
    gy, gx = np.gradient(p.pixels)
    return Patch(origin=p.origin, pixels=np.hypot(gx, gy))


ENTROPY_BINS = 256


def moment_stats(values) -> MomentStats:
    """Entropy, mean, variance, skewness, excess kurtosis of a collection.

    Variance and higher moments are population-style. Entropy is computed
    over a 256-bin histogram of the min-max-normalized values using the
    natural log (empty bins skipped). Constant input reports zeros for
    everything but the mean.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise DataError("moment_stats requires at least one value")
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        # the range test, not the variance, decides degeneracy: averaging
        # equal values can leave rounding dust in the central moments
        return MomentStats(entropy=0.0, mean=lo, variance=0.0, skewness=0.0, kurtosis=0.0)
    mean = float(v.mean())
    centered = v - mean
    m2 = float(np.mean(centered**2))
    if m2 == 0.0:
        return MomentStats(entropy=0.0, mean=mean, variance=0.0, skewness=0.0, kurtosis=0.0)
    m3 = float(np.mean(centered**3))
    m4 = float(np.mean(centered**4))
    skew = m3 / m2**1.5
    kurt = m4 / (m2 * m2) - 3.0
    norm = (v - lo) / (hi - lo)
    counts, _ = np.histogram(norm, bins=ENTROPY_BINS, range=(0.0, 1.0))
    p = counts[counts > 0] / v.size
    entropy = float(-np.sum(p * np.log(p)))
    return MomentStats(entropy=entropy, mean=mean, variance=m2, skewness=skew, kurtosis=kurt)


def _read_pnm_tokens(data: bytes, count: int, pos: int) -> tuple[list[int], int]:
    """Read whitespace/comment-separated ASCII integer tokens from a header."""
    tokens: list[int] = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos] not in (0x0A, 0x0D):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace():
            pos += 1
        tok = data[start:pos]
        if not tok:
            raise PnmHeaderError("unexpected end of header")
        try:
            tokens.append(int(tok))
        except ValueError:
            raise PnmHeaderError(f"non-numeric header token {tok!r}") from None
    return tokens, pos


def decode_image(data: bytes) -> GrayImage:
    """Decode PNM (P5/P6, maxval 255) bytes into a GrayImage.

    PNG is decoded through Pillow when it is installed; otherwise only PNM
    is accepted. RGB input is converted with luma weights 0.299/0.587/0.114
    and intensities are scaled to [0, 1].
    """
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return _decode_png(data)
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise PnmHeaderError(f"unsupported image magic {magic!r}")
    channels = 1 if magic == b"P5" else 3
    (width, height, maxval), pos = _read_pnm_tokens(data, 3, 2)
    if width < 1 or height < 1:
        raise PnmHeaderError(f"invalid dimensions {width}x{height}")
    if maxval != 255:
        raise PnmMaxvalError(f"unsupported maxval {maxval}, only 255 is handled")
    # exactly one whitespace byte separates the header from the payload
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise PnmHeaderError("missing whitespace after maxval")
    pos += 1
    need = width * height * channels
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise PnmTruncatedError(f"payload has {len(payload)} bytes, header promises {need}")
    raw = np.frombuffer(payload, dtype=np.uint8)
    if channels == 1:
        return GrayImage(pixels=raw.reshape(height, width) / 255.0)
    # integer weighting keeps equal-channel grays exact: the float weights
    # sum to just under 1.0, which would put white at 0.999...9 instead of 1
    rgb = raw.reshape(height, width, 3).astype(np.int64)
    w = [round(1000 * x) for x in LUMA_WEIGHTS]
    gray = w[0] * rgb[..., 0] + w[1] * rgb[..., 1] + w[2] * rgb[..., 2]
    return GrayImage(pixels=gray / 255000.0)


def _decode_png(data: bytes) -> GrayImage:
    try:
        from PIL import Image
    except ImportError:
        raise DecodeError("PNG input requires the optional Pillow dependency") from None
    with Image.open(io.BytesIO(data)) as im:
        gray = im.convert("L")
        arr = np.asarray(gray, dtype=np.float64)
    return GrayImage(pixels=arr / 255.0)


def encode_pgm(img: GrayImage) -> bytes:
    """Encode a GrayImage as binary P5, rounding intensities to 8 bits."""
    q = np.clip(np.rint(img.pixels * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + q.tobytes()


def load_image(path) -> GrayImage:
    """Read and decode an image file."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return decode_image(data)
