"""Synthetic blob-crowd generator with exact dot annotations.

Images mimic the structure the counting pipeline assumes: a textureless sky
band above a horizon, and below it a jittered lattice of Gaussian blobs
whose spacing and size ramp with depth the way perspective spreads a crowd.
Every blob center is recorded as a dot, so ground truth is exact by
construction and every training stage sees both empty and occupied cells.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Annotation, dump_annotation
from .errors import ConfigError, DataError
from .imaging import GrayImage, encode_pgm

BACKGROUND = 0.12
NOISE_SIGMA = 0.02
AMP_RANGE = (0.35, 0.8)
HORIZON_RANGE = (0.50, 0.62)  # keeps the top half of the frame dot-free
SIGMA_RANGE = (1.0, 2.0)
BASE_SPACING = 4.0


@dataclass(frozen=True)
class SynthImage:
    image: GrayImage
    points: np.ndarray  # (n, 2) x then y


def _lattice_sites(horizon: float, size: int, spacing: float) -> np.ndarray:
    """Deterministic perspective lattice below the horizon: (n, 2) x, y."""
    sites = []
    y = horizon + 3.0
    while y < size - 2.0:
        s = spacing * (1.0 + (y - horizon) / (size - horizon))
        xs = np.arange(2.0, size - 2.0, s)
        sites.extend((x, y) for x in xs)
        y += 0.75 * s
    return np.array(sites).reshape(-1, 2)


def _splat(canvas: np.ndarray, x: float, y: float, sigma: float, amp: float) -> None:
    size = canvas.shape[0]
    reach = int(np.ceil(3 * sigma))
    r0, r1 = max(0, int(y) - reach), min(size, int(y) + reach + 1)
    c0, c1 = max(0, int(x) - reach), min(size, int(x) + reach + 1)
    rows = np.arange(r0, r1)[:, None] - y
    cols = np.arange(c0, c1)[None, :] - x
    canvas[r0:r1, c0:c1] += amp * np.exp(-(rows**2 + cols**2) / (2.0 * sigma**2))


def synth_image(rng: np.random.Generator, size: int, count_range: tuple[int, int]) -> SynthImage:
    """One blob-crowd image with its exact dot list."""
    lo, hi = count_range
    if lo < 1 or hi < lo:
        raise ConfigError(f"bad count range [{lo}, {hi}]")
    n_dots = int(rng.integers(lo, hi, endpoint=True))
    horizon = float(rng.uniform(*HORIZON_RANGE)) * size

    spacing = BASE_SPACING
    sites = _lattice_sites(horizon, size, spacing)
    while sites.shape[0] < n_dots and spacing > 0.5:
        spacing *= 0.8
        sites = _lattice_sites(horizon, size, spacing)
    if sites.shape[0] < n_dots:
        raise DataError(f"cannot place {n_dots} dots below a horizon at {horizon:.0f}px")

    chosen = sites[rng.choice(sites.shape[0], n_dots, replace=False)]
    jitter_scale = 0.35 * spacing
    jitter = rng.uniform(-jitter_scale, jitter_scale, size=(n_dots, 2))
    pts = chosen + jitter
    pts[:, 0] = np.clip(pts[:, 0], 1.0, size - 2.0)
    pts[:, 1] = np.clip(pts[:, 1], horizon + 1.0, size - 2.0)
    amps = rng.uniform(*AMP_RANGE, size=n_dots)

    canvas = np.full((size, size), BACKGROUND)
    depth = (pts[:, 1] - horizon) / (size - horizon)
    sigmas = SIGMA_RANGE[0] + depth * (SIGMA_RANGE[1] - SIGMA_RANGE[0])
    for (x, y), sigma, amp in zip(pts, sigmas, amps):
        _splat(canvas, x, y, sigma, amp)
    canvas += rng.normal(0.0, NOISE_SIGMA, size=canvas.shape)
    np.clip(canvas, 0.0, 1.0, out=canvas)
    return SynthImage(image=GrayImage(pixels=canvas), points=pts)


def generate_dataset(
    out_dir, n_images: int, count_range: tuple[int, int], seed: int, size: int = 256
) -> Path:
    """Write images, annotations, and a manifest; returns the manifest path.

    Output bytes are a pure function of (n_images, count_range, seed, size).
    """
    if n_images < 1:
        raise ConfigError(f"n_images must be positive, got {n_images}")
    if size < 64:
        raise ConfigError(f"synthetic image size must be >= 64, got {size}")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "annotations").mkdir(parents=True, exist_ok=True)
    streams = np.random.SeedSequence(seed).spawn(n_images)
    width = max(3, len(str(n_images - 1)))
    entries = []
    for i in range(n_images):
        rng = np.random.default_rng(streams[i])
        sample = synth_image(rng, size, count_range)
        image_id = f"img_{i:0{width}d}"
        img_rel = f"images/{image_id}.pgm"
        ann_rel = f"annotations/{image_id}.json"
        (out / img_rel).write_bytes(encode_pgm(sample.image))
        ann = Annotation(
            image_id=image_id,
            width=size,
            height=size,
            points=sample.points,
        )
        (out / ann_rel).write_text(dump_annotation(ann))
        entries.append({"image": img_rel, "annotation": ann_rel})
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps({"root": ".", "entries": entries}, sort_keys=True))
    return manifest_path
