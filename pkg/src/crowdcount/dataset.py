"""Annotated datasets: point annotations, manifests, and per-cell counts.

An annotation records one dot per person at (x, y) pixel coordinates.
A manifest lists image/annotation path pairs relative to a root directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .imaging import GrayImage, Patch, load_image


@dataclass
class Annotation:
    """One dot per person: (x, y) positions within a width x height frame."""

    image_id: str
    width: int
    height: int
    points: np.ndarray  # shape (n, 2), columns x then y

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 2)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise DataError(f"points must be (n, 2), got shape {pts.shape}")
        if self.width < 1 or self.height < 1:
            raise DataError(f"bad annotation frame {self.width}x{self.height}")
        if pts.shape[0]:
            x, y = pts[:, 0], pts[:, 1]
            bad = (x < 0) | (x >= self.width) | (y < 0) | (y >= self.height)
            if bad.any():
                i = int(np.argmax(bad))
                raise DataError(
                    f"annotation {self.image_id!r} point {i} at "
                    f"({pts[i, 0]}, {pts[i, 1]}) lies outside the {self.width}x{self.height} frame"
                )
        self.points = pts

    @property
    def count(self) -> int:
        return int(self.points.shape[0])


def parse_annotation(text: str) -> Annotation:
    """Parse a JSON annotation document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"annotation is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise DataError("annotation root must be an object")
    missing = {"image_id", "width", "height", "points"} - doc.keys()
    if missing:
        raise DataError(f"annotation missing keys: {sorted(missing)}")
    pts = doc["points"]
    if not isinstance(pts, list) or any(not isinstance(p, list) or len(p) != 2 for p in pts):
        raise DataError("annotation points must be a list of [x, y] pairs")
    return Annotation(
        image_id=str(doc["image_id"]),
        width=int(doc["width"]),
        height=int(doc["height"]),
        points=np.asarray(pts, dtype=np.float64).reshape(-1, 2),
    )


def dump_annotation(ann: Annotation) -> str:
    """Serialize an annotation back to its JSON document form."""
    doc = {
        "image_id": ann.image_id,
        "width": ann.width,
        "height": ann.height,
        "points": [[float(x), float(y)] for x, y in ann.points],
    }
    return json.dumps(doc, sort_keys=True)


def count_in_patch(ann: Annotation, patch: Patch) -> int:
    """Dots inside a patch, using half-open pixel intervals.

    A dot at (x, y) belongs to the patch when col0 <= x < col1 and
    row0 <= y < row1, so disjoint cells partition the dots exactly.
    """
    if ann.count == 0:
        return 0
    x, y = ann.points[:, 0], ann.points[:, 1]
    inside = (x >= patch.col0) & (x < patch.col1) & (y >= patch.row0) & (y < patch.row1)
    return int(np.count_nonzero(inside))


@dataclass(frozen=True)
class ManifestEntry:
    image: str
    annotation: str


@dataclass
class Manifest:
    """Paths of image/annotation pairs, relative to a root directory."""

    root: Path
    entries: list[ManifestEntry]

    def image_path(self, e: ManifestEntry) -> Path:
        return self.root / e.image

    def annotation_path(self, e: ManifestEntry) -> Path:
        return self.root / e.annotation


def parse_manifest(text: str, manifest_dir: Path) -> Manifest:
    """Parse a manifest document; ``root`` is resolved against ``manifest_dir``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "entries" not in doc:
        raise DataError("manifest must be an object with an 'entries' list")
    root = Path(doc.get("root", "."))
    if not root.is_absolute():
        root = manifest_dir / root
    raw = doc["entries"]
    if not isinstance(raw, list):
        raise DataError("manifest entries must be a list")
    entries = []
    for i, e in enumerate(raw):
        if not isinstance(e, dict) or "image" not in e or "annotation" not in e:
            raise DataError(f"manifest entry {i} needs 'image' and 'annotation' keys")
        entries.append(ManifestEntry(image=str(e["image"]), annotation=str(e["annotation"])))
    return Manifest(root=root, entries=entries)


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    return parse_manifest(text, path.parent)


@dataclass
class Sample:
    """A decoded image with its annotation."""

    image: GrayImage
    annotation: Annotation


def load_sample(manifest: Manifest, entry: ManifestEntry) -> Sample:
    """Load one manifest entry, checking the annotation frame matches."""
    img = load_image(manifest.image_path(entry))
    ann_path = manifest.annotation_path(entry)
    try:
        text = ann_path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read annotation {ann_path}: {exc}") from exc
    ann = parse_annotation(text)
    if ann.width != img.width or ann.height != img.height:
        raise DataError(
            f"annotation {ann.image_id!r} frame {ann.width}x{ann.height} does not match "
            f"image {img.width}x{img.height}"
        )
    return Sample(image=img, annotation=ann)


def load_all(manifest: Manifest) -> list[Sample]:
    """Load every manifest entry, sorted by image_id for order invariance."""
    samples = [load_sample(manifest, e) for e in manifest.entries]
    ids = [s.annotation.image_id for s in samples]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate image_id values in manifest")
    samples.sort(key=lambda s: s.annotation.image_id)
    return samples


@dataclass
class FoldSplit:
    """Cross-validation fold assignment: image_id -> fold index."""

    k: int
    assignment: dict[str, int]
    seed: int

    def fold_ids(self, fold: int) -> list[str]:
        return sorted(i for i, f in self.assignment.items() if f == fold)

    def rest_ids(self, fold: int) -> list[str]:
        return sorted(i for i, f in self.assignment.items() if f != fold)


def make_folds(ids: list[str], k: int, seed: int) -> FoldSplit:
    """Seeded shuffle then round-robin assignment into k folds.

    Input order does not matter: ids are sorted before shuffling, so the
    split depends only on the id set and the seed. Fold sizes differ by
    at most one.
    """
    if k < 2:
        raise DataError(f"fold count must be at least 2, got {k}")
    unique = sorted(set(ids))
    if len(unique) != len(ids):
        raise DataError("fold construction requires unique ids")
    if k > len(unique):
        raise DataError(f"cannot make {k} folds from {len(unique)} ids")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(unique))
    assignment = {unique[int(idx)]: pos % k for pos, idx in enumerate(order)}
    return FoldSplit(k=k, assignment=assignment, seed=seed)
