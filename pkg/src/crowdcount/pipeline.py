"""Orchestration: feature assembly, training, counting, metrics, cross-validation.

A cell's feature row concatenates everything the five sources produce, in a
fixed versioned order; the fusion regressor maps that row to a cell count
and an image's estimate is the exact sum over its disjoint grid cells.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config, config_from_dict
from .dataset import Annotation, FoldSplit, Sample, count_in_patch, make_folds
from .errors import DataError, ModelCompatError
from .imaging import GrayImage, GridSpec, Patch, partition, sample_cells
from .learn import Codebook, SourceRegressor, Standardizer, SvrModel, kmeans_fit
from .sources.fourier import FourierOutput, fourier_analyze
from .sources.glcm import GlcmFeatures, glcm_features, quantize
from .sources.head import (
    HeadFilter,
    detections_from_windows,
    head_stats,
    multi_scale_windows,
    train_head_filter,
)
from .sources.interest import (
    Descriptor,
    PoissonRates,
    crowd_confidence,
    estimate_rates,
    extract_descriptors,
    word_histogram,
)
from .sources.wavelet import SUBBAND_ORDER, WaveletFeatures, wavelet_features

FORMAT_VERSION = 1
FEATURE_LAYOUT_VERSION = 1

MAX_HEAD_EXAMPLES = 400

_STAT_NAMES = ("entropy", "mean", "variance", "skewness", "kurtosis")
_GLCM_FEATURE_NAMES = ("dissimilarity", "homogeneity", "energy", "entropy")


def feature_names() -> list[str]:
    """Column names of a cell feature row, in layout order."""
    names = ["interest_count", "crowd_confidence", "fourier_maxima"]
    names += [f"recon_{s}" for s in _STAT_NAMES]
    names += [f"residual_{s}" for s in _STAT_NAMES]
    names += ["glcm_count"]
    names += [f"glcm{a}_{f}" for a in (0, 45, 90, 135) for f in _GLCM_FEATURE_NAMES]
    names += [f"glcm{a}_{s}" for a in (0, 45, 90, 135) for s in _STAT_NAMES[2:]]
    names += ["wavelet_count"]
    names += [f"energy_{b.lower()}" for b in SUBBAND_ORDER]
    names += [f"{b.lower()}_{s}" for b in SUBBAND_ORDER for s in _STAT_NAMES[2:]]
    names += ["eta_head", "scale_mean", "scale_var", "conf_mean", "conf_var"]
    return names


FEATURE_ROW_LENGTH = len(feature_names())  # 88


@dataclass
class CellAnalysis:
    """Model-independent per-cell computations, cacheable across folds."""

    patch: Patch
    descriptors: list[Descriptor]
    fourier: FourierOutput
    glcm: GlcmFeatures
    wavelet: WaveletFeatures
    gt: int = 0


def analyze_cell(patch: Patch, cfg: Config, ann: Annotation | None = None) -> CellAnalysis:
    """Run every source computation that does not need a trained model."""
    q = quantize(patch, cfg.glcm.levels)
    return CellAnalysis(
        patch=patch,
        descriptors=extract_descriptors(patch),
        fourier=fourier_analyze(patch, cfg.fourier.cutoff, cfg.fourier.peak_sigma),
        glcm=glcm_features(q, cfg.glcm.levels),
        wavelet=wavelet_features(patch),
        gt=count_in_patch(ann, patch) if ann is not None else 0,
    )


@dataclass
class TrainedModel:
    """Everything inference needs, plus the config that shaped it."""

    config: Config
    codebook: Codebook
    rates: PoissonRates
    interest_reg: SourceRegressor
    glcm_reg: SourceRegressor
    wavelet_reg: SourceRegressor
    head_filter: HeadFilter
    fusion_reg: SourceRegressor
    seed: int
    converged: dict[str, bool] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION
    feature_layout_version: int = FEATURE_LAYOUT_VERSION

    @property
    def all_converged(self) -> bool:
        return all(self.converged.values())


def feature_rows(analyses: list[CellAnalysis], model: TrainedModel) -> np.ndarray:
    """Feature matrix (n_cells, 88) with batched per-source predictions."""
    n = len(analyses)
    if n == 0:
        return np.zeros((0, FEATURE_ROW_LENGTH))
    cfg = model.config
    hists = np.stack([word_histogram(a.descriptors, model.codebook) for a in analyses])
    interest_counts = model.interest_reg.predict(hists)
    mus = np.array([crowd_confidence(h, model.rates) for h in hists])
    glcm16 = np.stack([a.glcm.feature_vector() for a in analyses])
    glcm_counts = model.glcm_reg.predict(glcm16)
    energies = np.stack([a.wavelet.energies for a in analyses])
    wavelet_counts = model.wavelet_reg.predict(energies)
    rows = np.zeros((n, FEATURE_ROW_LENGTH))
    for i, a in enumerate(analyses):
        windows = multi_scale_windows(a.patch.pixels, cfg.head.window, cfg.head.scales)
        dets = detections_from_windows(windows, model.head_filter, cfg.head.threshold)
        head = head_stats(dets)
        rows[i] = np.concatenate(
            [
                [interest_counts[i], mus[i]],
                a.fourier.as_vector(),
                [glcm_counts[i]],
                a.glcm.feature_vector(),
                a.glcm.stats_vector(),
                [wavelet_counts[i]],
                a.wavelet.as_vector(),
                head.as_vector(),
            ]
        )
    if not np.all(np.isfinite(rows)):
        raise DataError("non-finite value in assembled feature rows")
    return rows


def extract_cell_row(patch: Patch, model: TrainedModel) -> np.ndarray:
    """Single-cell feature row (88 values)."""
    analysis = analyze_cell(patch, model.config)
    return feature_rows([analysis], model)[0]


def analyze_image_sampled(sample: Sample, cfg: Config) -> list[CellAnalysis]:
    cells = sample_cells(sample.image, cfg.cell_size, cfg.stride)
    return [analyze_cell(p, cfg, sample.annotation) for p in cells]


def analyze_image_grid(sample: Sample, cfg: Config) -> list[CellAnalysis]:
    cells = partition(sample.image, GridSpec(cell_size=cfg.cell_size))
    return [analyze_cell(p, cfg, sample.annotation) for p in cells]


def _harvest_head_examples(
    samples: list[Sample], window: int, rng: np.random.Generator
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Window crops centered on annotation dots, plus dot-free negatives."""
    positives: list[np.ndarray] = []
    negatives: list[np.ndarray] = []
    half = window // 2
    for s in samples:
        img = s.image
        if img.height < window or img.width < window:
            continue
        for x, y in s.annotation.points:
            if len(positives) >= MAX_HEAD_EXAMPLES:
                break
            r0 = int(np.clip(round(y) - half, 0, img.height - window))
            c0 = int(np.clip(round(x) - half, 0, img.width - window))
            positives.append(img.pixels[r0 : r0 + window, c0 : c0 + window])
        pts = s.annotation.points
        need = min(
            MAX_HEAD_EXAMPLES // max(len(samples), 1) + 1,
            MAX_HEAD_EXAMPLES - len(negatives),
        )
        attempts = 0
        found = 0
        while found < need and attempts < 50 * need:
            attempts += 1
            r0 = int(rng.integers(0, img.height - window + 1))
            c0 = int(rng.integers(0, img.width - window + 1))
            if pts.shape[0]:
                inside = (
                    (pts[:, 0] >= c0)
                    & (pts[:, 0] < c0 + window)
                    & (pts[:, 1] >= r0)
                    & (pts[:, 1] < r0 + window)
                )
                if inside.any():
                    continue
            negatives.append(img.pixels[r0 : r0 + window, c0 : c0 + window])
            found += 1
    return positives, negatives


def train_from_analyses(
    per_image: dict[str, list[CellAnalysis]],
    samples: list[Sample],
    cfg: Config,
    seed: int,
) -> TrainedModel:
    """Training stages over precomputed per-cell analyses.

    Stage order: descriptors -> codebook -> word rates -> per-source
    regressors -> head filter -> fusion regressor. Images are consumed in
    sorted id order, so the result does not depend on manifest order.
    """
    ids = sorted(per_image)
    analyses = [a for i in ids for a in per_image[i]]
    if len(samples) < 2:
        raise DataError("training needs at least 2 annotated images")
    ss = np.random.SeedSequence(seed)
    codebook_seed, head_seed = ss.spawn(2)

    all_desc = [d.vector for a in analyses for d in a.descriptors]
    if len(all_desc) < cfg.codebook.size:
        raise DataError(
            f"codebook stage: {len(all_desc)} descriptors for {cfg.codebook.size} words; "
            "need more or larger training images, or a smaller codebook"
        )
    codebook = kmeans_fit(np.stack(all_desc), cfg.codebook.size, codebook_seed)

    hists = np.stack([word_histogram(a.descriptors, codebook) for a in analyses])
    gt = np.array([a.gt for a in analyses], dtype=np.float64)
    crowd = gt > 0
    if not crowd.any() or crowd.all():
        raise DataError(
            "rate stage: training cells must include both occupied and empty cells"
        )
    rates = estimate_rates(hists, crowd, cfg.codebook.rate_floor)

    svr_kw = dict(
        kernel=cfg.svr.kernel, c=cfg.svr.c, epsilon=cfg.svr.epsilon, tol=cfg.svr.tol
    )
    interest_reg = SourceRegressor.fit(hists, gt, **svr_kw)
    glcm_reg = SourceRegressor.fit(
        np.stack([a.glcm.feature_vector() for a in analyses]), gt, **svr_kw
    )
    wavelet_reg = SourceRegressor.fit(np.stack([a.wavelet.energies for a in analyses]), gt, **svr_kw)

    samples_sorted = sorted(samples, key=lambda s: s.annotation.image_id)
    pos, neg = _harvest_head_examples(
        samples_sorted, cfg.head.window, np.random.default_rng(head_seed)
    )
    head_filter = train_head_filter(pos, neg, cfg.head.window)

    partial = TrainedModel(
        config=cfg,
        codebook=codebook,
        rates=rates,
        interest_reg=interest_reg,
        glcm_reg=glcm_reg,
        wavelet_reg=wavelet_reg,
        head_filter=head_filter,
        fusion_reg=interest_reg,  # placeholder until the fusion stage below
        seed=seed,
    )
    rows = feature_rows(analyses, partial)
    fusion_reg = SourceRegressor.fit(rows, gt, **svr_kw)
    converged = {
        "interest": interest_reg.svr.converged,
        "glcm": glcm_reg.svr.converged,
        "wavelet": wavelet_reg.svr.converged,
        "fusion": fusion_reg.svr.converged,
    }
    return TrainedModel(
        config=cfg,
        codebook=codebook,
        rates=rates,
        interest_reg=interest_reg,
        glcm_reg=glcm_reg,
        wavelet_reg=wavelet_reg,
        head_filter=head_filter,
        fusion_reg=fusion_reg,
        seed=seed,
        converged=converged,
    )


def train(samples: list[Sample], cfg: Config, seed: int) -> TrainedModel:
    """Train the full model from annotated samples."""
    samples = sorted(samples, key=lambda s: s.annotation.image_id)
    per_image = {
        s.annotation.image_id: analyze_image_sampled(s, cfg) for s in samples
    }
    return train_from_analyses(per_image, samples, cfg, seed)


@dataclass
class CountResult:
    total: float
    cells: list[Patch]
    estimates: np.ndarray


def count_image(img: GrayImage, model: TrainedModel) -> CountResult:
    """Disjoint-grid estimate: per-cell fusion predictions and their sum."""
    cells = partition(img, GridSpec(cell_size=model.config.cell_size))
    analyses = [analyze_cell(p, model.config) for p in cells]
    rows = feature_rows(analyses, model)
    estimates = model.fusion_reg.predict(rows)
    return CountResult(total=float(estimates.sum()), cells=cells, estimates=estimates)


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class ImageResult:
    image_id: str
    gt: float
    est: float

    @property
    def ae(self) -> float:
        return abs(self.gt - self.est)

    @property
    def nae(self) -> float | None:
        return self.ae / self.gt if self.gt > 0 else None


@dataclass(frozen=True)
class PatchResult:
    image_id: str
    index: int
    row0: int
    col0: int
    gt: float
    est: float

    @property
    def ae(self) -> float:
        return abs(self.gt - self.est)

    @property
    def nae(self) -> float | None:
        return self.ae / self.gt if self.gt > 0 else None


@dataclass
class EvalReport:
    images: list[ImageResult]
    patches: list[PatchResult]
    mae: float
    mae_std: float
    mnae: float
    mnae_std: float
    nae_excluded: int
    patch_mae: float | None = None
    patch_mae_std: float | None = None
    patch_mnae: float | None = None
    patch_mnae_std: float | None = None
    patch_nae_excluded: int = 0

    @property
    def n_images(self) -> int:
        return len(self.images)

    @property
    def n_patches(self) -> int:
        return len(self.patches)


def _mean_std(values: np.ndarray) -> tuple[float, float]:
    return float(values.mean()), float(values.std())


def evaluate(images: list[ImageResult], patches: list[PatchResult] = ()) -> EvalReport:
    """Mean absolute error and normalized absolute error, with spreads.

    Image rows with zero ground truth are excluded from the normalized
    metric (division is undefined there) and counted; patch-level AE keeps
    zero-truth patches, patch-level NAE excludes them the same way.
    """
    if not images:
        raise DataError("evaluation needs at least one image result")
    ae = np.array([r.ae for r in images])
    mae, mae_std = _mean_std(ae)
    nae = np.array([r.nae for r in images if r.nae is not None])
    excluded = len(images) - nae.size
    mnae, mnae_std = _mean_std(nae) if nae.size else (0.0, 0.0)
    report = EvalReport(
        images=list(images),
        patches=list(patches),
        mae=mae,
        mae_std=mae_std,
        mnae=mnae,
        mnae_std=mnae_std,
        nae_excluded=excluded,
    )
    if patches:
        pae = np.array([p.ae for p in patches])
        report.patch_mae, report.patch_mae_std = _mean_std(pae)
        pnae = np.array([p.nae for p in patches if p.nae is not None])
        report.patch_nae_excluded = len(patches) - pnae.size
        if pnae.size:
            report.patch_mnae, report.patch_mnae_std = _mean_std(pnae)
        else:
            report.patch_mnae, report.patch_mnae_std = 0.0, 0.0
    return report


def evaluate_model(samples: list[Sample], model: TrainedModel) -> EvalReport:
    """Count every sample with the model and score against annotations."""
    samples = sorted(samples, key=lambda s: s.annotation.image_id)
    image_rows: list[ImageResult] = []
    patch_rows: list[PatchResult] = []
    for s in samples:
        result = count_image(s.image, model)
        image_rows.append(
            ImageResult(
                image_id=s.annotation.image_id,
                gt=float(s.annotation.count),
                est=result.total,
            )
        )
        for idx, (cell, est) in enumerate(zip(result.cells, result.estimates)):
            patch_rows.append(
                PatchResult(
                    image_id=s.annotation.image_id,
                    index=idx,
                    row0=cell.row0,
                    col0=cell.col0,
                    gt=float(count_in_patch(s.annotation, cell)),
                    est=float(est),
                )
            )
    return evaluate(image_rows, patch_rows)


def cross_validate(
    samples: list[Sample], k: int, seed: int, cfg: Config
) -> tuple[list[EvalReport], EvalReport, FoldSplit]:
    """k-fold protocol: train on the rest, test on the fold, pool everything.

    Per-cell source analyses are computed once per image and shared across
    folds; they are pure functions of the image and config, so the result
    is identical to training each fold from scratch.
    """
    samples = sorted(samples, key=lambda s: s.annotation.image_id)
    by_id = {s.annotation.image_id: s for s in samples}
    folds = make_folds(list(by_id), k, seed)
    train_cache = {i: analyze_image_sampled(by_id[i], cfg) for i in by_id}
    test_cache = {i: analyze_image_grid(by_id[i], cfg) for i in by_id}
    fold_seeds = np.random.SeedSequence(seed).spawn(k)

    fold_reports: list[EvalReport] = []
    pooled_images: list[ImageResult] = []
    pooled_patches: list[PatchResult] = []
    for fold in range(k):
        rest = folds.rest_ids(fold)
        held = folds.fold_ids(fold)
        model = train_from_analyses(
            {i: train_cache[i] for i in rest},
            [by_id[i] for i in rest],
            cfg,
            _seed_int(fold_seeds[fold]),
        )
        image_rows = []
        patch_rows = []
        for i in held:
            analyses = test_cache[i]
            rows = feature_rows(analyses, model)
            ests = model.fusion_reg.predict(rows)
            image_rows.append(
                ImageResult(image_id=i, gt=float(by_id[i].annotation.count), est=float(ests.sum()))
            )
            for idx, (a, est) in enumerate(zip(analyses, ests)):
                patch_rows.append(
                    PatchResult(
                        image_id=i,
                        index=idx,
                        row0=a.patch.row0,
                        col0=a.patch.col0,
                        gt=float(a.gt),
                        est=float(est),
                    )
                )
        fold_reports.append(evaluate(image_rows, patch_rows))
        pooled_images.extend(image_rows)
        pooled_patches.extend(patch_rows)
    pooled_images.sort(key=lambda r: r.image_id)
    pooled_patches.sort(key=lambda r: (r.image_id, r.index))
    pooled = evaluate(pooled_images, pooled_patches)
    return fold_reports, pooled, folds


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# model serialization


def _regressor_doc(r: SourceRegressor) -> dict:
    return {
        "x_mean": r.x_std.mean.tolist(),
        "x_scale": r.x_std.scale.tolist(),
        "y_mean": r.y_mean,
        "y_scale": r.y_scale,
        "svr": {
            "kernel": r.svr.kernel,
            "gamma": r.svr.gamma,
            "c": r.svr.c,
            "epsilon": r.svr.epsilon,
            "support_vectors": r.svr.support_vectors.tolist(),
            "coef": r.svr.coef.tolist(),
            "bias": r.svr.bias,
            "iterations": r.svr.iterations,
            "converged": r.svr.converged,
            "dual_objective": r.svr.dual_objective,
        },
    }


def _regressor_from_doc(doc: dict, dim: int, name: str) -> SourceRegressor:
    svr = doc["svr"]
    sv = np.asarray(svr["support_vectors"], dtype=np.float64).reshape(-1, dim)
    model = SvrModel(
        kernel=svr["kernel"],
        gamma=float(svr["gamma"]),
        c=float(svr["c"]),
        epsilon=float(svr["epsilon"]),
        support_vectors=sv,
        coef=np.asarray(svr["coef"], dtype=np.float64),
        bias=float(svr["bias"]),
        iterations=int(svr["iterations"]),
        converged=bool(svr["converged"]),
        dual_objective=float(svr["dual_objective"]),
    )
    x_mean = np.asarray(doc["x_mean"], dtype=np.float64)
    x_scale = np.asarray(doc["x_scale"], dtype=np.float64)
    if x_mean.shape[0] != dim or model.coef.shape[0] != model.n_support:
        raise ModelCompatError(f"{name} regressor dimensions are inconsistent")
    return SourceRegressor(
        x_std=Standardizer(mean=x_mean, scale=x_scale),
        y_mean=float(doc["y_mean"]),
        y_scale=float(doc["y_scale"]),
        svr=model,
    )


def model_to_doc(model: TrainedModel) -> dict:
    return {
        "format_version": model.format_version,
        "feature_layout_version": model.feature_layout_version,
        "analysis_hash": model.config.analysis_hash(),
        "config": model.config.to_dict(),
        "seed": model.seed,
        "converged": model.converged,
        "codebook": {
            "centroids": model.codebook.centroids.tolist(),
            "inertia": model.codebook.inertia,
        },
        "rates": {
            "lambda_plus": model.rates.lambda_plus.tolist(),
            "lambda_minus": model.rates.lambda_minus.tolist(),
        },
        "head_filter": {
            "window": model.head_filter.window,
            "weights": model.head_filter.weights.tolist(),
            "bias": model.head_filter.bias,
        },
        "interest": _regressor_doc(model.interest_reg),
        "glcm": _regressor_doc(model.glcm_reg),
        "wavelet": _regressor_doc(model.wavelet_reg),
        "fusion": _regressor_doc(model.fusion_reg),
    }


def model_from_doc(doc: dict) -> TrainedModel:
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise ModelCompatError("model file is missing its format version")
    if doc["format_version"] != FORMAT_VERSION:
        raise ModelCompatError(
            f"model format version {doc['format_version']} unsupported "
            f"(this build reads {FORMAT_VERSION})"
        )
    if doc.get("feature_layout_version") != FEATURE_LAYOUT_VERSION:
        raise ModelCompatError("model feature layout does not match this build")
    cfg = config_from_dict(doc["config"])
    if doc.get("analysis_hash") != cfg.analysis_hash():
        raise ModelCompatError("model analysis hash does not match its stored config")
    codebook = Codebook(
        centroids=np.asarray(doc["codebook"]["centroids"], dtype=np.float64),
        inertia=float(doc["codebook"]["inertia"]),
    )
    if codebook.centroids.ndim != 2 or codebook.size != cfg.codebook.size:
        raise ModelCompatError("codebook shape does not match the stored config")
    rates = PoissonRates(
        lambda_plus=np.asarray(doc["rates"]["lambda_plus"], dtype=np.float64),
        lambda_minus=np.asarray(doc["rates"]["lambda_minus"], dtype=np.float64),
    )
    if rates.size != codebook.size:
        raise ModelCompatError("rate vectors do not match the codebook size")
    hf = doc["head_filter"]
    head_filter = HeadFilter(
        window=int(hf["window"]),
        weights=np.asarray(hf["weights"], dtype=np.float64),
        bias=float(hf["bias"]),
    )
    return TrainedModel(
        config=cfg,
        codebook=codebook,
        rates=rates,
        interest_reg=_regressor_from_doc(doc["interest"], codebook.size, "interest"),
        glcm_reg=_regressor_from_doc(doc["glcm"], 16, "glcm"),
        wavelet_reg=_regressor_from_doc(doc["wavelet"], 10, "wavelet"),
        head_filter=head_filter,
        fusion_reg=_regressor_from_doc(doc["fusion"], FEATURE_ROW_LENGTH, "fusion"),
        seed=int(doc["seed"]),
        converged={k: bool(v) for k, v in doc.get("converged", {}).items()},
        format_version=int(doc["format_version"]),
        feature_layout_version=int(doc["feature_layout_version"]),
    )


def save_model(model: TrainedModel, path) -> None:
    text = json.dumps(model_to_doc(model), sort_keys=True)
    Path(path).write_text(text)


def load_model(path) -> TrainedModel:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelCompatError(f"model file is not valid JSON: {exc}") from exc
    return model_from_doc(doc)


def check_model_config(model: TrainedModel, cfg: Config) -> None:
    """Refuse to mix a model with differing analysis settings."""
    if model.config.analysis_hash() != cfg.analysis_hash():
        raise ModelCompatError(
            "model was trained under different analysis settings "
            f"({model.config.analysis_hash()[:12]} vs {cfg.analysis_hash()[:12]})"
        )
