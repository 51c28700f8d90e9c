"""Evaluation report rendering: delimited tables, a summary block, figures.

Everything is written atomically (temp file in the target directory, then
replace) and deterministically: identical reports produce identical bytes,
figure files included.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .pipeline import EvalReport

FIG_DPI = 100


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _fmt(v: float) -> str:
    return repr(float(v))


def images_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image_id", "gt", "est", "ae", "nae"])
    for r in report.images:
        nae = "" if r.nae is None else _fmt(r.nae)
        w.writerow([r.image_id, _fmt(r.gt), _fmt(r.est), _fmt(r.ae), nae])
    return buf.getvalue()


def patches_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image_id", "patch_index", "row0", "col0", "gt", "est", "ae", "nae"])
    for p in report.patches:
        nae = "" if p.nae is None else _fmt(p.nae)
        w.writerow([p.image_id, p.index, p.row0, p.col0, _fmt(p.gt), _fmt(p.est), _fmt(p.ae), nae])
    return buf.getvalue()


def summary_doc(report: EvalReport) -> dict:
    doc = {
        "n_images": report.n_images,
        "mae": report.mae,
        "mae_std": report.mae_std,
        "mnae": report.mnae,
        "mnae_std": report.mnae_std,
        "nae_excluded": report.nae_excluded,
        "n_patches": report.n_patches,
    }
    if report.patches:
        doc.update(
            patch_mae=report.patch_mae,
            patch_mae_std=report.patch_mae_std,
            patch_mnae=report.patch_mnae,
            patch_mnae_std=report.patch_mnae_std,
            patch_nae_excluded=report.patch_nae_excluded,
        )
    return doc


def _save_figure(fig, path) -> None:
    buf = io.BytesIO()
    # empty metadata keeps the writer from embedding a library version string,
    # so identical inputs give identical bytes
    fig.savefig(buf, format="png", dpi=FIG_DPI, metadata={"Software": None})
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def _fig_est_vs_gt(report: EvalReport):
    gt = np.array([r.gt for r in report.images])
    est = np.array([r.est for r in report.images])
    fig, ax = plt.subplots(figsize=(6, 6))
    lim = max(1.0, float(max(gt.max(), est.max())) * 1.05)
    ax.plot([0, lim], [0, lim], color="0.6", linewidth=1, label="exact")
    ax.scatter(gt, est, s=28, color="black", zorder=3)
    ax.set_xlim(0, lim)
    ax.set_ylim(0, lim)
    ax.set_xlabel("ground truth count")
    ax.set_ylabel("estimated count")
    ax.set_title("Per-image estimates")
    ax.legend(loc="upper left")
    fig.tight_layout()
    return fig


def _fig_nae_vs_count(report: EvalReport):
    rows = [(r.gt, r.nae) for r in report.images if r.nae is not None]
    fig, ax = plt.subplots(figsize=(6, 4))
    if rows:
        gt, nae = zip(*rows)
        ax.scatter(gt, nae, s=28, color="black")
    ax.set_xlabel("ground truth count")
    ax.set_ylabel("normalized absolute error")
    ax.set_title("Relative error vs. crowd size")
    ax.set_ylim(bottom=0)
    fig.tight_layout()
    return fig


def _fig_patch_errors(report: EvalReport):
    """Per-patch error grouped by true patch count, sorted by count."""
    by_count: dict[float, list[float]] = {}
    for p in report.patches:
        by_count.setdefault(p.gt, []).append(p.ae)
    counts = sorted(by_count)
    mean_ae = np.array([np.mean(by_count[c]) for c in counts])
    std_ae = np.array([np.std(by_count[c]) for c in counts])
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.errorbar(
        counts,
        mean_ae,
        yerr=std_ae,
        fmt="none",
        ecolor="red",
        elinewidth=1,
        capsize=2,
        label="AE spread",
    )
    ax.plot(counts, mean_ae, "o", color="black", markersize=4, label="mean AE")
    ax.plot(counts, counts, "D", color="blue", markersize=3, label="patch count")
    ax.set_xlabel("true patch count")
    ax.set_ylabel("absolute error")
    ax.set_title("Per-patch error analysis")
    ax.legend(loc="upper left")
    fig.tight_layout()
    return fig


def write_report(report: EvalReport, out_dir) -> list[Path]:
    """Write CSVs, the summary, and figures; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "images.csv"
    atomic_write_text(path, images_csv(report))
    written.append(path)

    if report.patches:
        path = out / "patches.csv"
        atomic_write_text(path, patches_csv(report))
        written.append(path)

    path = out / "summary.json"
    atomic_write_text(path, json.dumps(summary_doc(report), sort_keys=True, indent=2) + "\n")
    written.append(path)

    path = out / "est_vs_gt.png"
    _save_figure(_fig_est_vs_gt(report), path)
    written.append(path)

    path = out / "nae_vs_count.png"
    _save_figure(_fig_nae_vs_count(report), path)
    written.append(path)

    if report.patches:
        path = out / "patch_error_analysis.png"
        _save_figure(_fig_patch_errors(report), path)
        written.append(path)
    return written
