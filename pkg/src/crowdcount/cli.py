"""Command-line surface.

Subcommands: train, count, evaluate, crossval, synth, features. Every
command is reproducible given its inputs, config, and seed; outputs are
written atomically. Failure categories map to distinct exit codes:
1 generic, 2 config, 3 data/I-O, 4 model incompatibility; exit 5 means the
outputs were written but at least one regressor stopped on its iteration
cap rather than the optimality tolerance.
"""

from __future__ import annotations

import csv
import functools
import io
import json
import sys
from pathlib import Path

import click

from . import dataset, pipeline, report, synth
from .config import Config, apply_overrides, load_config
from .errors import EXIT_CONVERGENCE_WARNING, ConfigError, CrowdCountError
from .imaging import load_image


def _fail(exc: CrowdCountError) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(exc.exit_code)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CrowdCountError as exc:
            _fail(exc)

    return wrapper


def _parse_overrides(pairs: tuple[str, ...]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} must look like key=value")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _resolve_config(config_path, overrides: tuple[str, ...], seed: int | None = None) -> Config:
    cfg = load_config(config_path) if config_path else Config()
    flat = _parse_overrides(overrides)
    if seed is not None:
        flat["seed"] = str(seed)
    if flat:
        cfg = apply_overrides(cfg, flat)
    return cfg


def _warn_convergence(model: pipeline.TrainedModel) -> bool:
    bad = sorted(name for name, ok in model.converged.items() if not ok)
    if bad:
        click.echo(
            f"warning: regressors stopped on the iteration cap: {', '.join(bad)}", err=True
        )
        return True
    return False


@click.group()
def main() -> None:
    """Crowd count estimation from still images."""


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=False))
@click.option("--config", "config_path", default=None, type=click.Path(exists=False))
@click.option("--seed", required=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--set", "overrides", multiple=True, help="Override a config key, e.g. svr.c=5")
@handle_errors
def train(manifest_path, config_path, seed, out_path, overrides) -> None:
    """Train a model from an annotated manifest."""
    cfg = _resolve_config(config_path, overrides, seed)
    samples = dataset.load_all(dataset.load_manifest(manifest_path))
    model = pipeline.train(samples, cfg, seed)
    doc = pipeline.model_to_doc(model)
    report.atomic_write_text(out_path, json.dumps(doc, sort_keys=True))
    click.echo(f"wrote model to {out_path} ({len(samples)} training images)")
    if _warn_convergence(model):
        sys.exit(EXIT_CONVERGENCE_WARNING)


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=False))
@click.option("--config", "config_path", default=None, type=click.Path(exists=False))
@click.option("--set", "overrides", multiple=True)
@click.option("--cells", "cells_path", default=None, type=click.Path(), help="Per-cell CSV output")
@click.argument("images", nargs=-1, required=True, type=click.Path(exists=False))
@handle_errors
def count(model_path, config_path, overrides, cells_path, images) -> None:
    """Estimate the count for one or more images."""
    model = pipeline.load_model(model_path)
    if config_path or overrides:
        requested = _resolve_config(config_path, overrides)
        pipeline.check_model_config(model, requested)
    rows = []
    for path in images:
        result = pipeline.count_image(load_image(path), model)
        click.echo(f"{path}\t{result.total:.1f}")
        for idx, (cell, est) in enumerate(zip(result.cells, result.estimates)):
            rows.append([path, idx, cell.row0, cell.col0, repr(float(est))])
    if cells_path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["image", "patch_index", "row0", "col0", "est"])
        w.writerows(rows)
        report.atomic_write_text(cells_path, buf.getvalue())


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=False))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=False))
@click.option("--out-dir", "out_dir", required=True, type=click.Path())
@handle_errors
def evaluate(model_path, manifest_path, out_dir) -> None:
    """Count every manifest image and report errors against ground truth."""
    model = pipeline.load_model(model_path)
    samples = dataset.load_all(dataset.load_manifest(manifest_path))
    rep = pipeline.evaluate_model(samples, model)
    report.write_report(rep, out_dir)
    click.echo(
        f"evaluated {rep.n_images} images: "
        f"mae {rep.mae:.1f} +/- {rep.mae_std:.1f}, mnae {rep.mnae:.3f} +/- {rep.mnae_std:.3f}"
    )


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=False))
@click.option("-k", "--folds", "k", default=5, show_default=True, type=int)
@click.option("--seed", required=True, type=int)
@click.option("--config", "config_path", default=None, type=click.Path(exists=False))
@click.option("--set", "overrides", multiple=True)
@click.option("--out-dir", "out_dir", required=True, type=click.Path())
@handle_errors
def crossval(manifest_path, k, seed, config_path, overrides, out_dir) -> None:
    """k-fold cross-validation over an annotated manifest."""
    cfg = _resolve_config(config_path, overrides, seed)
    samples = dataset.load_all(dataset.load_manifest(manifest_path))
    fold_reports, pooled, folds = pipeline.cross_validate(samples, k, seed, cfg)
    out = Path(out_dir)
    for i, rep in enumerate(fold_reports):
        report.write_report(rep, out / f"fold_{i}")
    report.write_report(pooled, out / "pooled")
    assignment = {i: int(f) for i, f in sorted(folds.assignment.items())}
    report.atomic_write_text(
        out / "folds.json", json.dumps({"k": k, "seed": seed, "assignment": assignment}, sort_keys=True)
    )
    click.echo(
        f"crossval k={k} on {pooled.n_images} images: "
        f"mae {pooled.mae:.1f} +/- {pooled.mae_std:.1f}, "
        f"mnae {pooled.mnae:.3f} +/- {pooled.mnae_std:.3f}"
    )


@main.command("synth")
@click.option("--n", "n_images", required=True, type=int)
@click.option("--min-count", default=50, show_default=True, type=int)
@click.option("--max-count", default=500, show_default=True, type=int)
@click.option("--seed", required=True, type=int)
@click.option("--size", default=256, show_default=True, type=int)
@click.option("--out-dir", "out_dir", required=True, type=click.Path())
@handle_errors
def synth_cmd(n_images, min_count, max_count, seed, size, out_dir) -> None:
    """Generate a synthetic blob-crowd dataset with exact annotations."""
    manifest = synth.generate_dataset(out_dir, n_images, (min_count, max_count), seed, size)
    click.echo(f"wrote {n_images} images under {out_dir} (manifest {manifest})")


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=False))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=False))
@click.option("--out", "out_path", required=True, type=click.Path())
@handle_errors
def features(model_path, manifest_path, out_path) -> None:
    """Dump per-cell fusion feature rows for a manifest as CSV."""
    model = pipeline.load_model(model_path)
    samples = dataset.load_all(dataset.load_manifest(manifest_path))
    names = pipeline.feature_names()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image_id", "patch_index", "row0", "col0", "gt", *names])
    for s in samples:
        analyses = pipeline.analyze_image_grid(s, model.config)
        rows = pipeline.feature_rows(analyses, model)
        for idx, (a, row) in enumerate(zip(analyses, rows)):
            w.writerow(
                [s.annotation.image_id, idx, a.patch.row0, a.patch.col0, a.gt]
                + [repr(float(v)) for v in row]
            )
    report.atomic_write_text(out_path, buf.getvalue())
    click.echo(f"wrote feature rows to {out_path}")


if __name__ == "__main__":
    main()
