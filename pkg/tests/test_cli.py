"""Command-line behavior: output formats, exit codes, written artifacts."""

import csv
import dataclasses
import io
import json

import numpy as np
import pytest
from conftest import run_cli, tree_digest

from crowdcount import pipeline
from crowdcount.imaging import load_image


@pytest.fixture(scope="module")
def tiny_model_path(tiny_model, tmp_path_factory):
    path = tmp_path_factory.mktemp("climodel") / "model.json"
    pipeline.save_model(tiny_model, path)
    return path


@pytest.fixture(scope="module")
def tiny_image_path(tiny_dataset):
    return tiny_dataset["dir"] / "images" / "img_000.pgm"


def parse_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


class TestHelp:
    def test_lists_every_subcommand(self, runner):
        result = run_cli(runner, "--help")
        assert result.exit_code == 0
        for name in ("train", "count", "evaluate", "crossval", "synth", "features"):
            assert name in result.output


class TestSynthCommand:
    def test_identical_invocations_write_identical_bytes(self, runner, tmp_path):
        for sub in ("a", "b"):
            result = run_cli(
                runner, "synth", "--n", 3, "--min-count", 30, "--max-count", 80,
                "--seed", 21, "--size", 128, "--out-dir", tmp_path / sub,
            )
            assert result.exit_code == 0, result.output
        assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")


class TestCountCommand:
    def test_echo_line_and_cell_csv_agree(self, runner, tiny_model, tiny_model_path,
                                          tiny_image_path, tmp_path):
        cells_path = tmp_path / "cells.csv"
        result = run_cli(
            runner, "count", "--model", tiny_model_path, "--cells", cells_path,
            tiny_image_path,
        )
        assert result.exit_code == 0, result.output
        expected = pipeline.count_image(load_image(tiny_image_path), tiny_model)
        assert f"{tiny_image_path}\t{expected.total:.1f}" in result.output

        rows = parse_csv(cells_path.read_text())
        assert len(rows) == 16
        ests = np.array([float(r["est"]) for r in rows])
        # repr round-trips exactly, so the CSV reproduces the totals bitwise
        assert float(ests.sum()) == expected.total
        assert np.array_equal(ests, expected.estimates)

    def test_counts_several_images_in_order(self, runner, tiny_model_path, tiny_dataset):
        imgs = [tiny_dataset["dir"] / "images" / f"img_{i:03d}.pgm" for i in (0, 1)]
        result = run_cli(runner, "count", "--model", tiny_model_path, *imgs)
        assert result.exit_code == 0, result.output
        lines = [ln for ln in result.output.splitlines() if "\t" in ln]
        assert [ln.split("\t")[0] for ln in lines] == [str(p) for p in imgs]


class TestEvaluateCommand:
    def test_written_files_and_spreadsheet_oracle(self, runner, tiny_model_path,
                                                  tiny_dataset, tmp_path):
        out = tmp_path / "eval"
        result = run_cli(
            runner, "evaluate", "--model", tiny_model_path,
            "--manifest", tiny_dataset["manifest"], "--out-dir", out,
        )
        assert result.exit_code == 0, result.output
        assert "evaluated 6 images" in result.output
        for name in ("images.csv", "patches.csv", "summary.json",
                     "est_vs_gt.png", "nae_vs_count.png", "patch_error_analysis.png"):
            assert (out / name).exists(), name

        summary = json.loads((out / "summary.json").read_text())
        rows = parse_csv((out / "images.csv").read_text())
        assert len(rows) == summary["n_images"] == 6
        ae = np.array([float(r["ae"]) for r in rows])
        nae = np.array([float(r["nae"]) for r in rows if r["nae"] != ""])
        # the summary must be recomputable from the per-image table alone
        assert float(ae.mean()) == summary["mae"]
        assert float(nae.mean()) == summary["mnae"]
        assert len(rows) - nae.size == summary["nae_excluded"]

        patch_rows = parse_csv((out / "patches.csv").read_text())
        assert len(patch_rows) == summary["n_patches"] == 6 * 16
        pae = np.array([float(r["ae"]) for r in patch_rows])
        assert float(pae.mean()) == summary["patch_mae"]


class TestCrossvalCommand:
    def test_fold_layout_and_assignment(self, runner, tiny_dataset, tmp_path):
        out = tmp_path / "cv"
        result = run_cli(
            runner, "crossval", "--manifest", tiny_dataset["manifest"],
            "-k", 2, "--seed", 13, "--set", "codebook.size=16", "--out-dir", out,
        )
        assert result.exit_code == 0, result.output
        assert "crossval k=2 on 6 images" in result.output
        assert (out / "fold_0" / "summary.json").exists()
        assert (out / "fold_1" / "summary.json").exists()
        assert (out / "pooled" / "summary.json").exists()

        folds = json.loads((out / "folds.json").read_text())
        assert folds["k"] == 2 and folds["seed"] == 13
        assert sorted(folds["assignment"]) == [f"img_{i:03d}" for i in range(6)]
        assert set(folds["assignment"].values()) == {0, 1}

        pooled = json.loads((out / "pooled" / "summary.json").read_text())
        assert pooled["n_images"] == 6


class TestFeaturesCommand:
    def test_csv_layout(self, runner, tiny_model_path, tiny_dataset, tmp_path):
        out = tmp_path / "rows.csv"
        result = run_cli(
            runner, "features", "--model", tiny_model_path,
            "--manifest", tiny_dataset["manifest"], "--out", out,
        )
        assert result.exit_code == 0, result.output
        rows = parse_csv(out.read_text())
        assert len(rows) == 6 * 16
        header = out.read_text().splitlines()[0].split(",")
        assert header[:5] == ["image_id", "patch_index", "row0", "col0", "gt"]
        assert header[5:] == pipeline.feature_names()
        first = rows[0]
        assert np.isfinite([float(first[n]) for n in pipeline.feature_names()]).all()


class TestExitCodes:
    def test_unknown_config_key_exits_2(self, runner, tiny_dataset, tmp_path):
        result = run_cli(
            runner, "train", "--manifest", tiny_dataset["manifest"], "--seed", 1,
            "--out", tmp_path / "m.json", "--set", "no.such.key=1",
        )
        assert result.exit_code == 2
        assert "error:" in result.output

    def test_missing_manifest_exits_3(self, runner, tmp_path):
        result = run_cli(
            runner, "train", "--manifest", tmp_path / "nope.json", "--seed", 1,
            "--out", tmp_path / "m.json",
        )
        assert result.exit_code == 3

    def test_mismatched_analysis_settings_exit_4(self, runner, tiny_model_path,
                                                 tiny_image_path):
        result = run_cli(
            runner, "count", "--model", tiny_model_path,
            "--set", "cell_size=96", tiny_image_path,
        )
        assert result.exit_code == 4

    def test_unconverged_training_exits_5_but_writes_the_model(
        self, runner, tiny_model, tiny_dataset, tmp_path, monkeypatch
    ):
        stubborn = dataclasses.replace(tiny_model, converged={"fusion": False})
        monkeypatch.setattr(pipeline, "train", lambda samples, cfg, seed: stubborn)
        out = tmp_path / "model.json"
        result = run_cli(
            runner, "train", "--manifest", tiny_dataset["manifest"],
            "--seed", 1, "--out", out,
        )
        assert result.exit_code == 5
        assert "iteration cap" in result.output
        assert out.exists()
        pipeline.load_model(out)  # still a readable, compatible model
