"""Shared fixtures: synthetic datasets and trained models.

Everything expensive is session-scoped. The "acc" fixtures drive the CLI
exactly the way a user would (synth -> split manifests -> train); the
"tiny" fixtures train a small model through the library API for tests
that only need a valid model object.
"""

import hashlib
import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from crowdcount import dataset, pipeline, synth
from crowdcount.cli import main as cli_main
from crowdcount.config import Config, config_from_dict


def tree_digest(root: Path) -> dict[str, str]:
    """Relative path -> sha256 for every file under root."""
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }

ACC_SEED = 11
ACC_CONFIG = {"cell_size": 64, "sampling_stride": 64, "codebook": {"size": 32}}

TINY_SEED = 5
TINY_CONFIG = {"cell_size": 64, "sampling_stride": 64, "codebook": {"size": 16}}


@pytest.fixture(scope="session")
def runner() -> CliRunner:
    return CliRunner()


def run_cli(runner: CliRunner, *args: str):
    return runner.invoke(cli_main, [str(a) for a in args])


@pytest.fixture(scope="session")
def acc_root(tmp_path_factory) -> Path:
    return tmp_path_factory.mktemp("acc")


@pytest.fixture(scope="session")
def acc_dataset(acc_root, runner) -> dict:
    """50 synthetic images via the synth command, split 40 train / 10 test."""
    data_dir = acc_root / "data"
    result = run_cli(
        runner, "synth", "--n", 50, "--min-count", 50, "--max-count", 500,
        "--seed", ACC_SEED, "--size", 256, "--out-dir", data_dir,
    )
    assert result.exit_code == 0, result.output
    manifest_path = data_dir / "manifest.json"
    doc = json.loads(manifest_path.read_text())
    train_doc = {"root": doc["root"], "entries": doc["entries"][:40]}
    test_doc = {"root": doc["root"], "entries": doc["entries"][40:]}
    (data_dir / "manifest_train.json").write_text(json.dumps(train_doc, sort_keys=True))
    (data_dir / "manifest_test.json").write_text(json.dumps(test_doc, sort_keys=True))
    return {
        "dir": data_dir,
        "manifest": manifest_path,
        "manifest_train": data_dir / "manifest_train.json",
        "manifest_test": data_dir / "manifest_test.json",
    }


@pytest.fixture(scope="session")
def acc_config_path(acc_root) -> Path:
    path = acc_root / "config.json"
    path.write_text(json.dumps(ACC_CONFIG, sort_keys=True))
    return path


@pytest.fixture(scope="session")
def acc_config() -> Config:
    return config_from_dict(dict(ACC_CONFIG))


@pytest.fixture(scope="session")
def acc_model_path(acc_root, acc_dataset, acc_config_path, runner) -> Path:
    path = acc_root / "model.json"
    result = run_cli(
        runner, "train", "--manifest", acc_dataset["manifest_train"],
        "--config", acc_config_path, "--seed", ACC_SEED, "--out", path,
    )
    assert result.exit_code == 0, result.output
    return path


@pytest.fixture(scope="session")
def acc_model(acc_model_path) -> pipeline.TrainedModel:
    return pipeline.load_model(acc_model_path)


@pytest.fixture(scope="session")
def acc_samples(acc_dataset) -> list[dataset.Sample]:
    return dataset.load_all(dataset.load_manifest(acc_dataset["manifest"]))


@pytest.fixture(scope="session")
def acc_test_samples(acc_dataset) -> list[dataset.Sample]:
    return dataset.load_all(dataset.load_manifest(acc_dataset["manifest_test"]))


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory) -> dict:
    out = tmp_path_factory.mktemp("tiny")
    # dense enough that keypoint descriptors comfortably outnumber the codebook
    manifest = synth.generate_dataset(out, 6, (80, 200), TINY_SEED, size=256)
    return {"dir": out, "manifest": manifest}


@pytest.fixture(scope="session")
def tiny_samples(tiny_dataset) -> list[dataset.Sample]:
    return dataset.load_all(dataset.load_manifest(tiny_dataset["manifest"]))


@pytest.fixture(scope="session")
def tiny_cfg() -> Config:
    return config_from_dict(dict(TINY_CONFIG))


@pytest.fixture(scope="session")
def tiny_model(tiny_samples, tiny_cfg) -> pipeline.TrainedModel:
    return pipeline.train(tiny_samples, tiny_cfg, TINY_SEED)
