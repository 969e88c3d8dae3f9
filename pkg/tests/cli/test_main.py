"""
Tests for the msmeq entry point: exit codes and a small step-wise run.
"""

import json

import pytest

from cli.main import main
from common.artifact_store import ArtifactStore
from common.run_protocol import StageState
from quality_pipeline.io import read_predictions

SMALL_RUN = {
    "dataset": {"patches_per_sample": [1] * 8, "patch_extent": 32, "seed": 2},
    "arch": {"depth": 2, "base_width": 4, "patch_extent": 32},
    "train": {"epochs": 1, "batch_size": 2, "loss_samples": 2},
    "T": 2,
    "combinations": ["1", "135", "12345"],
    "regressors": ["rf-e", "rf-both", "cnn"],
    "forest": {"n_trees": 4},
    "qnet": {"widths": [2, 2], "hidden": 4, "pool": 2, "input_extent": 8, "epochs": 1},
}


@pytest.fixture
def run_config(tmp_path) -> str:
    path = tmp_path / "run.json"
    path.write_text(json.dumps(SMALL_RUN))
    return str(path)


def _msmeq(tmp_path, *args: str) -> int:
    return main(["--output-root", str(tmp_path / "out"), "--run", "r1", *args])


class TestExitCodes:
    """Errors map onto process exit codes."""

    def test_invalid_config(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"T": 0}))
        assert _msmeq(tmp_path, "gen-data", "--config", str(path)) == 1

    def test_missing_config_file(self, tmp_path):
        assert _msmeq(tmp_path, "gen-data", "--config", str(tmp_path / "none.json")) == 1

    def test_bad_thread_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MSMEQ_THREADS", "many")
        assert _msmeq(tmp_path, "selfcheck") == 1

    def test_missing_input(self, tmp_path, run_config):
        """train-seg without gen-data has no dataset to read."""
        assert _msmeq(tmp_path, "train-seg", "--config", run_config) == 2
        manifest = ArtifactStore(tmp_path / "out" / "r1").load_manifest("train-seg")
        assert manifest.state == StageState.FAILED
        assert "MissingArtifactError" in manifest.error

    def test_unknown_subcommand(self, tmp_path):
        with pytest.raises(SystemExit):
            _msmeq(tmp_path, "deploy")


class TestGenData:
    def test_writes_dataset_and_manifest(self, tmp_path, run_config):
        assert _msmeq(tmp_path, "gen-data", "--config", run_config) == 0
        store = ArtifactStore(tmp_path / "out" / "r1")
        assert store.exists("data/manifest.json")
        manifest = store.load_manifest("gen-data")
        assert manifest.state == StageState.COMPLETED
        assert manifest.config["dataset"]["seed"] == 2
        assert any(ref.key == "data/manifest.json" for ref in manifest.outputs)

    def test_rerun_reproduces_manifest(self, tmp_path, run_config):
        assert _msmeq(tmp_path, "gen-data", "--config", run_config) == 0
        store = ArtifactStore(tmp_path / "out" / "r1")
        first = store.read_bytes("manifests/gen-data.json")
        assert _msmeq(tmp_path, "gen-data", "--config", run_config, "--threads", "3") == 0
        assert store.read_bytes("manifests/gen-data.json") == first


class TestStepwiseRun:
    """gen-data through report on a tiny configuration."""

    @pytest.mark.slow
    def test_pipeline(self, tmp_path, run_config):
        for command in ("gen-data", "train-seg", "build-quality-set", "train-quality", "evaluate"):
            assert _msmeq(tmp_path, command, "--config", run_config) == 0, command
        store = ArtifactStore(tmp_path / "out" / "r1")
        assert store.exists("models/seg/combined_p0.2.bin")
        assert store.exists("models/quality/cnn.bin")

        predictions = read_predictions(store, "quality/predictions.csv")
        # 3 regressors x 2 test patches x 3 combinations
        assert len(predictions) == 18
        assert set(predictions["regressor_name"]) == {"rf-e", "rf-both", "cnn"}

        summary = store.read_json("reports/quality_summary.json")
        assert set(summary) == {"rf-e", "rf-both", "cnn"}

        assert _msmeq(tmp_path, "report", "--config", run_config, "--fig", "quality-scatter") == 0
        assert "<svg" in store.read_bytes("reports/figures/quality-scatter.svg").decode("utf-8")
        assert _msmeq(tmp_path, "report", "--config", run_config, "--fig", "uncertainty-maps") == 0
        assert store.exists("reports/figures/uncertainty-maps.svg")

    @pytest.mark.slow
    def test_infer(self, tmp_path, run_config):
        assert _msmeq(tmp_path, "gen-data", "--config", run_config) == 0
        assert _msmeq(tmp_path, "train-seg", "--config", run_config, "--variant", "plain") == 0
        assert _msmeq(tmp_path, "infer", "--config", run_config, "--variant", "plain") == 0
        store = ArtifactStore(tmp_path / "out" / "r1")
        assert len(store.list_keys("bundles/infer/plain/")) == 6
        assert store.exists("reports/infer_plain_records.csv")

    @pytest.mark.slow
    def test_quality_set_needs_both_maps(self, tmp_path, run_config):
        assert _msmeq(tmp_path, "gen-data", "--config", run_config) == 0
        assert _msmeq(tmp_path, "train-seg", "--config", run_config, "--variant", "plain") == 0
        assert _msmeq(tmp_path, "build-quality-set", "--config", run_config, "--variant", "plain") == 1
