"""
Tests for run configuration and flag overrides.
"""

import json

import pytest
from pydantic import ValidationError

from cli.config import ReportOptions, RunConfig, build_config, env_threads, merge, read_json_file
from cli.main import build_parser, run_overrides
from common.errors import ConfigError
from msme_segnet.model import VariantKind


class TestMerge:
    def test_nested(self):
        base = {"train": {"epochs": 30, "batch_size": 4}, "T": 50}
        out = merge(base, {"train": {"epochs": 2}, "T": None})
        assert out == {"train": {"epochs": 2, "batch_size": 4}, "T": 50}
        assert base["train"]["epochs"] == 30

    def test_replaces_non_dict(self):
        assert merge({"combinations": ["1"]}, {"combinations": ["2", "3"]}) == {"combinations": ["2", "3"]}


class TestReadJsonFile:
    """Tests for read_json_file."""

    def test_none(self):
        assert read_json_file(None) == {}

    def test_reads_object(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"T": 5}))
        assert read_json_file(str(path)) == {"T": 5}

    def test_missing(self, tmp_path):
        with pytest.raises(ConfigError):
            read_json_file(str(tmp_path / "nope.json"))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{T: 5")
        with pytest.raises(ConfigError):
            read_json_file(str(path))

    def test_not_an_object(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            read_json_file(str(path))


class TestEnvThreads:
    def test_default(self, monkeypatch):
        monkeypatch.delenv("MSMEQ_THREADS", raising=False)
        assert env_threads() == 1

    def test_from_env(self, monkeypatch):
        monkeypatch.setenv("MSMEQ_THREADS", "4")
        assert env_threads() == 4

    @pytest.mark.parametrize("value", ["four", "0"])
    def test_invalid(self, monkeypatch, value):
        monkeypatch.setenv("MSMEQ_THREADS", value)
        with pytest.raises(ConfigError):
            env_threads()


class TestRunConfig:
    """Tests for RunConfig validation."""

    def test_defaults(self):
        config = RunConfig()
        assert config.seg_variant.kind == VariantKind.COMBINED
        assert config.seg_variant.p == pytest.approx(0.2)
        assert config.fold_index == 0
        assert config.regressors == ["rf-e", "rf-a", "rf-both", "cnn"]

    def test_unknown_regressor(self):
        with pytest.raises(ValidationError):
            RunConfig(regressors=["knn"])

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            RunConfig(variant="bayesian")

    def test_extent_mismatch(self):
        with pytest.raises(ValidationError):
            RunConfig(dataset={"patch_extent": 32})

    def test_fold_range(self):
        with pytest.raises(ValidationError):
            RunConfig(fold=4)

    def test_unknown_figure(self):
        with pytest.raises(ValidationError):
            ReportOptions(fig="pie")

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"T": 5, "seed": 3, "train": {"epochs": 2}}))
        config = build_config(RunConfig, str(path), {"seed": 9, "T": None})
        assert (config.T, config.seed, config.train.epochs) == (5, 9, 2)


class TestOverrides:
    """Tests for flag-to-config overrides."""

    def test_variant_with_p(self):
        args = build_parser().parse_args(["train-seg", "--variant", "epistemic", "--p", "0.3"])
        assert run_overrides(args)["variant"] == "epistemic(p=0.3)"

    def test_p_defaults_to_combined(self):
        args = build_parser().parse_args(["train-seg", "--p", "0.5"])
        assert run_overrides(args)["variant"] == "combined(p=0.5)"

    def test_gen_data_seed_goes_to_dataset(self):
        args = build_parser().parse_args(["gen-data", "--seed", "7"])
        overrides = run_overrides(args)
        assert overrides["dataset"] == {"seed": 7}
        assert overrides["seed"] == 7

    def test_repeatable_flags(self):
        args = build_parser().parse_args(["infer", "--combination", "1", "--combination", "135", "--regressor", "rf-e"])
        overrides = run_overrides(args)
        assert overrides["combinations"] == ["1", "135"]
        assert overrides["regressors"] == ["rf-e"]

    def test_report_options(self):
        args = build_parser().parse_args(["report", "--fig", "rmse-bars", "--source", "crossval"])
        overrides = run_overrides(args)
        assert overrides["report"]["fig"] == "rmse-bars"
        assert overrides["combinations"] is None
        assert build_config(RunConfig, None, overrides).report.source == "crossval"
