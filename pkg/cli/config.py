"""
Run configuration.

One JSON file per run, loaded into ``RunConfig`` (or ``CrossvalConfig``
for the crossval subcommand). CLI flags override single fields after the
file is read; the resolved config is echoed into every stage manifest.
Thread count is not part of the config: it never changes results.
"""

import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Type, TypeVar

from dotenv import load_dotenv
from pydantic import BaseModel, Field, model_validator

from common.errors import ConfigError
from metrics.crossval import CrossvalConfig
from msme_segnet.model import ArchConfig, SegVariant
from msme_segnet.train import TrainConfig
from quality_pipeline.qnet import QNetSpec
from quality_pipeline.regressors import REGRESSOR_NAMES
from random_forest.forest import ForestParams
from synth_fm.config import DatasetSpec
from uncertainty.inference import InferenceConfig


ConfigT = TypeVar("ConfigT", bound=BaseModel)

FIGURES = ("quality-scatter", "rmse-bars", "delta-f1", "uncertainty-maps")


class ReportOptions(BaseModel):
    fig: str = "quality-scatter"
    source: str = "quality"  # "quality" (step-wise run) or "crossval"
    patch_id: Optional[int] = None  # uncertainty-maps: defaults to the first test patch
    combination: str = "12345"

    @model_validator(mode="after")
    def _check(self) -> "ReportOptions":
        if self.fig not in FIGURES:
            raise ValueError(f"unknown figure {self.fig!r}; choose from {list(FIGURES)}")
        if self.source not in ("quality", "crossval"):
            raise ValueError(f"unknown report source {self.source!r}")
        return self


class RunConfig(BaseModel):
    seed: int = Field(default=0, ge=0)
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    scenario: str = "case6"
    fold: Optional[int] = Field(default=None, ge=0)  # None keeps the dataset's own split
    n_folds: int = Field(default=4, ge=1)
    n_test: int = Field(default=2, ge=1)
    split_seed: int = Field(default=0, ge=0)
    arch: ArchConfig = Field(default_factory=ArchConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    variant: str = "combined(p=0.2)"
    T: int = Field(default=50, ge=1)
    inference: InferenceConfig = Field(default_factory=InferenceConfig)
    combinations: Optional[List[str]] = None  # None = all 2^K - 1
    regressors: List[str] = Field(default_factory=lambda: list(REGRESSOR_NAMES))
    forest: ForestParams = Field(default_factory=ForestParams)
    qnet: QNetSpec = Field(default_factory=QNetSpec)
    report: ReportOptions = Field(default_factory=ReportOptions)
    selfcheck_seeds: int = Field(default=20, ge=1)

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        SegVariant.parse(self.variant)
        unknown = sorted(set(self.regressors) - set(REGRESSOR_NAMES))
        if unknown:
            raise ValueError(f"unknown regressors: {unknown}")
        if self.arch.patch_extent != self.dataset.patch_extent:
            raise ValueError("arch.patch_extent must equal dataset.patch_extent")
        if self.fold is not None and self.fold >= self.n_folds:
            raise ValueError(f"fold must lie in [0, {self.n_folds})")
        return self

    @property
    def seg_variant(self) -> SegVariant:
        return SegVariant.parse(self.variant)

    @property
    def fold_index(self) -> int:
        return self.fold or 0


def load_env() -> None:
    """Read ``.env`` (if present) without overriding the real environment."""
    load_dotenv(override=False)


def env_threads(default: int = 1) -> int:
    value = os.getenv("MSMEQ_THREADS")
    if value is None:
        return default
    try:
        threads = int(value)
    except ValueError:
        raise ConfigError("MSMEQ_THREADS must be an integer", value=value) from None
    if threads < 1:
        raise ConfigError("MSMEQ_THREADS must be positive", value=value)
    return threads


def read_json_file(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        return {}
    source = Path(path)
    if not source.exists():
        raise ConfigError("Config file not found", path=str(source))
    try:
        data = json.loads(source.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("Config file is not valid JSON", path=str(source), reason=str(exc)) from exc
    if not isinstance(data, dict):
        raise ConfigError("Config file must hold a JSON object", path=str(source))
    return data


def merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Nested dict update; None values in overrides are ignored."""
    out = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out


def build_config(model: Type[ConfigT], path: Optional[str], overrides: Dict[str, Any]) -> ConfigT:
    """File first, then flag overrides; pydantic errors propagate (exit 1 in the CLI)."""
    return model.model_validate(merge(read_json_file(path), overrides))


__all__ = [
    "FIGURES",
    "CrossvalConfig",
    "ReportOptions",
    "RunConfig",
    "build_config",
    "env_threads",
    "load_env",
    "merge",
    "read_json_file",
]
