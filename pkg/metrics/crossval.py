"""
Cross-validation harness.

One run = the synthetic dataset, a training-availability scenario and a
list of segmentation variants. Every fold

1. rotates the validation sample (test samples stay fixed),
2. ablates the training samples per the scenario,
3. trains each variant and scores it on every test patch under every
   marker combination,
4. builds the validation quality set from the quality variant, trains the
   quality regressors on it and predicts the test quality set.

Aggregates: RMSE / per-combination summaries per regressor and paired
F1 differences of each variant against the reference variant.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
import structlog
from pydantic import BaseModel, Field, model_validator

from common.artifact_store import ArtifactStore
from common.errors import ConfigError
from common.rng import derive_seed
from msme_segnet.model import ArchConfig, MSMEUNet, SegVariant, build_model, model_to_bytes
from msme_segnet.train import TrainConfig, TrainingHistory, train_segmentation
from quality_pipeline.dataset import QualityExample, build_quality_dataset
from quality_pipeline.evaluate import QualityEvaluation, predictions_frame, summarize_predictions
from quality_pipeline.io import feature_table, frame_to_csv, save_regressor, write_quality_set
from quality_pipeline.qnet import QNetSpec
from quality_pipeline.regressors import REGRESSOR_NAMES, RF_MODES, train_regressor
from random_forest.forest import ForestParams
from synth_fm.config import DatasetSpec, SplitTag
from synth_fm.generator import generate_dataset
from synth_fm.patch import MarkerPatch
from synth_fm.scenarios import apply_scenario, assign_split, fold_split, load_scenario, split_patches
from uncertainty.inference import InferenceConfig

from .segmentation import EvalRecord, RelativeF1, records_to_frame, relative_f1


logger = structlog.get_logger()

CROSSVAL_PREFIX = "crossval/"
DEFAULT_VARIANTS = ["plain", "combined(p=0.2)", "conventional(p=0.2)", "epistemic(p=0.2)", "aleatoric"]


class CrossvalConfig(BaseModel):
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    scenario: str = "case6"
    n_folds: int = Field(default=4, ge=1)
    n_test: int = Field(default=2, ge=1)
    folds: Optional[List[int]] = None  # subset of folds to run; None runs all
    split_seed: int = Field(default=0, ge=0)
    seed: int = Field(default=0, ge=0)
    arch: ArchConfig = Field(default_factory=ArchConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    variants: List[str] = Field(default_factory=lambda: list(DEFAULT_VARIANTS))
    reference: str = "plain"
    quality_variant: str = "combined(p=0.2)"
    T: int = Field(default=50, ge=1)
    inference: InferenceConfig = Field(default_factory=InferenceConfig)
    forest: ForestParams = Field(default_factory=ForestParams)
    qnet: QNetSpec = Field(default_factory=QNetSpec)
    regressors: List[str] = Field(default_factory=lambda: list(REGRESSOR_NAMES))
    keep_bundles: bool = False

    @model_validator(mode="after")
    def _check(self) -> "CrossvalConfig":
        labels = [SegVariant.parse(v).label for v in self.variants]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate variants: {labels}")
        if SegVariant.parse(self.reference).label not in labels:
            raise ValueError(f"reference variant {self.reference!r} is not in variants")
        quality = SegVariant.parse(self.quality_variant)
        if quality.label not in labels:
            raise ValueError(f"quality variant {self.quality_variant!r} is not in variants")
        if not (quality.mc_dropout and quality.has_variance_head):
            raise ValueError("quality variant must produce both u_e and u_a")
        unknown = sorted(set(self.regressors) - set(REGRESSOR_NAMES))
        if unknown:
            raise ValueError(f"unknown regressors: {unknown}")
        if self.arch.patch_extent != self.dataset.patch_extent:
            raise ValueError("arch.patch_extent must equal dataset.patch_extent")
        if self.arch.n_markers != self.dataset.n_markers:
            raise ValueError("arch.n_markers must equal dataset.n_markers")
        if self.folds is not None and any(not 0 <= f < self.n_folds for f in self.folds):
            raise ValueError(f"fold indices must lie in [0, {self.n_folds})")
        return self

    def parsed_variants(self) -> List[SegVariant]:
        return [SegVariant.parse(v) for v in self.variants]

    def fold_indices(self) -> List[int]:
        return sorted(set(self.folds)) if self.folds is not None else list(range(self.n_folds))


@dataclass
class FoldResult:
    fold: int
    split: Dict[str, List[int]]
    records: List[EvalRecord]
    predictions: pd.DataFrame
    histories: Dict[str, TrainingHistory]
    n_val_examples: int
    n_test_examples: int
    written: List[Tuple[str, str]] = field(default_factory=list)


@dataclass
class CrossvalResult:
    folds: List[FoldResult]
    records: pd.DataFrame
    predictions: pd.DataFrame
    quality: Dict[str, QualityEvaluation]
    relative: Dict[str, RelativeF1]
    written: List[Tuple[str, str]] = field(default_factory=list)

    def summary(self) -> Dict:
        """JSON-ready aggregate report."""
        full = self.records[self.records["combo_mask"] == self.records["combo_mask"].max()]
        return {
            "folds": [{"fold": f.fold, "split": f.split, "val_examples": f.n_val_examples, "test_examples": f.n_test_examples}
                      for f in self.folds],
            "quality": {name: evaluation.model_dump(mode="json") for name, evaluation in self.quality.items()},
            "relative_f1": {
                label: {
                    "reference": rel.reference,
                    "n": len(rel.deltas),
                    "median": rel.median,
                    "mean": rel.mean,
                    "fraction_positive": rel.fraction_positive,
                }
                for label, rel in self.relative.items()
            },
            "segmentation": {
                "mean_f1": {str(m): float(g["f1"].mean()) for m, g in self.records.groupby("model", sort=True)},
                "mean_f1_all_markers": {str(m): float(g["f1"].mean()) for m, g in full.groupby("model", sort=True)},
            },
            "rmse_ordering_folds": rmse_ordering_folds(self.quality),
        }


def rmse_ordering_folds(quality: Dict[str, QualityEvaluation]) -> Optional[int]:
    """Folds on which rf-both has an RMSE no larger than both single-map forests."""
    if not all(name in quality for name in RF_MODES):
        return None
    both = quality["rf-both"].rmse_per_fold
    return sum(
        1
        for fold, value in both.items()
        if value <= quality["rf-e"].rmse_per_fold[fold] and value <= quality["rf-a"].rmse_per_fold[fold]
    )


def variant_slug(variant: SegVariant) -> str:
    """File-name form of a variant label, e.g. combined_p0.2_last."""
    slug = variant.kind.value
    if variant.has_dropout:
        slug += f"_p{variant.p:g}"
    if variant.last_only:
        slug += "_last"
    return slug


def fold_patches(full: Sequence[MarkerPatch], config: CrossvalConfig, fold: int) -> Tuple[Dict[str, List[int]], List[MarkerPatch]]:
    split = fold_split(config.dataset.n_samples, fold, config.split_seed, config.n_test, config.n_folds)
    patches = apply_scenario(assign_split(full, split), load_scenario(config.scenario))
    return split.model_dump(), patches


def _check_no_leakage(val: Sequence[QualityExample], test: Sequence[QualityExample], fold: int) -> None:
    shared = {e.patch_id for e in val} & {e.patch_id for e in test}
    if shared:
        raise ConfigError("Test patches leaked into the quality training set", fold=fold, patches=sorted(shared)[:5])


def run_fold(
    full: Sequence[MarkerPatch],
    config: CrossvalConfig,
    fold: int,
    store: Optional[ArtifactStore] = None,
    workers: int = 1,
) -> FoldResult:
    log = logger.bind(fold=fold)
    quality_label = SegVariant.parse(config.quality_variant).label
    if quality_label not in {v.label for v in config.parsed_variants()}:
        raise ConfigError("quality_variant is not among the trained variants", quality_variant=config.quality_variant)
    split, patches = fold_patches(full, config, fold)
    train = split_patches(patches, SplitTag.TRAIN)
    log.info("Fold started", split=split, train_patches=len(train))

    infer_seed = derive_seed(config.seed, "inference", fold)
    prefix = f"{CROSSVAL_PREFIX}fold{fold}/"
    written: List[Tuple[str, str]] = []
    records: List[EvalRecord] = []
    histories: Dict[str, TrainingHistory] = {}
    test_sets: Dict[str, List[QualityExample]] = {}
    models: Dict[str, MSMEUNet] = {}

    for variant in config.parsed_variants():
        model_seed = derive_seed(config.seed, f"seg-model/{variant.label}", fold)
        model = build_model(config.arch, variant, model_seed)
        histories[variant.label] = train_segmentation(model, train, config.train, model_seed)
        if store is not None:
            key = f"{ArtifactStore.MODELS_PREFIX}{prefix}{variant_slug(variant)}.bin"
            written.append((key, store.write_bytes(key, model_to_bytes(model))))

        examples = build_quality_dataset(
            model, patches, SplitTag.TEST, config.T, infer_seed, fold, config=config.inference, workers=workers
        )
        records.extend(
            EvalRecord(
                patch_id=e.patch_id,
                combination=e.availability.mask,
                fold=fold,
                model=variant.label,
                f1=e.target,
                n_markers=e.availability.n_markers,
            )
            for e in examples
        )
        test_sets[variant.label] = examples
        models[variant.label] = model

    quality_model = models[quality_label]
    val_examples = build_quality_dataset(
        quality_model, patches, SplitTag.VAL, config.T, infer_seed, fold, config=config.inference, workers=workers
    )
    test_examples = test_sets[quality_label]
    _check_no_leakage(val_examples, test_examples, fold)

    frames = []
    regressor_seed = derive_seed(config.seed, "quality", fold)
    forest_params = config.forest.model_copy(update={"seed": regressor_seed})
    for name in config.regressors:
        regressor = train_regressor(name, val_examples, forest_params, config.qnet, regressor_seed, workers)
        frames.append(predictions_frame(regressor, test_examples))
        if store is not None:
            written.append(save_regressor(store, f"{ArtifactStore.MODELS_PREFIX}{prefix}", regressor))

    if store is not None:
        for set_name, examples in (("val", val_examples), ("test", test_examples)):
            name = f"{prefix}{set_name}"
            if config.keep_bundles:
                written.extend(write_quality_set(store, name, examples))
            else:
                key = f"{ArtifactStore.QUALITY_PREFIX}{name}/features.csv"
                written.append((key, store.write_text(key, frame_to_csv(feature_table(examples)))))

    log.info("Fold finished", records=len(records), val_examples=len(val_examples), test_examples=len(test_examples))
    return FoldResult(
        fold=fold,
        split=split,
        records=records,
        predictions=pd.concat(frames, ignore_index=True),
        histories=histories,
        n_val_examples=len(val_examples),
        n_test_examples=len(test_examples),
        written=written,
    )


def run_crossval(config: CrossvalConfig, store: Optional[ArtifactStore] = None, workers: int = 1) -> CrossvalResult:
    """Run every configured fold and aggregate; writes tables under crossval/ when a store is given."""
    logger.info(
        "Cross-validation started",
        scenario=config.scenario,
        folds=config.fold_indices(),
        variants=[v.label for v in config.parsed_variants()],
        regressors=config.regressors,
        seed=config.seed,
        split_seed=config.split_seed,
    )
    full = generate_dataset(config.dataset, workers=workers)
    folds = [run_fold(full, config, fold, store, workers) for fold in config.fold_indices()]

    records = records_to_frame([r for f in folds for r in f.records])
    predictions = pd.concat([f.predictions for f in folds], ignore_index=True)
    predictions = predictions.sort_values(["regressor_name", "fold", "patch_id", "combo_mask"], kind="stable").reset_index(drop=True)

    quality = {
        name: summarize_predictions(
            predictions[predictions["regressor_name"] == name].reset_index(drop=True), config.dataset.n_markers
        )
        for name in config.regressors
    }
    reference = SegVariant.parse(config.reference).label
    by_model = {label: [r for f in folds for r in f.records if r.model == label] for label in records["model"].unique()}
    relative = {
        label: relative_f1(rows, by_model[reference])
        for label, rows in sorted(by_model.items())
        if label != reference
    }

    result = CrossvalResult(folds=folds, records=records, predictions=predictions, quality=quality, relative=relative)
    for f in folds:
        result.written.extend(f.written)
    if store is not None:
        result.written.extend(write_crossval_tables(store, result))

    for name, evaluation in quality.items():
        logger.info("Quality regressor", regressor=name, rmse=round(evaluation.rmse, 4), r2_of_means=round(evaluation.r2_of_means, 4))
    for label, rel in relative.items():
        logger.info("Relative F1", model=label, reference=reference, median=round(rel.median, 4), mean=round(rel.mean, 4))
    return result


def write_crossval_tables(store: ArtifactStore, result: CrossvalResult) -> List[Tuple[str, str]]:
    tables = f"{ArtifactStore.QUALITY_PREFIX}{CROSSVAL_PREFIX}"
    reports = f"{ArtifactStore.REPORTS_PREFIX}{CROSSVAL_PREFIX}"
    delta = pd.concat([rel.to_frame() for rel in result.relative.values()], ignore_index=True) if result.relative else pd.DataFrame()
    written = [
        (f"{tables}predictions.csv", store.write_text(f"{tables}predictions.csv", frame_to_csv(result.predictions))),
        (f"{reports}eval_records.csv", store.write_text(f"{reports}eval_records.csv", frame_to_csv(result.records))),
        (f"{reports}delta_f1.csv", store.write_text(f"{reports}delta_f1.csv", frame_to_csv(delta))),
        (f"{reports}summary.json", store.write_json(f"{reports}summary.json", result.summary())),
    ]
    return written

