"""
Pipeline stages behind the CLI subcommands.

Stages talk to each other only through the run directory:

    gen-data            data/                     synthetic dataset + manifest
    train-seg           models/seg/<variant>.bin  segmentation checkpoint (+ history)
    infer               bundles/infer/<variant>/  uncertainty bundles, per-record F1
    build-quality-set   bundles/{val,test}/, quality/{val,test}/features.csv
    train-quality       models/quality/<regressor>.json|.bin
    evaluate            quality/predictions.csv, reports/quality_summary.json
    report              reports/figures/<fig>.svg
    crossval            models/crossval/, quality/crossval/, reports/crossval/
    selfcheck           reports/selfcheck.json
"""

from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Type

import pandas as pd
from pydantic import BaseModel

from common.artifact_store import ArtifactStore
from common.errors import ConfigError
from common.rng import derive_seed
from common.run_protocol import StageState
from common.stage import Stage, StageEvent
from metrics.crossval import CrossvalConfig, run_crossval, variant_slug
from metrics.segmentation import EvalRecord, f1_score, foreground_to_prob, records_to_frame
from msme_segnet.markers import MarkerSet, enumerate_combinations, mask_channels
from msme_segnet.model import MSMEUNet, build_model, model_from_bytes, model_to_bytes
from msme_segnet.train import train_segmentation
from quality_pipeline.dataset import build_quality_dataset
from quality_pipeline.evaluate import predictions_frame, summarize_predictions
from quality_pipeline.io import (
    csv_to_frame,
    features_key,
    frame_to_csv,
    load_regressor,
    read_predictions,
    read_quality_set,
    save_regressor,
    write_predictions,
    write_quality_set,
)
from quality_pipeline.regressors import train_regressor
from synth_fm.config import SplitTag
from synth_fm.generator import generate_dataset
from synth_fm.patch import MarkerPatch
from synth_fm.scenarios import apply_scenario, assign_split, fold_split, load_scenario, split_patches
from synth_fm.storage import load_dataset, save_dataset
from uncertainty.bundle import bundle_name, bundle_to_bytes
from uncertainty.inference import MCStreams, predict_bundle

from . import report as figures
from .config import RunConfig
from .selfcheck import raise_on_failure, run_selfcheck

DATA_MANIFEST = f"{ArtifactStore.DATA_PREFIX}manifest.json"
SEG_MODELS = f"{ArtifactStore.MODELS_PREFIX}seg/"
QUALITY_MODELS = f"{ArtifactStore.MODELS_PREFIX}quality/"
PREDICTIONS_KEY = f"{ArtifactStore.QUALITY_PREFIX}predictions.csv"
CROSSVAL_PREDICTIONS_KEY = f"{ArtifactStore.QUALITY_PREFIX}crossval/predictions.csv"
CROSSVAL_DELTA_KEY = f"{ArtifactStore.REPORTS_PREFIX}crossval/delta_f1.csv"


class PipelineStage(Stage):
    """Stage with the run config, a worker cap and helpers shared by the subcommands."""

    config: RunConfig

    def __init__(self, config: BaseModel, store: ArtifactStore, threads: int = 1):
        super().__init__(config, store)
        self.threads = threads

    def emit(self, written: Sequence[Tuple[str, str]], kind: str) -> Iterator[StageEvent]:
        for key, digest in written:
            yield self.artifact(key, digest, kind)

    def done(self, message: str, **progress) -> StageEvent:
        return self.status(StageState.COMPLETED, message, final=True, **progress)

    # -------------------------------------------------------------------------

    def model_key(self) -> str:
        return f"{SEG_MODELS}{variant_slug(self.config.seg_variant)}.bin"

    def load_model(self) -> MSMEUNet:
        return model_from_bytes(self.store.read_bytes(self.model_key()))

    def patches(self) -> List[MarkerPatch]:
        """Stored dataset, re-split for the configured fold and ablated per the scenario."""
        spec, patches = load_dataset(self.store)
        cfg = self.config
        if cfg.fold is not None:
            patches = assign_split(patches, fold_split(spec.n_samples, cfg.fold, cfg.split_seed, cfg.n_test, cfg.n_folds))
        return apply_scenario(patches, load_scenario(cfg.scenario))

    def combinations(self) -> List[MarkerSet]:
        n_markers = self.config.dataset.n_markers
        if self.config.combinations is None:
            return enumerate_combinations(n_markers)
        return [MarkerSet.parse(c, n_markers) for c in self.config.combinations]

    def inference_seed(self) -> int:
        return derive_seed(self.config.seed, "inference", self.config.fold_index)


class GenDataStage(PipelineStage):
    name = "gen-data"

    def process(self) -> Iterator[StageEvent]:
        spec = self.config.dataset
        yield self.working("Generating dataset", patches=spec.n_patches, seed=spec.seed)
        dataset = generate_dataset(spec, workers=self.threads)
        yield from self.emit(save_dataset(self.store, dataset, spec), "dataset")
        yield self.done("Dataset written", patches=len(dataset))


class TrainSegStage(PipelineStage):
    name = "train-seg"

    def input_keys(self) -> List[str]:
        return [DATA_MANIFEST]

    def process(self) -> Iterator[StageEvent]:
        cfg = self.config
        train = split_patches(self.patches(), SplitTag.TRAIN)
        if not train:
            raise ConfigError("No training patches in the stored dataset")
        variant = cfg.seg_variant
        seed = derive_seed(cfg.seed, f"seg-model/{variant.label}", cfg.fold_index)
        yield self.working("Training segmentation model", variant=variant.label, patches=len(train))
        model = build_model(cfg.arch, variant, seed)
        history = train_segmentation(model, train, cfg.train, seed)

        key = self.model_key()
        yield self.artifact(key, self.store.write_bytes(key, model_to_bytes(model)), "checkpoint")
        history_key = key[: -len(".bin")] + ".history.json"
        yield self.artifact(history_key, self.store.write_json(history_key, history.model_dump(mode="json")), "table")
        yield self.done("Model trained", final_loss=round(history.epoch_losses[-1], 6))


class InferStage(PipelineStage):
    name = "infer"

    def input_keys(self) -> List[str]:
        return [DATA_MANIFEST, self.model_key()]

    def process(self) -> Iterator[StageEvent]:
        cfg = self.config
        model = self.load_model()
        test = split_patches(self.patches(), SplitTag.TEST)
        combos = self.combinations()
        seed = self.inference_seed()
        prefix = f"{ArtifactStore.BUNDLES_PREFIX}infer/{variant_slug(model.variant)}/"
        yield self.working("Running inference", patches=len(test), combinations=len(combos), T=cfg.T)

        records: List[EvalRecord] = []
        for patch in test:
            for combo in combos:
                bundle = predict_bundle(
                    model,
                    mask_channels(patch.channels, combo),
                    combo,
                    cfg.T,
                    MCStreams(seed, patch.patch_id, combo.mask),
                    patch.patch_id,
                    cfg.inference,
                )
                key = prefix + bundle_name(patch.patch_id, combo)
                yield self.artifact(key, self.store.write_bytes(key, bundle_to_bytes(bundle)), "bundle")
                f1 = f1_score(patch.mask, foreground_to_prob(bundle.mean_prob))
                records.append(
                    EvalRecord(
                        patch_id=patch.patch_id,
                        combination=combo.mask,
                        fold=cfg.fold_index,
                        model=model.variant.label,
                        f1=f1,
                        n_markers=combo.n_markers,
                    )
                )

        key = f"{ArtifactStore.REPORTS_PREFIX}infer_{variant_slug(model.variant)}_records.csv"
        frame = records_to_frame(records)
        yield self.artifact(key, self.store.write_text(key, frame_to_csv(frame)), "table")
        yield self.done("Inference finished", bundles=len(records), mean_f1=round(float(frame["f1"].mean()), 4))


class BuildQualitySetStage(PipelineStage):
    name = "build-quality-set"

    def input_keys(self) -> List[str]:
        return [DATA_MANIFEST, self.model_key()]

    def process(self) -> Iterator[StageEvent]:
        cfg = self.config
        model = self.load_model()
        if not (model.variant.mc_dropout and model.variant.has_variance_head):
            raise ConfigError("Quality sets need a model with MC dropout and a variance head", variant=model.variant.label)
        patches = self.patches()
        for tag in (SplitTag.VAL, SplitTag.TEST):
            yield self.working("Building quality set", split=tag.value)
            examples = build_quality_dataset(
                model,
                patches,
                tag,
                cfg.T,
                self.inference_seed(),
                cfg.fold_index,
                self.combinations(),
                cfg.inference,
                self.threads,
            )
            yield from self.emit(write_quality_set(self.store, tag.value, examples), "table")
        yield self.done("Quality sets written")


class TrainQualityStage(PipelineStage):
    name = "train-quality"

    def input_keys(self) -> List[str]:
        return [features_key(SplitTag.VAL.value), f"{ArtifactStore.BUNDLES_PREFIX}{SplitTag.VAL.value}/"]

    def process(self) -> Iterator[StageEvent]:
        cfg = self.config
        examples = read_quality_set(self.store, SplitTag.VAL.value)
        seed = derive_seed(cfg.seed, "quality", cfg.fold_index)
        forest_params = cfg.forest.model_copy(update={"seed": seed})
        for name in cfg.regressors:
            yield self.working("Training quality regressor", regressor=name, examples=len(examples))
            regressor = train_regressor(name, examples, forest_params, cfg.qnet, seed, self.threads)
            key, digest = save_regressor(self.store, QUALITY_MODELS, regressor)
            yield self.artifact(key, digest, "checkpoint")
        yield self.done("Quality regressors trained", regressors=len(cfg.regressors))


class EvaluateStage(PipelineStage):
    name = "evaluate"

    def input_keys(self) -> List[str]:
        return [features_key(SplitTag.TEST.value), QUALITY_MODELS]

    def process(self) -> Iterator[StageEvent]:
        examples = read_quality_set(self.store, SplitTag.TEST.value)
        frames = []
        summary: Dict[str, Dict] = {}
        for name in self.config.regressors:
            regressor = load_regressor(self.store, QUALITY_MODELS, name)
            frame = predictions_frame(regressor, examples)
            frames.append(frame)
            summary[name] = summarize_predictions(frame, examples[0].availability.n_markers).model_dump(mode="json")
            yield self.working("Evaluated regressor", regressor=name, rmse=round(summary[name]["rmse"], 4))

        predictions = pd.concat(frames, ignore_index=True)
        yield self.artifact(PREDICTIONS_KEY, write_predictions(self.store, PREDICTIONS_KEY, predictions), "table")
        key = f"{ArtifactStore.REPORTS_PREFIX}quality_summary.json"
        yield self.artifact(key, self.store.write_json(key, summary), "report")
        yield self.done("Evaluation written", examples=len(examples))


class ReportStage(PipelineStage):
    name = "report"

    def input_keys(self) -> List[str]:
        options = self.config.report
        if options.fig == "delta-f1":
            return [CROSSVAL_DELTA_KEY]
        if options.fig == "uncertainty-maps":
            return [DATA_MANIFEST, self.model_key()]
        return [CROSSVAL_PREDICTIONS_KEY if options.source == "crossval" else PREDICTIONS_KEY]

    def process(self) -> Iterator[StageEvent]:
        options = self.config.report
        yield self.working("Rendering figure", fig=options.fig, source=options.source)
        if options.fig in ("quality-scatter", "rmse-bars"):
            frame = read_predictions(self.store, self.input_keys()[0])
            evaluations = {
                name: summarize_predictions(group.reset_index(drop=True), self.config.dataset.n_markers)
                for name, group in frame.groupby("regressor_name", sort=True)
            }
            fig = figures.quality_scatter(evaluations) if options.fig == "quality-scatter" else figures.rmse_bars(evaluations)
        elif options.fig == "delta-f1":
            fig = figures.delta_f1(csv_to_frame(self.store.read_bytes(CROSSVAL_DELTA_KEY).decode("utf-8")))
        else:
            fig = self.uncertainty_figure()

        key = f"{ArtifactStore.REPORTS_PREFIX}figures/{options.fig}.svg"
        yield self.artifact(key, self.store.write_text(key, figures.figure_to_svg(fig)), "figure")
        yield self.done("Figure written", key=key)

    def uncertainty_figure(self):
        cfg = self.config
        model = self.load_model()
        test = split_patches(self.patches(), SplitTag.TEST)
        patch = self.pick_patch(test, cfg.report.patch_id)
        combo = MarkerSet.parse(cfg.report.combination, cfg.dataset.n_markers)
        channels = mask_channels(patch.channels, combo)
        bundle = predict_bundle(
            model, channels, combo, cfg.T, MCStreams(self.inference_seed(), patch.patch_id, combo.mask), patch.patch_id, cfg.inference
        )
        title = f"patch {patch.patch_id}  {combo.name}  {model.variant.label}"
        return figures.uncertainty_maps(channels, patch.mask, bundle, title)

    @staticmethod
    def pick_patch(patches: Sequence[MarkerPatch], patch_id: Optional[int]) -> MarkerPatch:
        if not patches:
            raise ConfigError("No test patches in the stored dataset")
        if patch_id is None:
            return patches[0]
        for patch in patches:
            if patch.patch_id == patch_id:
                return patch
        raise ConfigError("Patch is not a test patch", patch_id=patch_id)


class CrossvalStage(PipelineStage):
    name = "crossval"
    config: CrossvalConfig  # type: ignore[assignment]

    def process(self) -> Iterator[StageEvent]:
        yield self.working("Cross-validation", folds=self.config.fold_indices(), scenario=self.config.scenario)
        result = run_crossval(self.config, self.store, self.threads)
        yield from self.emit(result.written, "table")
        summary = result.summary()
        yield self.done("Cross-validation finished", rmse_ordering_folds=summary["rmse_ordering_folds"])


class SelfcheckStage(PipelineStage):
    name = "selfcheck"

    def process(self) -> Iterator[StageEvent]:
        yield self.working("Running self-check", seeds=self.config.selfcheck_seeds)
        report = run_selfcheck(self.config.selfcheck_seeds, self.config.seed)
        key = f"{ArtifactStore.REPORTS_PREFIX}selfcheck.json"
        yield self.artifact(key, self.store.write_json(key, report), "report")
        raise_on_failure(report)
        yield self.done("Self-check passed")


STAGES: Dict[str, Type[PipelineStage]] = {
    stage.name: stage
    for stage in (
        GenDataStage,
        TrainSegStage,
        InferStage,
        BuildQualitySetStage,
        TrainQualityStage,
        EvaluateStage,
        ReportStage,
        CrossvalStage,
        SelfcheckStage,
    )
}
