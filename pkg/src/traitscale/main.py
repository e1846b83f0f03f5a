"""End-to-end pipeline run.

``run_pipeline`` executes gapfill, features, classify, cwm, train, predict,
evaluate and report in order inside one run directory. The manifest is
rewritten after every stage so a failed run leaves the partial record of what
finished.
"""

import argparse
import shutil
import sys
from pathlib import Path
from typing import Callable, Dict, Optional, Union

import numpy as np

from cwm import RecordIndex, build_training_set, read_climate_rasters, write_cwm_csv
from gapfill import gapfill_all, gapfill_document, write_provenance
from logging_utils import StageTimer, get_logger
from pft_downscale import read_abundance, run_classification, write_abundance
from raster_features import (
    RasterGrid,
    build_feature_raster,
    load_time_stack,
    mode_composite,
    read_feature_raster,
    read_tsr,
    write_feature_raster,
    write_tsr,
)
from run_report import emit_report
from stage_processor import StageProcessor
from surrogate_forest import save_forest
from trait_regress import (
    compare_methods,
    load_trait_model,
    predict_map,
    save_trait_model,
    train_and_evaluate,
)
from trait_table import (
    CLASS_CODES,
    drop_excluded_groups,
    load_trait_table,
    remove_outliers,
    save_trait_table,
)
from traitscale.config import ConfigError
from traitscale.layout import RunLayout
from traitscale.manifest import (
    Manifest,
    ManifestError,
    StageRecord,
    hash_outputs,
    package_versions,
    verify_manifest,
    write_manifest,
)
from traitscale.run_config import PipelineConfig, dump_config, load_config
from validate_report import write_report

logger = get_logger("traitscale.pipeline")

PathLike = Union[str, Path]

STAGES = ("gapfill", "features", "classify", "cwm", "train", "predict", "evaluate", "report")

# Which config section parameterizes each stage.
STAGE_SECTIONS: Dict[str, str] = {"gapfill": "gapfill", "features": "features",
                                  "classify": "classify", "cwm": "cwm", "train": "train",
                                  "predict": "features", "evaluate": "evaluate",
                                  "report": "report"}


class StageError(RuntimeError):
    """A pipeline stage failed; ``manifest`` records every stage up to the failure."""

    def __init__(self, stage: str, manifest: Manifest, cause: BaseException):
        super().__init__(f"stage {stage} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.manifest = manifest


def records_path(config: PipelineConfig, layout: RunLayout) -> Path:
    """Trait table the cwm stage reads: the imputed table, or the input when gap filling is off."""
    return layout.imputed if config.gapfill.enabled else Path(config.inputs.records)


def _climate(config: PipelineConfig) -> Optional[Dict[str, RasterGrid]]:
    if config.cwm.use_climate and config.inputs.climate:
        return read_climate_rasters(config.inputs.climate)
    return None


def run_gapfill(config: PipelineConfig, layout: RunLayout) -> bool:
    if not config.gapfill.enabled:
        logger.info(f"Gap filling disabled; {config.inputs.records} is used as imputed")
        return False
    section = config.gapfill
    table = load_trait_table(config.inputs.records)
    if section.clean:
        table, _ = remove_outliers(drop_excluded_groups(table), section.outlier_k)
    imputed, reports = gapfill_all(table, section.grid, section.folds, config.seed, config.n_jobs)
    save_trait_table(imputed.table, layout.imputed)
    write_provenance(imputed, layout.provenance)
    write_report(gapfill_document(reports, section.grid), layout.gapfill_report, "gapfill_report")
    return True


def run_features(config: PipelineConfig, layout: RunLayout) -> bool:
    section = config.features
    for scenes, roles, out in ((config.inputs.fine_scenes, section.fine_roles, layout.fine_features),
                               (config.inputs.coarse_scenes, section.coarse_roles,
                                layout.coarse_features)):
        features = build_feature_raster(load_time_stack(scenes), roles, section.years,
                                        n_jobs=config.n_jobs, block_rows=section.block_rows)
        write_feature_raster(features, out)
    return True


def run_classify(config: PipelineConfig, layout: RunLayout) -> bool:
    section = config.classify
    references = [read_tsr(path) for path in config.inputs.reference]
    reference = references[0] if len(references) == 1 else mode_composite(references)
    mask = read_tsr(config.inputs.mask) if config.inputs.mask else None
    classes, abundance, classifier, report = run_classification(
        read_feature_raster(layout.fine_features), reference, read_tsr(config.inputs.quality),
        mask, section.per_class, section.threshold, section.n_trees, config.seed, config.n_jobs)
    write_tsr(classes, layout.classes, class_codes=CLASS_CODES)
    write_abundance(abundance, layout.abundance)
    save_forest(classifier.model, layout.classifier)
    write_report(report.model_dump(mode="json"), layout.classification_report,
                 "classification_report")
    return True


def run_cwm(config: PipelineConfig, layout: RunLayout) -> bool:
    index = RecordIndex(load_trait_table(records_path(config, layout)))
    training = build_training_set(read_abundance(layout.abundance),
                                  read_feature_raster(layout.coarse_features), index,
                                  _climate(config), config.cwm.rules, config.n_jobs)
    write_cwm_csv(training, layout.cwm)
    logger.info(f"{len(training)} CWM training rows")
    return True


def run_train(config: PipelineConfig, layout: RunLayout) -> bool:
    section = config.train
    for trait in section.traits:
        model, report = train_and_evaluate(str(layout.cwm), section.method.value, trait,
                                           section.realizations, section.cv_fraction,
                                           config.seed, config.n_jobs)
        save_trait_model(model, layout.model(trait))
        write_report(report.model_dump(mode="json"), layout.eval_report(trait), "eval_report")
    return True


def run_predict(config: PipelineConfig, layout: RunLayout) -> bool:
    features = read_feature_raster(layout.coarse_features)
    climate = _climate(config)
    for trait in config.train.traits:
        model = load_trait_model(layout.model(trait))
        grid, stderr = predict_map(model, features, climate, config.n_jobs,
                                   config.features.block_rows)
        write_tsr(grid, layout.trait_map(trait))
        if stderr is None:
            logger.warning(f"{model.method.value} has no predictive dispersion; "
                           f"{layout.stderr_map(trait).name} is all nodata")
            stderr = RasterGrid.from_masked(grid.geometry, np.full(grid.shape, np.nan),
                                            band_id=f"{trait}_stderr")
        write_tsr(stderr, layout.stderr_map(trait))
    return True


def run_evaluate(config: PipelineConfig, layout: RunLayout) -> bool:
    section = config.evaluate
    if not section.enabled:
        return False
    for trait in section.traits:
        document = compare_methods(str(layout.cwm), trait, [m.value for m in section.methods],
                                   section.realizations, section.fractions, config.seed,
                                   config.n_jobs)
        write_report(document, layout.comparison(trait), "method_comparison")
    return True


def run_report_stage(config: PipelineConfig, layout: RunLayout) -> bool:
    if not config.report.enabled:
        return False
    emit_report(layout.root, config.report.bin_deg)
    return True


STAGE_RUNNERS: Dict[str, Callable[[PipelineConfig, RunLayout], bool]] = {
    "gapfill": run_gapfill, "features": run_features, "classify": run_classify,
    "cwm": run_cwm, "train": run_train, "predict": run_predict, "evaluate": run_evaluate,
    "report": run_report_stage,
}


def run_pipeline(config: PipelineConfig, run_dir: PathLike) -> Manifest:
    """Run every stage into ``run_dir`` and return the complete manifest.

    Each stage directory is emptied before its stage runs.

    Raises:
        StageError: If a stage fails; the partial manifest has been written.
    """
    layout = RunLayout(Path(run_dir))
    layout.root.mkdir(parents=True, exist_ok=True)
    dump_config(config, layout.config)
    manifest = Manifest(packages=package_versions(), seed=config.seed, n_jobs=config.n_jobs,
                        config_hash=config.section_hash(""))
    logger.info(f"Pipeline run in {layout.root} (seed {config.seed}, n_jobs {config.n_jobs})")

    for stage in STAGES:
        stage_dir = layout.stage_dir(stage)
        if stage_dir.exists():
            shutil.rmtree(stage_dir)
        stage_dir.mkdir(parents=True)
        parameters_hash = config.section_hash(STAGE_SECTIONS[stage])
        timer = StageTimer(stage, logger)
        try:
            with timer:
                ran = STAGE_RUNNERS[stage](config, layout)
        except (ValueError, RuntimeError, OSError) as e:
            manifest.stages.append(StageRecord(
                name=stage, status="failed", parameters_hash=parameters_hash,
                seconds=timer.elapsed, outputs=hash_outputs(stage_dir, layout.root),
                error=f"{type(e).__name__}: {e}"))
            manifest.failed_stage = stage
            write_manifest(manifest, layout.manifest)
            raise StageError(stage, manifest, e) from e
        manifest.stages.append(StageRecord(
            name=stage, status="ok" if ran else "skipped", parameters_hash=parameters_hash,
            seconds=timer.elapsed, outputs=hash_outputs(stage_dir, layout.root)))
        write_manifest(manifest, layout.manifest)

    manifest.complete = True
    write_manifest(manifest, layout.manifest)
    total = sum(s.seconds for s in manifest.stages)
    logger.info(f"Pipeline finished in {total:.2f}s with {len(manifest.output_paths())} outputs")
    return manifest


class RunProcessor(StageProcessor):
    """Processor for a full pipeline run."""

    stage_name = "run"
    handled_errors = (StageError, ConfigError)

    def get_description(self) -> str:
        return "Run every pipeline stage from a YAML config into a run directory"

    def add_arguments(self, parser) -> None:
        parser.add_argument("--config", required=True, help="Pipeline YAML config")
        parser.add_argument("--out", required=True, help="Run directory")

    def execute(self, args: argparse.Namespace) -> None:
        run_pipeline(load_config(args.config), args.out)


class VerifyProcessor(StageProcessor):
    """Processor checking a run directory against its manifest."""

    stage_name = "verify"
    handled_errors = (ManifestError,)

    def get_description(self) -> str:
        return "Recompute the output hashes of a run and compare them with its manifest"

    def add_arguments(self, parser) -> None:
        parser.add_argument("--run", required=True, help="Run directory")

    def execute(self, args: argparse.Namespace) -> None:
        problems = verify_manifest(args.run)
        for problem in problems:
            logger.error(problem)
        if problems:
            raise ManifestError(f"{len(problems)} outputs do not match the manifest")


def main() -> int:
    """Run the pipeline.

    Returns:
        Exit code (0 for success, non-zero for failure).
    """
    return RunProcessor().run()


def verify_main() -> int:
    return VerifyProcessor().run()


__all__ = [
    "STAGES", "RunProcessor", "StageError", "VerifyProcessor", "main", "records_path",
    "run_pipeline", "verify_main",
]


if __name__ == "__main__":
    sys.exit(main())
