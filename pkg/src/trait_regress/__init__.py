#!/usr/bin/env python3
"""
Trait regression: five regression methods, their hold-out evaluation protocol
and the spatialization of fitted trait models over feature rasters.

Stages:
    train     fit one method to one trait of a cwm.csv and report hold-out metrics
    predict   apply a trait model to a feature raster, with a standard-error map
    evaluate  compare all methods and their sensitivity to training-set size
"""

import argparse
import sys
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from cwm import CwmError, align_climate, read_climate_rasters, read_cwm_csv
from logging_utils import get_logger
from raster_features import (
    DEFAULT_BLOCK_ROWS,
    FeatureRaster,
    RasterError,
    RasterGrid,
    map_row_blocks,
    read_feature_raster,
    write_tsr,
)
from stage_processor import StageProcessor
from surrogate_forest import ImportanceEntry, importance_entries
from trait_regress.estimators import (
    ESTIMATOR_CLASSES,
    FORMAT_VERSION,
    METHODS,
    ElmRegressor,
    GprRegressor,
    KrrRegressor,
    MethodSpec,
    RegressionMethod,
    RfRegressor,
    RlrRegressor,
    TraitModel,
    fit_method,
    load_trait_model,
    save_trait_model,
    train_trait_model,
)
from trait_regress.evaluation import (
    DEFAULT_CV_FRACTION,
    DEFAULT_REALIZATIONS,
    DEFAULT_ROBUSTNESS_FRACTIONS,
    DistributionStats,
    EvalReport,
    InsufficientSamplesError,
    LatitudeBin,
    RealizationMetrics,
    ResidualStats,
    RobustnessPoint,
    ScatterPoint,
    ScatterStats,
    evaluate_method,
    latitudinal_profile,
    pft_distribution,
    record_latitudinal_profile,
    residuals_by_pft,
    robustness_curve,
    scatter_stats,
    split_realization,
)
from trait_regress.kernel import (
    FactorizationError,
    KernelModel,
    KernelParams,
    ard_kernel,
    fit_gpr,
    fit_krr,
    log_marginal_likelihood,
    spd_factor,
)
from trait_regress.linear import (
    ElmModel,
    LinearModel,
    RankDeficientError,
    RegressionError,
    fit_elm,
    fit_rlr,
)
from trait_table import TRAITS
from validate_report import ReportValidationError, write_report

logger = get_logger("traitscale.regress")

IMPORTANCE_TOP = 7
DISPERSION_METHODS = (RegressionMethod.RF, RegressionMethod.GPR)
TRAIT_NAMES: Tuple[str, ...] = tuple(t.value for t in TRAITS)


def feature_matrix(features: FeatureRaster, names: Sequence[str],
                   climate: Optional[Mapping[str, RasterGrid]] = None) -> np.ndarray:
    """Pixel-by-feature matrix in ``names`` order from feature bands and climate grids.

    Raises:
        RegressionError: If a named feature is in neither source.
    """
    climate = dict(climate or {})
    columns = []
    for name in names:
        if name in features.bands:
            columns.append(features.bands[name].masked().ravel())
        elif name in climate:
            columns.append(climate[name].masked().ravel())
        else:
            raise RegressionError(f"feature {name!r} is not available for prediction")
    return np.column_stack(columns)


def predict_map(model: TraitModel, features: FeatureRaster,
                climate: Optional[Mapping[str, RasterGrid]] = None, n_jobs: int = 1,
                block_rows: int = DEFAULT_BLOCK_ROWS
                ) -> Tuple[RasterGrid, Optional[RasterGrid]]:
    """Trait map and standard-error map of ``model`` over a feature raster.

    Pixels with any missing feature are nodata in both maps. The standard-error
    map is None for methods without a predictive dispersion (RLR, KRR, ELM).
    """
    geometry = features.geometry
    if climate is not None and any(n.startswith("bio") for n in model.feature_names):
        climate = align_climate(climate, geometry, n_jobs)
    matrix = feature_matrix(features, model.feature_names, climate)
    width = geometry.width

    def rows(start: int, stop: int) -> np.ndarray:
        block = matrix[start * width:stop * width]
        out = np.full((block.shape[0], 2), np.nan)
        valid = np.isfinite(block).all(axis=1)
        if valid.any():
            estimate, spread = model.predict(block[valid])
            out[valid, 0] = estimate
            if spread is not None:
                out[valid, 1] = spread
        return out.reshape(stop - start, width, 2)

    values = map_row_blocks(rows, geometry.height, block_rows, n_jobs)
    trait = RasterGrid.from_masked(geometry, values[..., 0], band_id=model.trait)
    stderr = None
    if model.method in DISPERSION_METHODS:
        stderr = RasterGrid.from_masked(geometry, values[..., 1], band_id=f"{model.trait}_stderr")
    logger.info(f"Predicted {model.trait} at {int(trait.valid.sum())} of {trait.values.size} pixels")
    return trait, stderr


class TrainProcessor(StageProcessor):
    """Processor for the train stage."""

    stage_name = "train"
    handled_errors = (RegressionError, CwmError, ReportValidationError)

    def get_description(self) -> str:
        return "Fit a trait model to a CWM table and report its hold-out accuracy"

    def add_arguments(self, parser) -> None:
        parser.add_argument("--cwm", required=True, help="cwm.csv training table")
        parser.add_argument("--method", choices=[m.value for m in RegressionMethod],
                            default=RegressionMethod.RF.value)
        parser.add_argument("--trait", required=True, choices=list(TRAIT_NAMES))
        parser.add_argument("--out", required=True, help="Output model file")
        parser.add_argument("--report", required=True, help="Evaluation report JSON")
        parser.add_argument("--realizations", type=int, default=DEFAULT_REALIZATIONS,
                            help=f"Random hold-out splits (default: {DEFAULT_REALIZATIONS})")
        parser.add_argument("--cv-fraction", type=float, default=DEFAULT_CV_FRACTION,
                            help=f"Training fraction per split (default: {DEFAULT_CV_FRACTION})")

    def execute(self, args: argparse.Namespace) -> None:
        model, report = train_and_evaluate(args.cwm, args.method, args.trait, args.realizations,
                                           args.cv_fraction, args.seed, args.n_jobs)
        save_trait_model(model, args.out)
        write_report(report.model_dump(mode="json"), args.report, "eval_report")


def train_and_evaluate(cwm_path: str, method: str, trait: str,
                       realizations: int = DEFAULT_REALIZATIONS,
                       cv_fraction: float = DEFAULT_CV_FRACTION, seed: int = 0, n_jobs: int = 1
                       ) -> Tuple[TraitModel, EvalReport]:
    """Evaluate ``method`` on one trait of a CWM table, then refit it on every row."""
    training = read_cwm_csv(cwm_path)
    y = training.Y[:, TRAIT_NAMES.index(trait)]
    ids = [str(p) for p in training.pixel_ids]
    report = evaluate_method(method, training.X, y, ids, cv_fraction, realizations, seed, n_jobs,
                             trait, training.feature_names, training.dominant_pft())
    model = train_trait_model(method, trait, training.X, y, training.feature_names, seed, n_jobs)
    if model.method is RegressionMethod.RF:
        report = report.model_copy(
            update={"importance": importance_entries(model.estimator.model_, IMPORTANCE_TOP)})
    return model, report


class PredictProcessor(StageProcessor):
    """Processor for the predict stage."""

    stage_name = "predict"
    handled_errors = (RegressionError, RasterError, CwmError)

    def get_description(self) -> str:
        return "Map a trait over a feature raster with a fitted trait model"

    def add_arguments(self, parser) -> None:
        parser.add_argument("--model", required=True, help="Trait model file from train")
        parser.add_argument("--features", required=True, help="Feature raster directory")
        parser.add_argument("--climate", help="Directory of bio1.tsr ... bio19.tsr")
        parser.add_argument("--out", required=True, help="Output trait TSR")
        parser.add_argument("--stderr", help="Output predictive standard-error TSR")
        parser.add_argument("--block-rows", type=int, default=DEFAULT_BLOCK_ROWS)

    def execute(self, args: argparse.Namespace) -> None:
        model = load_trait_model(args.model)
        features = read_feature_raster(args.features)
        climate = read_climate_rasters(args.climate) if args.climate else None
        trait, stderr = predict_map(model, features, climate, args.n_jobs, args.block_rows)
        write_tsr(trait, args.out)
        if args.stderr:
            if stderr is None:
                logger.warning(f"{model.method.value} has no predictive dispersion; "
                               f"{args.stderr} is all nodata")
                stderr = RasterGrid.from_masked(trait.geometry, np.full(trait.shape, np.nan),
                                                band_id=f"{model.trait}_stderr")
            write_tsr(stderr, args.stderr)


class EvaluateProcessor(StageProcessor):
    """Processor for the evaluate stage."""

    stage_name = "evaluate"
    handled_errors = (RegressionError, CwmError, ReportValidationError)

    def get_description(self) -> str:
        return "Compare the regression methods and their robustness to training-set size"

    def add_arguments(self, parser) -> None:
        parser.add_argument("--cwm", required=True, help="cwm.csv training table")
        parser.add_argument("--trait", required=True, choices=list(TRAIT_NAMES))
        parser.add_argument("--methods", nargs="+", choices=[m.value for m in RegressionMethod],
                            default=[m.value for m in RegressionMethod])
        parser.add_argument("--realizations", type=int, default=DEFAULT_REALIZATIONS)
        parser.add_argument("--fractions", type=float, nargs="*",
                            default=list(DEFAULT_ROBUSTNESS_FRACTIONS),
                            help="Training fractions of the robustness curve")
        parser.add_argument("--out", required=True, help="Method comparison JSON")

    def execute(self, args: argparse.Namespace) -> None:
        document = compare_methods(args.cwm, args.trait, args.methods, args.realizations,
                                   args.fractions, args.seed, args.n_jobs)
        write_report(document, args.out, "method_comparison")


def compare_methods(cwm_path: str, trait: str, methods: Sequence[str],
                    realizations: int = DEFAULT_REALIZATIONS,
                    fractions: Sequence[float] = DEFAULT_ROBUSTNESS_FRACTIONS, seed: int = 0,
                    n_jobs: int = 1) -> Dict:
    """Hold-out metrics and robustness curves of several methods on one trait."""
    training = read_cwm_csv(cwm_path)
    y = training.Y[:, TRAIT_NAMES.index(trait)]
    ids = [str(p) for p in training.pixel_ids]
    rows: List[Dict] = []
    curves: Dict[str, List[Dict]] = {}
    for method in methods:
        report = evaluate_method(method, training.X, y, ids, DEFAULT_CV_FRACTION, realizations,
                                 seed, n_jobs, trait, training.feature_names)
        rows.append(report.table_row())
        curves[method] = [p.model_dump() for p in robustness_curve(
            method, training.X, y, fractions, realizations, seed, n_jobs, ids)]
    return {"trait": trait, "n": len(training), "realizations": realizations, "seed": seed,
            "n_jobs": n_jobs, "methods": rows, "robustness": curves}


def main() -> int:
    """Run the train stage.

    Returns:
        Exit code (0 for success, non-zero for failure).
    """
    return TrainProcessor().run()


def predict_main() -> int:
    return PredictProcessor().run()


def evaluate_main() -> int:
    return EvaluateProcessor().run()


__all__ = [
    "DEFAULT_CV_FRACTION", "DEFAULT_REALIZATIONS", "DEFAULT_ROBUSTNESS_FRACTIONS",
    "DISPERSION_METHODS", "ESTIMATOR_CLASSES", "FORMAT_VERSION", "IMPORTANCE_TOP", "METHODS", "TRAIT_NAMES",
    "DistributionStats", "ElmModel", "ElmRegressor", "EvalReport", "EvaluateProcessor",
    "FactorizationError", "GprRegressor", "ImportanceEntry", "InsufficientSamplesError",
    "KernelModel", "KernelParams", "KrrRegressor", "LatitudeBin", "LinearModel", "MethodSpec",
    "PredictProcessor", "RankDeficientError", "RealizationMetrics", "RegressionError",
    "RegressionMethod", "ResidualStats", "RfRegressor", "RlrRegressor", "RobustnessPoint",
    "ScatterPoint", "ScatterStats", "TrainProcessor", "TraitModel", "ard_kernel",
    "compare_methods", "evaluate_main", "evaluate_method", "feature_matrix", "fit_elm",
    "fit_gpr", "fit_krr", "fit_method", "fit_rlr", "latitudinal_profile", "load_trait_model",
    "log_marginal_likelihood", "main", "pft_distribution", "predict_main", "predict_map",
    "record_latitudinal_profile", "residuals_by_pft", "robustness_curve", "save_trait_model",
    "scatter_stats", "spd_factor", "split_realization", "train_and_evaluate",
    "train_trait_model",
]


if __name__ == "__main__":
    sys.exit(main())
