#!/usr/bin/env python3
"""
Land-cover downscaling: train a PFT classifier on fine features against a
coarse reference map, classify the fine grid and aggregate the classes into
per-coarse-pixel PFT abundances.
"""

import argparse
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from logging_utils import get_logger
from pft_downscale.accuracy import (
    AccuracyAssessment,
    ClassificationError,
    ConfusionMatrix,
    confusion_and_kappa,
)
from raster_features import (
    DEFAULT_BLOCK_ROWS,
    FeatureRaster,
    GeometryMismatchError,
    GridGeometry,
    RasterError,
    RasterGrid,
    block_mean,
    map_row_blocks,
    mode_composite,
    read_feature_raster,
    read_tsr,
    read_tsr_bands,
    require_same_geometry,
    write_tsr,
    write_tsr_bands,
)
from stage_processor import StageProcessor
from surrogate_forest import (
    ColumnSchema,
    EnsembleMode,
    ForestError,
    ForestModel,
    ForestParams,
    ImportanceEntry,
    Task,
    fit_forest,
    importance_entries,
    predict_forest_batch,
    save_forest,
)
from trait_table import CLASS_CODES, VEGETATED_PFTS, PftClass
from validate_report import ReportValidationError, write_report

logger = get_logger("traitscale.pft")

PathLike = Union[str, Path]

DEFAULT_PER_CLASS = 2000
DEFAULT_QUALITY_THRESHOLD = 0.85
IMPORTANCE_TOP = 10
DEFAULT_CLASSIFIER_PARAMS = ForestParams(n_trees=100, max_splits=255, task=Task.CLASSIFICATION,
                                         mode=EnsembleMode.BAGGED, min_node_size=1)


@dataclass(frozen=True, eq=False)
class TrainingSamples:
    """Reference pixels drawn for training, as flat row-major indices."""
    geometry: GridGeometry
    pixels: np.ndarray
    labels: np.ndarray
    shortfalls: Dict[str, int] = field(default_factory=dict)
    """Per class, how many samples short of ``per_class`` the draw came out."""

    def counts(self) -> Dict[str, int]:
        return {c.name: int((self.labels == int(c)).sum()) for c in PftClass}


def select_training_samples(reference: RasterGrid, quality: RasterGrid,
                            per_class: int = DEFAULT_PER_CLASS,
                            threshold: float = DEFAULT_QUALITY_THRESHOLD,
                            seed: int = 0,
                            classes: Sequence[PftClass] = tuple(PftClass)) -> TrainingSamples:
    """Uniform random sample, without replacement, of reliable reference pixels.

    A pixel qualifies when its quality exceeds ``threshold``. Classes with fewer
    qualifying pixels than ``per_class`` contribute all they have and are
    recorded as shortfalls.

    Raises:
        GeometryMismatchError: If reference and quality differ in geometry.
        ClassificationError: If ``per_class`` is below 1.
    """
    if per_class < 1:
        raise ClassificationError(f"per_class must be >= 1, got {per_class}")
    geometry = require_same_geometry([reference, quality])
    ref = reference.values.ravel()
    reliable = (reference.valid & quality.valid).ravel() & (quality.values.ravel() > threshold)
    rng = np.random.default_rng(seed)

    pixels, labels, shortfalls = [], [], {}
    for pft in classes:
        candidates = np.flatnonzero(reliable & (ref == int(pft)))
        take = min(per_class, candidates.size)
        if take < per_class:
            shortfalls[pft.name] = per_class - take
            logger.warning(f"{pft.name}: {candidates.size} qualifying pixels, wanted {per_class}")
        chosen = np.sort(rng.choice(candidates, size=take, replace=False)) if take else candidates
        pixels.append(chosen)
        labels.append(np.full(take, int(pft)))
    pixels = np.concatenate(pixels)
    labels = np.concatenate(labels)
    logger.info(f"Selected {pixels.size} training pixels (threshold {threshold})")
    return TrainingSamples(geometry, pixels, labels, shortfalls)


@dataclass(frozen=True, eq=False)
class PftClassifier:
    """A trained classifier with its held-out validation predictions."""
    model: ForestModel
    feature_names: Tuple[str, ...]
    train_index: np.ndarray
    validation_index: np.ndarray
    validation_reference: np.ndarray
    validation_predicted: np.ndarray

    def validation_matrix(self) -> ConfusionMatrix:
        if self.validation_reference.size == 0:
            raise ClassificationError("no validation samples")
        cm, _, _ = confusion_and_kappa(self.validation_reference, self.validation_predicted)
        return cm


def stratified_halves(labels: np.ndarray, rng: np.random.Generator
                      ) -> Tuple[np.ndarray, np.ndarray]:
    """Per-class random split into a training half and a validation half.

    Odd class counts give the extra sample to training.
    """
    train, validation = [], []
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        n_val = members.size // 2
        validation.append(members[:n_val])
        train.append(members[n_val:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(validation))


def train_classifier(X: np.ndarray, labels: Sequence[int], feature_names: Sequence[str],
                     params: ForestParams = DEFAULT_CLASSIFIER_PARAMS,
                     seed: int = 0) -> PftClassifier:
    """Fit a bagged classification forest on one stratified half of the samples.

    Raises:
        ClassificationError: If fewer than two classes are present.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels).astype(int)
    if X.shape[0] != labels.size:
        raise ClassificationError(f"{X.shape[0]} feature rows for {labels.size} labels")
    if np.unique(labels).size < 2:
        raise ClassificationError("classification needs at least two classes")
    if params.task is not Task.CLASSIFICATION:
        raise ClassificationError("classifier parameters must use the classification task")

    split_seed, forest_seed = np.random.SeedSequence(seed).spawn(2)
    train, validation = stratified_halves(labels, np.random.default_rng(split_seed))
    logger.info(f"Training classifier on {train.size} samples, validating on {validation.size}")
    try:
        model = fit_forest(X[train], labels[train], params, ColumnSchema.numeric(feature_names),
                           forest_seed)
    except ForestError as e:
        raise ClassificationError(str(e)) from None
    predicted = (predict_forest_batch(model, X[validation])[0].astype(int)
                 if validation.size else np.zeros(0, dtype=int))
    return PftClassifier(model, tuple(feature_names), train, validation, labels[validation],
                         predicted)


def coarsening_factor(fine: GridGeometry, coarse: GridGeometry) -> int:
    """Integer number of fine pixels per coarse pixel side.

    Raises:
        GeometryMismatchError: If the pixel size ratio is not an integer or the
            coarse grid is not the aligned block grid of the fine one.
    """
    ratio = coarse.pixel_size / fine.pixel_size
    factor = int(round(ratio))
    if factor < 1 or not math.isclose(ratio, factor, rel_tol=1e-9):
        raise GeometryMismatchError(f"coarse/fine pixel ratio {ratio} is not an integer")
    try:
        expected = fine.coarsened(factor)
    except RasterError as e:
        raise GeometryMismatchError(str(e)) from None
    tol = 1e-9 * fine.pixel_size
    if not (expected.shape == coarse.shape and expected.crs_tag == coarse.crs_tag
            and math.isclose(expected.origin_x, coarse.origin_x, abs_tol=tol)
            and math.isclose(expected.origin_y, coarse.origin_y, abs_tol=tol)):
        raise GeometryMismatchError("fine and coarse grids are not aligned")
    return factor


def training_features(features: FeatureRaster, geometry: GridGeometry) -> FeatureRaster:
    """Feature raster on the reference grid, block-averaging finer features."""
    if features.geometry == geometry:
        return features
    factor = coarsening_factor(features.geometry, geometry)
    coarse = {}
    for name, grid in features.bands.items():
        averaged = block_mean(grid, factor)
        coarse[name] = RasterGrid(geometry, averaged.values, averaged.nodata, name)
    return FeatureRaster(coarse, features.reflectance, features.lst_supplied,
                         features.elevation_supplied)


def classify_map(classifier: PftClassifier, features: FeatureRaster,
                 mask: Optional[RasterGrid] = None, n_jobs: int = 1,
                 block_rows: int = DEFAULT_BLOCK_ROWS) -> RasterGrid:
    """Class code per pixel.

    Pixels with some missing features are routed through surrogate splits;
    pixels with every feature missing, or flagged non-zero in ``mask``, are
    nodata.

    Raises:
        ClassificationError: If a feature used in training is absent.
    """
    missing = [n for n in classifier.feature_names if n not in features.bands]
    if missing:
        raise ClassificationError(f"feature raster lacks trained bands: {missing}")
    geometry = features.geometry
    X = features.matrix(classifier.feature_names)
    excluded = np.zeros(geometry.width * geometry.height, dtype=bool)
    if mask is not None:
        if mask.geometry != geometry:
            raise GeometryMismatchError("mask raster is not on the feature grid")
        excluded = (mask.valid & (mask.values != 0)).ravel()
    width = geometry.width

    def rows(start: int, stop: int) -> np.ndarray:
        block = X[start * width:stop * width]
        out = np.full(block.shape[0], np.nan)
        usable = ~np.isnan(block).all(axis=1) & ~excluded[start * width:stop * width]
        if usable.any():
            out[usable] = predict_forest_batch(classifier.model, block[usable])[0]
        return out.reshape(stop - start, width)

    classes = map_row_blocks(rows, geometry.height, block_rows, n_jobs)
    logger.info(f"Classified {int(np.isfinite(classes).sum())} of {classes.size} pixels")
    return RasterGrid.from_masked(geometry, classes, band_id="pft")


@dataclass(frozen=True, eq=False)
class AbundanceGrid:
    """Per coarse pixel, the fraction of each PFT; NaN where no fine pixel was valid."""
    geometry: GridGeometry
    fractions: np.ndarray
    classes: Tuple[PftClass, ...] = tuple(PftClass)

    def __post_init__(self):
        fractions = np.asarray(self.fractions, dtype=float)
        if fractions.shape != (len(self.classes),) + self.geometry.shape:
            raise ClassificationError(f"fractions of shape {fractions.shape} do not match "
                                      f"{len(self.classes)} classes on {self.geometry.shape}")
        object.__setattr__(self, "fractions", fractions)

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.fractions).all(axis=0)

    def fraction(self, pft: PftClass) -> np.ndarray:
        return self.fractions[self.classes.index(PftClass(pft))]

    def at(self, row: int, col: int) -> Dict[PftClass, float]:
        return {c: float(self.fractions[i, row, col]) for i, c in enumerate(self.classes)}

    def vegetated_fraction(self) -> np.ndarray:
        return sum(self.fraction(p) for p in VEGETATED_PFTS if p in self.classes)

    def to_grids(self, nodata: float = -9999.0) -> List[RasterGrid]:
        return [RasterGrid.from_masked(self.geometry, self.fractions[i], nodata, c.name)
                for i, c in enumerate(self.classes)]


def aggregate_abundance(fine_classes: RasterGrid, coarse_geometry: GridGeometry) -> AbundanceGrid:
    """Fraction of each PFT among the valid fine pixels of every coarse cell.

    Raises:
        GeometryMismatchError: If the pixel size ratio is not an integer or the
            grids are not aligned.
    """
    factor = coarsening_factor(fine_classes.geometry, coarse_geometry)
    h, w = coarse_geometry.shape
    values = fine_classes.values.reshape(h, factor, w, factor)
    valid = fine_classes.valid.reshape(h, factor, w, factor)
    counts = np.stack([(valid & (values == int(c))).sum(axis=(1, 3)) for c in PftClass])
    total = counts.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        fractions = np.where(total > 0, counts / total, np.nan)
    return AbundanceGrid(coarse_geometry, fractions)


def dominant_pft(abundance: AbundanceGrid) -> RasterGrid:
    """Class with the largest fraction per coarse pixel, ties to the lowest code."""
    filled = np.where(np.isfinite(abundance.fractions), abundance.fractions, -1.0)
    codes = np.array([int(c) for c in abundance.classes], dtype=float)
    dominant = np.where(abundance.valid, codes[np.argmax(filled, axis=0)], np.nan)
    return RasterGrid.from_masked(abundance.geometry, dominant, band_id="dominant_pft")


def write_abundance(abundance: AbundanceGrid, path: PathLike) -> None:
    write_tsr_bands(abundance.to_grids(), path, class_codes=CLASS_CODES)


def read_abundance(path: PathLike) -> AbundanceGrid:
    grids, header = read_tsr_bands(path)
    try:
        classes = tuple(PftClass[g.band_id] for g in grids)
    except KeyError as e:
        raise RasterError(f"{path}: unknown abundance band {e}") from None
    return AbundanceGrid(header.geometry, np.stack([g.masked() for g in grids]), classes)


class ClassificationReport(BaseModel):
    """Accuracy of the downscaled land-cover classification."""
    validation: AccuracyAssessment = Field(
        ..., description="Classifier on the held-out half of the reference samples")
    degraded: Optional[AccuracyAssessment] = Field(
        None, description="Dominant class of the aggregated fine map against the reference, "
                          "on the validation pixels")
    samples_per_class: Dict[str, int]
    shortfalls: Dict[str, int]
    n_train: int = Field(..., ge=0)
    quality_threshold: float
    per_class: int = Field(..., ge=1)
    n_trees: int = Field(..., ge=1)
    seed: int
    n_jobs: int = Field(..., ge=1)
    importance: List[ImportanceEntry] = Field(default_factory=list)


def degraded_assessment(abundance: AbundanceGrid, reference: RasterGrid,
                        pixels: np.ndarray) -> Optional[AccuracyAssessment]:
    """Compare the dominant aggregated class with the reference at ``pixels``."""
    dominant = dominant_pft(abundance)
    if dominant.geometry != reference.geometry:
        return None
    pred = dominant.values.ravel()[pixels]
    ref = reference.values.ravel()[pixels]
    keep = dominant.valid.ravel()[pixels]
    if not keep.any():
        return None
    cm, _, _ = confusion_and_kappa(ref[keep], pred[keep])
    return AccuracyAssessment.from_matrix(cm)


class ClassifyProcessor(StageProcessor):
    """Processor for the classify stage."""

    stage_name = "classify"
    handled_errors = (ClassificationError, RasterError, ReportValidationError)

    def get_description(self) -> str:
        return "Downscale a coarse PFT reference map with a fine-resolution classifier"

    def add_arguments(self, parser) -> None:
        parser.add_argument("--features", required=True, help="Fine feature raster directory")
        parser.add_argument("--reference", required=True, nargs="+",
                            help="Coarse reference class TSR(s); several years are reduced "
                                 "to their modal class")
        parser.add_argument("--quality", required=True, help="Reference quality TSR in [0, 1]")
        parser.add_argument("--out", required=True, help="Fine class TSR")
        parser.add_argument("--abundance", required=True, help="Coarse PFT abundance TSR")
        parser.add_argument("--report", required=True, help="Classification report JSON")
        parser.add_argument("--mask", help="Optional exclusion mask TSR (non-zero excluded)")
        parser.add_argument("--model", help="Optional path to save the classifier JSON")
        parser.add_argument("--per-class", type=int, default=DEFAULT_PER_CLASS,
                            help=f"Samples per class (default: {DEFAULT_PER_CLASS})")
        parser.add_argument("--threshold", type=float, default=DEFAULT_QUALITY_THRESHOLD,
                            help=f"Quality threshold (default: {DEFAULT_QUALITY_THRESHOLD})")
        parser.add_argument("--n-trees", type=int, default=DEFAULT_CLASSIFIER_PARAMS.n_trees)

    def execute(self, args: argparse.Namespace) -> None:
        features = read_feature_raster(args.features)
        references = [read_tsr(path) for path in args.reference]
        reference = references[0] if len(references) == 1 else mode_composite(references)
        quality = read_tsr(args.quality)
        mask = read_tsr(args.mask) if args.mask else None
        result = run_classification(features, reference, quality, mask, args.per_class,
                                    args.threshold, args.n_trees, args.seed, args.n_jobs)
        classes, abundance, classifier, report = result
        write_tsr(classes, args.out, class_codes=CLASS_CODES)
        write_abundance(abundance, args.abundance)
        if args.model:
            save_forest(classifier.model, args.model)
        write_report(report.model_dump(mode="json"), args.report, "classification_report")


def run_classification(features: FeatureRaster, reference: RasterGrid, quality: RasterGrid,
                       mask: Optional[RasterGrid] = None, per_class: int = DEFAULT_PER_CLASS,
                       threshold: float = DEFAULT_QUALITY_THRESHOLD,
                       n_trees: int = DEFAULT_CLASSIFIER_PARAMS.n_trees, seed: int = 0,
                       n_jobs: int = 1
                       ) -> Tuple[RasterGrid, AbundanceGrid, PftClassifier, ClassificationReport]:
    """Sample, train, classify the fine grid and aggregate it onto the reference grid."""
    samples = select_training_samples(reference, quality, per_class, threshold, seed)
    coarse = training_features(features, reference.geometry)
    X = coarse.matrix()[samples.pixels]
    params = replace(DEFAULT_CLASSIFIER_PARAMS, n_trees=n_trees, n_jobs=n_jobs)
    classifier = train_classifier(X, samples.labels, coarse.names, params, seed)
    validation = AccuracyAssessment.from_matrix(classifier.validation_matrix())
    logger.info(f"Validation accuracy {validation.overall_accuracy:.4f}, kappa "
                f"{'undefined' if validation.kappa is None else format(validation.kappa, '.4f')}")

    classes = classify_map(classifier, features, mask, n_jobs)
    abundance = aggregate_abundance(classes, reference.geometry)
    report = ClassificationReport(
        validation=validation,
        degraded=degraded_assessment(abundance, reference,
                                     samples.pixels[classifier.validation_index]),
        samples_per_class=samples.counts(), shortfalls=samples.shortfalls,
        n_train=int(classifier.train_index.size), quality_threshold=threshold,
        per_class=per_class, n_trees=n_trees, seed=seed, n_jobs=n_jobs,
        importance=importance_entries(classifier.model, IMPORTANCE_TOP))
    return classes, abundance, classifier, report


def main() -> int:
    """Run the classify stage.

    Returns:
        Exit code (0 for success, non-zero for failure).
    """
    return ClassifyProcessor().run()


if __name__ == "__main__":
    sys.exit(main())
