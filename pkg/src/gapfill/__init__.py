#!/usr/bin/env python3
"""
Per-trait gap filling of the trait table with surrogate-split forests.

Each trait is imputed from taxonomy, categorical traits, climate and the other
four traits. Hyperparameters are chosen by k-fold cross-validation over the
observed cells; the best grid point is refitted on all observed cells and
predicts the missing ones. Traits are filled sequentially, so later traits use
earlier imputed columns as predictors.
"""

import argparse
import hashlib
import itertools
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from gapfill.metrics import UndefinedCorrelationError, compute_metrics
from logging_utils import get_logger
from stage_processor import StageProcessor
from surrogate_forest import (
    ColumnKind,
    ColumnSchema,
    ColumnSpec,
    EnsembleMode,
    ForestError,
    ForestParams,
    ImportanceEntry,
    fit_forest,
    importance_entries,
    predict_forest_batch,
)
from trait_table import (
    BIOCLIM_COLUMNS,
    CATEGORICAL_PREDICTORS,
    TRAITS,
    Trait,
    TraitTable,
    TraitTableError,
    drop_excluded_groups,
    load_trait_table,
    remove_outliers,
    save_trait_table,
    trait_values,
)
from validate_report import ReportValidationError, write_report

logger = get_logger("traitscale.gapfill")

DEFAULT_FOLDS = 10
IMPORTANCE_TOP = 5


class GapfillError(ValueError):
    """Raised when a trait cannot be gap-filled."""


class Provenance(str, Enum):
    OBSERVED = "observed"
    IMPUTED = "imputed"
    MISSING = "missing"


class GridPoint(BaseModel):
    """One forest hyperparameter setting."""
    model_config = ConfigDict(frozen=True)

    n_trees: int = Field(..., ge=1, description="Number of trees")
    learning_rate: float = Field(..., gt=0.0, le=1.0, description="Boosting shrinkage")
    max_splits: int = Field(..., ge=0, description="Maximum branch nodes per tree")

    def forest_params(self, mode: EnsembleMode) -> ForestParams:
        return ForestParams(n_trees=self.n_trees, max_splits=self.max_splits,
                            learning_rate=self.learning_rate, mode=mode)


@dataclass(frozen=True)
class HyperparameterGrid:
    n_trees: Tuple[int, ...] = (50, 100, 200)
    learning_rate: Tuple[float, ...] = (0.05, 0.1, 0.3)
    max_splits: Tuple[int, ...] = (15, 63, 255)
    mode: EnsembleMode = EnsembleMode.BOOSTED

    def points(self) -> List[GridPoint]:
        """Grid points in declaration order; bagged grids ignore the learning rate.

        Raises:
            GapfillError: If an axis is empty or holds an invalid value.
        """
        if not (self.n_trees and self.learning_rate and self.max_splits):
            raise GapfillError("degenerate grid: every axis needs at least one value")
        rates = self.learning_rate if self.mode is EnsembleMode.BOOSTED else self.learning_rate[:1]
        try:
            return [GridPoint(n_trees=n, learning_rate=lr, max_splits=s)
                    for n, lr, s in itertools.product(self.n_trees, rates, self.max_splits)]
        except ValueError as e:
            raise GapfillError(f"degenerate grid: {e}") from None


DEFAULT_GRID = HyperparameterGrid()


class FoldMetrics(BaseModel):
    fold: int = Field(..., ge=0)
    n: int = Field(..., ge=0)
    me: Optional[float] = None
    rmse: Optional[float] = Field(None, ge=0.0)
    r: Optional[float] = Field(None, ge=-1.0, le=1.0)


class GapfillReport(BaseModel):
    """Cross-validated accuracy of one trait's imputation model."""
    trait: Trait = Field(..., description="Imputed trait")
    me: float = Field(..., description="Mean error of out-of-fold predictions (trait units)")
    rmse: float = Field(..., ge=0.0, description="Root-mean-square error (trait units)")
    r: Optional[float] = Field(None, ge=-1.0, le=1.0,
                               description="Pearson correlation; None when undefined")
    n_samples: int = Field(..., ge=0, description="Observed cells before imputation")
    missing_fraction: float = Field(..., ge=0.0, le=1.0,
                                    description="Fraction of records missing the trait")
    mean_value: float = Field(..., description="Mean of the observed values")
    n_imputed: int = Field(0, ge=0, description="Cells filled by the refitted model")
    chosen_params: GridPoint = Field(..., description="Grid point with the lowest CV RMSE")
    mode: EnsembleMode = Field(EnsembleMode.BOOSTED, description="Ensemble mode")
    folds: int = Field(..., ge=2)
    seed: int
    n_jobs: int = Field(1, ge=1)
    fold_metrics: List[FoldMetrics] = Field(default_factory=list)
    importance: List[ImportanceEntry] = Field(default_factory=list,
                                              description="Top predictors of the refitted model")

    @model_validator(mode="after")
    def _error_bounds_bias(self) -> "GapfillReport":
        if self.rmse < abs(self.me) - 1e-12:
            raise ValueError(f"rmse {self.rmse} is smaller than |me| {abs(self.me)}")
        return self

    def table_row(self) -> Dict[str, Union[str, float, int, None]]:
        return {
            "Trait": self.trait.value.upper(),
            "ME": self.me,
            "RMSE": self.rmse,
            "R": self.r,
            "Samples": self.n_samples,
            "Missing %": round(100.0 * self.missing_fraction, 2),
            "Mean value": self.mean_value,
        }


@dataclass(frozen=True)
class ImputedTable:
    """A trait table plus the cells that were filled by imputation."""
    table: TraitTable
    imputed: FrozenSet[Tuple[str, Trait]] = frozenset()

    def provenance(self, record_id: str, trait: Trait) -> Provenance:
        if (record_id, trait) in self.imputed:
            return Provenance.IMPUTED
        if self.table.get(record_id).trait(trait) is None:
            return Provenance.MISSING
        return Provenance.OBSERVED

    def provenance_frame(self) -> pd.DataFrame:
        rows = [{"record_id": r.record_id,
                 **{t.value: self.provenance(r.record_id, t).value for t in TRAITS}}
                for r in self.table.records]
        return pd.DataFrame(rows, columns=["record_id"] + [t.value for t in TRAITS])


def write_provenance(imputed: ImputedTable, path: Union[str, Path]) -> None:
    imputed.provenance_frame().to_csv(path, index=False, encoding="utf-8", lineterminator="\n")


def read_provenance(table: TraitTable, path: Union[str, Path]) -> ImputedTable:
    """Rebuild an ``ImputedTable`` from a table and its provenance CSV."""
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    imputed = set()
    for row in frame.itertuples(index=False):
        cells = row._asdict()
        for trait in TRAITS:
            if cells[trait.value] == Provenance.IMPUTED.value:
                imputed.add((cells["record_id"], trait))
    return ImputedTable(table, frozenset(imputed))


def predictor_matrix(table: TraitTable, target: Trait) -> Tuple[np.ndarray, ColumnSchema]:
    """Predictors for ``target`` following the table's column schema.

    Categorical columns are coded against their sorted levels, so the coding
    does not depend on record order. Unknown leaf types and phenologies are
    treated as missing.
    """
    columns = [c for c in table.column_schema if c != target.value]
    specs: List[ColumnSpec] = []
    data: List[np.ndarray] = []
    trait_names = {t.value: t for t in TRAITS}
    for column in columns:
        if column in CATEGORICAL_PREDICTORS:
            raw = [getattr(r, column) for r in table.records]
            values = [v.value if isinstance(v, Enum) else v for v in raw]
            values = [None if v in ("", "unknown") else v for v in values]
            categorical = pd.Categorical(values)
            codes = categorical.codes.astype(float)
            codes[codes < 0] = np.nan
            specs.append(ColumnSpec(column, ColumnKind.CATEGORICAL,
                                    tuple(str(c) for c in categorical.categories)))
            data.append(codes)
        elif column in BIOCLIM_COLUMNS:
            index = BIOCLIM_COLUMNS.index(column)
            specs.append(ColumnSpec(column))
            data.append(np.array([np.nan if r.climate[index] is None else r.climate[index]
                                  for r in table.records], dtype=float))
        elif column in trait_names:
            specs.append(ColumnSpec(column))
            data.append(trait_values(table, trait_names[column]))
        else:
            raise GapfillError(f"unknown predictor column {column!r}")
    X = np.column_stack(data) if data else np.zeros((len(table), 0))
    return X, ColumnSchema(tuple(specs))


def assign_folds(record_ids: Sequence[str], folds: int, seed: int) -> np.ndarray:
    """Balanced fold index per record, keyed by a hash of record id and seed."""
    keys = [hashlib.sha256(f"{seed}:{rid}".encode("utf-8")).hexdigest() for rid in record_ids]
    order = sorted(range(len(record_ids)), key=lambda i: (keys[i], record_ids[i]))
    fold = np.empty(len(record_ids), dtype=int)
    fold[order] = np.arange(len(record_ids)) % folds
    return fold


def _seed(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=key)


def _fold_metrics(fold: int, predicted: np.ndarray, observed: np.ndarray) -> FoldMetrics:
    if predicted.size == 0:
        return FoldMetrics(fold=fold, n=0)
    if predicted.size == 1:
        diff = float(predicted[0] - observed[0])
        return FoldMetrics(fold=fold, n=1, me=diff, rmse=abs(diff))
    try:
        me, rmse, r = compute_metrics(predicted, observed)
    except UndefinedCorrelationError as e:
        me, rmse, r = e.me, e.rmse, None
    return FoldMetrics(fold=fold, n=int(predicted.size), me=me, rmse=rmse, r=r)


def _map_jobs(func, jobs: Sequence, n_jobs: int) -> List:
    if n_jobs > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(func, jobs))
    return [func(job) for job in jobs]


def gapfill_trait(table: TraitTable, trait: Trait, grid: HyperparameterGrid = DEFAULT_GRID,
                  folds: int = DEFAULT_FOLDS, seed: int = 0, n_jobs: int = 1
                  ) -> Tuple[ImputedTable, GapfillReport]:
    """Impute the missing cells of one trait.

    Args:
        table: Input table; its other trait columns serve as predictors.
        trait: Trait to fill.
        grid: Hyperparameter grid searched by cross-validation.
        folds: Number of CV folds.
        seed: Seed for fold assignment and forest randomness.
        n_jobs: Threads used for the (grid point, fold) work units.

    Returns:
        The table with this trait filled and the cross-validation report.

    Raises:
        GapfillError: Too few observed values or a degenerate grid.
    """
    if folds < 2:
        raise GapfillError(f"need at least 2 folds, got {folds}")
    points = grid.points()

    order = sorted(range(len(table)), key=lambda i: table.records[i].record_id)
    X_all, schema = predictor_matrix(table, trait)
    X = X_all[order]
    y = trait_values(table, trait)[order]
    observed = np.isfinite(y)
    n_obs = int(observed.sum())
    if n_obs < 2 * folds:
        raise GapfillError(f"{trait.value}: {n_obs} observed values, need at least {2 * folds}")
    missing_fraction = 1.0 - n_obs / len(table)
    logger.info(f"Gap-filling {trait.value}: {n_obs} observed, {len(table) - n_obs} missing "
                f"({100 * missing_fraction:.1f}%), {len(points)} grid points x {folds} folds")

    X_obs, y_obs = X[observed], y[observed]
    obs_ids = [table.records[order[i]].record_id for i in np.flatnonzero(observed)]
    fold_of = assign_folds(obs_ids, folds, seed)
    trait_key = TRAITS.index(trait)

    def cross_validate(job: Tuple[int, int]) -> np.ndarray:
        g, f = job
        train = fold_of != f
        model = fit_forest(X_obs[train], y_obs[train], points[g].forest_params(grid.mode),
                           schema, seed=_seed(seed, trait_key, g, f))
        return predict_forest_batch(model, X_obs[~train])[0]

    jobs = [(g, f) for g in range(len(points)) for f in range(folds)]
    try:
        results = _map_jobs(cross_validate, jobs, n_jobs)
    except ForestError as e:
        raise GapfillError(f"{trait.value}: {e}") from e
    out_of_fold = np.empty((len(points), n_obs))
    for (g, f), predicted in zip(jobs, results):
        out_of_fold[g, fold_of == f] = predicted

    cv_rmse = np.sqrt(np.mean((out_of_fold - y_obs) ** 2, axis=1))
    best = int(np.argmin(cv_rmse))
    for g, point in enumerate(points):
        logger.debug(f"{trait.value} {point.model_dump()}: CV RMSE {cv_rmse[g]:.4g}")
    chosen = points[best]
    pooled = out_of_fold[best]
    try:
        me, rmse, r = compute_metrics(pooled, y_obs)
    except UndefinedCorrelationError as e:
        logger.warning(f"{trait.value}: CV correlation undefined (constant predictions or values)")
        me, rmse, r = e.me, e.rmse, None
    fold_metrics = [_fold_metrics(f, pooled[fold_of == f], y_obs[fold_of == f])
                    for f in range(folds)]

    model = fit_forest(X_obs, y_obs, chosen.forest_params(grid.mode), schema,
                       seed=_seed(seed, trait_key, len(points), 0))
    records = list(table.records)
    imputed = set()
    missing_rows = np.flatnonzero(~observed)
    if missing_rows.size:
        predicted = predict_forest_batch(model, X[missing_rows])[0]
        # Boosted sums can leave the trait's valid range; keep imputations within observed range.
        predicted = np.clip(predicted, y_obs.min(), y_obs.max())
        for row, value in zip(missing_rows, predicted):
            index = order[row]
            records[index] = records[index].with_trait(trait, float(value))
            imputed.add((records[index].record_id, trait))

    report = GapfillReport(
        trait=trait, me=me, rmse=rmse, r=r, n_samples=n_obs,
        missing_fraction=missing_fraction, mean_value=float(y_obs.mean()),
        n_imputed=len(imputed), chosen_params=chosen, mode=grid.mode, folds=folds,
        seed=seed, n_jobs=n_jobs, fold_metrics=fold_metrics,
        importance=importance_entries(model, IMPORTANCE_TOP),
    )
    logger.info(f"{trait.value}: chose {chosen.model_dump()}, CV ME {me:.4g} RMSE {rmse:.4g} "
                f"R {'undefined' if r is None else format(r, '.3f')}; imputed {len(imputed)} cells")
    return ImputedTable(table.with_records(records), frozenset(imputed)), report


def gapfill_all(table: TraitTable, grid: HyperparameterGrid = DEFAULT_GRID,
                folds: int = DEFAULT_FOLDS, seed: int = 0, n_jobs: int = 1,
                traits: Sequence[Trait] = TRAITS) -> Tuple[ImputedTable, List[GapfillReport]]:
    """Fill every trait in ``traits`` order, feeding imputed columns forward.

    The default order (SLA, LDMC, LNC, LPC, LNPR) follows decreasing data
    availability. Reports are returned in imputation order.
    """
    current = ImputedTable(table)
    reports: List[GapfillReport] = []
    for trait in traits:
        partial, report = gapfill_trait(current.table, trait, grid, folds, seed, n_jobs)
        current = ImputedTable(partial.table, current.imputed | partial.imputed)
        reports.append(report)
    return current, reports


def gapfill_document(reports: Sequence[GapfillReport], grid: HyperparameterGrid
                     ) -> Dict:
    """JSON document holding every trait report and the summary table."""
    return {
        "reports": [r.model_dump(mode="json") for r in reports],
        "summary_table": [r.table_row() for r in reports],
        "grid": {
            "n_trees": list(grid.n_trees),
            "learning_rate": list(grid.learning_rate),
            "max_splits": list(grid.max_splits),
            "mode": grid.mode.value,
        },
    }


class GapfillProcessor(StageProcessor):
    """Processor for the gapfill stage."""

    stage_name = "gapfill"
    handled_errors = (GapfillError, TraitTableError, ReportValidationError)

    def get_description(self) -> str:
        return "Impute missing trait cells with cross-validated surrogate forests"

    def add_arguments(self, parser) -> None:
        parser.add_argument("--in", dest="input", required=True, help="Trait table CSV")
        parser.add_argument("--out", required=True, help="Imputed trait table CSV")
        parser.add_argument("--report", required=True, help="Gap-fill report JSON")
        parser.add_argument("--provenance", help="Provenance CSV (default: <out>_provenance.csv)")
        parser.add_argument("--folds", type=int, default=DEFAULT_FOLDS,
                            help=f"Cross-validation folds (default: {DEFAULT_FOLDS})")
        parser.add_argument("--n-trees", type=int, nargs="+", default=list(DEFAULT_GRID.n_trees))
        parser.add_argument("--learning-rate", type=float, nargs="+",
                            default=list(DEFAULT_GRID.learning_rate))
        parser.add_argument("--max-splits", type=int, nargs="+",
                            default=list(DEFAULT_GRID.max_splits))
        parser.add_argument("--mode", choices=[m.value for m in EnsembleMode],
                            default=DEFAULT_GRID.mode.value)
        parser.add_argument("--outlier-k", type=float, default=1.5,
                            help="Species outlier factor (default: 1.5)")
        parser.add_argument("--no-clean", action="store_true",
                            help="Skip growth-form exclusion and outlier removal")

    def execute(self, args: argparse.Namespace) -> None:
        table = load_trait_table(args.input)
        if not args.no_clean:
            table, _ = remove_outliers(drop_excluded_groups(table), args.outlier_k)
        grid = HyperparameterGrid(tuple(args.n_trees), tuple(args.learning_rate),
                                  tuple(args.max_splits), EnsembleMode(args.mode))
        imputed, reports = gapfill_all(table, grid, args.folds, args.seed, args.n_jobs)
        save_trait_table(imputed.table, args.out)
        provenance = args.provenance or str(Path(args.out).with_suffix("")) + "_provenance.csv"
        write_provenance(imputed, provenance)
        write_report(gapfill_document(reports, grid), args.report, "gapfill_report")


def main() -> int:
    """Run the gapfill stage.

    Returns:
        Exit code (0 for success, non-zero for failure).
    """
    return GapfillProcessor().run()


if __name__ == "__main__":
    sys.exit(main())
