"""Hold-out evaluation protocol and summary statistics of trait predictions."""

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy import stats

from gapfill.metrics import UndefinedCorrelationError, bias_and_error, compute_metrics
from logging_utils import get_logger
from raster_features import standardize_features
from surrogate_forest import ImportanceEntry
from trait_regress.estimators import RegressionMethod, fit_method
from trait_regress.linear import RegressionError
from trait_table import PftClass, Trait, TraitTable, trait_values

logger = get_logger("traitscale.regress")

DEFAULT_CV_FRACTION = 0.8
DEFAULT_REALIZATIONS = 20
DEFAULT_ROBUSTNESS_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
MIN_SAMPLES = 10
MIN_TRAIN_ROWS = 5


class InsufficientSamplesError(RegressionError):
    """Too few rows for the requested evaluation."""


class RealizationMetrics(BaseModel):
    realization: int = Field(..., ge=0)
    n_train: int = Field(..., ge=1)
    n_test: int = Field(..., ge=1)
    me: float
    rmse: float = Field(..., ge=0)
    r: Optional[float] = Field(None, ge=-1.0, le=1.0)
    hyperparameters: Dict[str, Any] = Field(default_factory=dict)


class ScatterPoint(BaseModel):
    sample_id: str
    observed: float
    predicted: float
    dominant_pft: Optional[str] = None


class EvalReport(BaseModel):
    """Hold-out metrics of one method on one trait over repeated random splits."""
    method: str
    trait: str
    n: int = Field(..., ge=MIN_SAMPLES)
    cv_fraction: float = Field(..., gt=0.0, lt=1.0)
    realizations: int = Field(..., ge=1)
    seed: int
    n_jobs: int = Field(1, ge=1)
    metrics: List[RealizationMetrics]
    me_mean: float
    rmse_mean: float
    rmse_std: float
    r_mean: Optional[float] = None
    r_std: Optional[float] = None
    test_predictions: List[ScatterPoint] = Field(
        default_factory=list, description="Held-out predictions of the first realization")
    importance: List[ImportanceEntry] = Field(default_factory=list)

    def table_row(self) -> Dict[str, Union[str, float, int, None]]:
        return {"method": self.method, "trait": self.trait, "me": self.me_mean,
                "rmse": self.rmse_mean, "r": self.r_mean, "r_std": self.r_std, "n": self.n}


def split_realization(sample_ids: Sequence[str], fraction: float, seed: int,
                      realization: int) -> np.ndarray:
    """Boolean training mask of one random split, keyed by sample id."""
    keys = [hashlib.sha256(f"{seed}:{realization}:{sid}".encode("utf-8")).hexdigest()
            for sid in sample_ids]
    order = sorted(range(len(sample_ids)), key=lambda i: (keys[i], sample_ids[i]))
    n_train = int(round(fraction * len(sample_ids)))
    train = np.zeros(len(sample_ids), dtype=bool)
    train[order[:n_train]] = True
    return train


def _realization_seed(seed: int, realization: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(realization,)).generate_state(1)[0])


def _metrics(predicted: np.ndarray, observed: np.ndarray):
    if predicted.size < 2:
        diff = float(predicted[0] - observed[0])
        return diff, abs(diff), None
    try:
        return compute_metrics(predicted, observed)
    except UndefinedCorrelationError as e:
        return e.me, e.rmse, None


def _std(values: List[float]) -> Optional[float]:
    return float(np.std(values)) if values else None


def evaluate_method(method: Union[str, RegressionMethod], X: np.ndarray, y: np.ndarray,
                    sample_ids: Optional[Sequence[str]] = None,
                    cv_fraction: float = DEFAULT_CV_FRACTION,
                    realizations: int = DEFAULT_REALIZATIONS, seed: int = 0, n_jobs: int = 1,
                    trait: str = "", feature_names: Optional[Sequence[str]] = None,
                    dominant_pft: Optional[Sequence[int]] = None) -> EvalReport:
    """Repeated random hold-out evaluation.

    Each realization trains on ``cv_fraction`` of the rows (hyperparameters by
    inner CV on that part) and scores ME, RMSE and Pearson r on the rest. Splits
    and fits depend on sample ids and ``seed`` only, not on row order.

    Raises:
        InsufficientSamplesError: With fewer than 10 rows, or a split leaving
            fewer than 5 training or no test rows.
    """
    method = RegressionMethod(method)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if n < MIN_SAMPLES:
        raise InsufficientSamplesError(f"need at least {MIN_SAMPLES} samples, got {n}")
    ids = [str(i) for i in (sample_ids if sample_ids is not None else range(n))]
    if len(ids) != n or len(set(ids)) != n:
        raise RegressionError("sample ids must be unique and match the rows")
    order = sorted(range(n), key=lambda i: ids[i])
    X, y, ids = X[order], y[order], [ids[i] for i in order]
    dominant = None if dominant_pft is None else np.asarray(dominant_pft)[order]
    n_train = int(round(cv_fraction * n))
    if n_train < MIN_TRAIN_ROWS or n_train >= n:
        raise InsufficientSamplesError(f"fraction {cv_fraction} of {n} rows leaves {n_train} "
                                       f"training and {n - n_train} test rows")

    def one(realization: int):
        train = split_realization(ids, cv_fraction, seed, realization)
        Xs, feature_stats = standardize_features(X[train])
        estimator, chosen = fit_method(method, Xs, y[train], _realization_seed(seed, realization),
                                       1 if n_jobs > 1 else n_jobs, feature_names=feature_names)
        predicted = np.asarray(estimator.predict(feature_stats.apply(X[~train])), dtype=float)
        me, rmse, r = _metrics(predicted, y[~train])
        row = RealizationMetrics(realization=realization, n_train=int(train.sum()),
                                 n_test=int((~train).sum()), me=me, rmse=rmse, r=r,
                                 hyperparameters=chosen)
        return row, train, predicted

    realization_ids = list(range(realizations))
    if n_jobs > 1 and realizations > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(one, realization_ids))
    else:
        results = [one(r) for r in realization_ids]

    metrics = [row for row, _, _ in results]
    _, first_train, first_predicted = results[0]
    test_rows = np.flatnonzero(~first_train)
    scatter = [ScatterPoint(sample_id=ids[i], observed=float(y[i]), predicted=float(p),
                            dominant_pft=None if dominant is None else PftClass(int(dominant[i])).name)
               for i, p in zip(test_rows, first_predicted)]
    rs = [m.r for m in metrics if m.r is not None]
    report = EvalReport(
        method=method.value, trait=trait, n=n, cv_fraction=cv_fraction,
        realizations=realizations, seed=seed, n_jobs=n_jobs, metrics=metrics,
        me_mean=float(np.mean([m.me for m in metrics])),
        rmse_mean=float(np.mean([m.rmse for m in metrics])),
        rmse_std=float(np.std([m.rmse for m in metrics])),
        r_mean=float(np.mean(rs)) if rs else None, r_std=_std(rs), test_predictions=scatter)
    logger.info(f"{method.value} {trait or 'target'}: R {report.r_mean if rs else 'undefined'} "
                f"+/- {report.r_std}, RMSE {report.rmse_mean:.4g} over {realizations} realizations")
    return report


class RobustnessPoint(BaseModel):
    fraction: float
    n_train: int
    r_mean: Optional[float] = None
    r_std: Optional[float] = None
    rmse_mean: float
    rmse_std: float


def robustness_curve(method: Union[str, RegressionMethod], X: np.ndarray, y: np.ndarray,
                     fractions: Sequence[float] = DEFAULT_ROBUSTNESS_FRACTIONS,
                     realizations: int = DEFAULT_REALIZATIONS, seed: int = 0, n_jobs: int = 1,
                     sample_ids: Optional[Sequence[str]] = None) -> List[RobustnessPoint]:
    """Hold-out R and RMSE as a function of the training fraction.

    Raises:
        InsufficientSamplesError: If any fraction leaves fewer than 5 training rows.
    """
    n = len(y)
    for fraction in fractions:
        if int(round(fraction * n)) < MIN_TRAIN_ROWS:
            raise InsufficientSamplesError(f"fraction {fraction} of {n} rows leaves fewer than "
                                           f"{MIN_TRAIN_ROWS} training rows")
    curve = []
    for fraction in fractions:
        report = evaluate_method(method, X, y, sample_ids, fraction, realizations, seed, n_jobs)
        curve.append(RobustnessPoint(fraction=fraction, n_train=report.metrics[0].n_train,
                                     r_mean=report.r_mean, r_std=report.r_std,
                                     rmse_mean=report.rmse_mean, rmse_std=report.rmse_std))
    return curve


class ResidualStats(BaseModel):
    n: int = Field(..., ge=1)
    me: float
    rmse: float = Field(..., ge=0)
    q25: float
    q50: float
    q75: float


def residuals_by_pft(predictions: Sequence[float], observations: Sequence[float],
                     dominant_pft: Sequence[int]) -> Dict[str, ResidualStats]:
    """ME, RMSE and quartiles of ``prediction - observation`` per dominant PFT."""
    frame = pd.DataFrame({"residual": np.asarray(predictions, dtype=float)
                          - np.asarray(observations, dtype=float),
                          "pft": np.asarray(dominant_pft, dtype=int)})
    result = {}
    for code, group in frame.groupby("pft", sort=True):
        residual = group["residual"].to_numpy()
        q25, q50, q75 = np.quantile(residual, [0.25, 0.5, 0.75])
        result[PftClass(int(code)).name] = ResidualStats(
            n=residual.size, me=float(residual.mean()),
            rmse=math.sqrt(float(np.mean(residual * residual))),
            q25=float(q25), q50=float(q50), q75=float(q75))
    return result


class LatitudeBin(BaseModel):
    lat_min: float
    lat_max: float
    mean: float
    count: int = Field(..., ge=1)


def latitudinal_profile(values: Sequence[float], lats: Sequence[float],
                        bin_deg: float = 1.0) -> List[LatitudeBin]:
    """Mean and count of finite values per latitude band, southernmost first."""
    if not bin_deg > 0:
        raise ValueError(f"bin_deg must be positive, got {bin_deg}")
    values = np.asarray(values, dtype=float).ravel()
    lats = np.asarray(lats, dtype=float).ravel()
    keep = np.isfinite(values) & np.isfinite(lats)
    frame = pd.DataFrame({"value": values[keep],
                          "bin": np.floor(lats[keep] / bin_deg).astype(int)})
    grouped = frame.groupby("bin", sort=True)["value"].agg(["mean", "count"])
    return [LatitudeBin(lat_min=b * bin_deg, lat_max=(b + 1) * bin_deg, mean=float(row["mean"]),
                        count=int(row["count"]))
            for b, row in grouped.iterrows()]


def record_latitudinal_profile(table: TraitTable, trait: Trait,
                               bin_deg: float = 1.0) -> List[LatitudeBin]:
    """Latitudinal means of the in-situ values of ``trait`` over georeferenced records."""
    lats = np.array([r.latitude if r.georeferenced else np.nan for r in table.records], dtype=float)
    return latitudinal_profile(trait_values(table, trait), lats, bin_deg)


class ScatterStats(BaseModel):
    n: int
    me: float
    rmse: float
    r: Optional[float] = None
    slope: Optional[float] = None
    intercept: Optional[float] = None


def scatter_stats(predicted: Sequence[float], observed: Sequence[float]) -> ScatterStats:
    """Agreement statistics plus the least-squares line of predicted on observed."""
    p = np.asarray(predicted, dtype=float)
    o = np.asarray(observed, dtype=float)
    me, rmse = bias_and_error(p, o)
    try:
        _, _, r = compute_metrics(p, o)
    except UndefinedCorrelationError:
        r = None
    if np.ptp(o) == 0.0:
        return ScatterStats(n=p.size, me=me, rmse=rmse, r=r)
    fit = stats.linregress(o, p)
    return ScatterStats(n=p.size, me=me, rmse=rmse, r=r, slope=float(fit.slope),
                        intercept=float(fit.intercept))


class DistributionStats(BaseModel):
    n: int = Field(..., ge=1)
    mean: float
    min: float
    q25: float
    median: float
    q75: float
    max: float


def pft_distribution(values: np.ndarray, dominant_pft: np.ndarray) -> Dict[str, DistributionStats]:
    """Box-plot statistics of map values grouped by the dominant PFT of each pixel."""
    values = np.asarray(values, dtype=float).ravel()
    codes = np.asarray(dominant_pft, dtype=float).ravel()
    keep = np.isfinite(values) & np.isfinite(codes)
    frame = pd.DataFrame({"value": values[keep], "pft": codes[keep].astype(int)})
    result = {}
    for code, group in frame.groupby("pft", sort=True):
        v = group["value"].to_numpy()
        q25, q50, q75 = np.quantile(v, [0.25, 0.5, 0.75])
        result[PftClass(int(code)).name] = DistributionStats(
            n=v.size, mean=float(v.mean()), min=float(v.min()), q25=float(q25),
            median=float(q50), q75=float(q75), max=float(v.max()))
    return result
