"""scikit-learn style wrappers giving the five regression methods one interface."""

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.model_selection import GridSearchCV, KFold
from sklearn.utils.validation import check_is_fitted

from logging_utils import get_logger
from raster_features import FeatureStats, standardize_features
from surrogate_forest import (
    ColumnSchema,
    EnsembleMode,
    ForestParams,
    Task,
    fit_forest,
    forest_from_dict,
    forest_to_dict,
    predict_forest_batch,
)
from trait_regress.kernel import (
    DEFAULT_RESTARTS,
    KernelModel,
    KernelParams,
    fit_gpr,
    fit_krr,
)
from trait_regress.linear import ElmModel, LinearModel, RegressionError, fit_elm, fit_rlr

logger = get_logger("traitscale.regress")

FORMAT_VERSION = 1
DEFAULT_INNER_FOLDS = 5


class RegressionMethod(str, Enum):
    RLR = "rlr"
    RF = "rf"
    ELM = "elm"
    KRR = "krr"
    GPR = "gpr"


class _Exportable:
    """Serialization of a fitted ``model_`` alongside the constructor parameters."""

    def export(self) -> Dict[str, Any]:
        check_is_fitted(self)
        return {"params": self.get_params(), "model": self._model_to_dict()}

    @classmethod
    def restore(cls, data: Dict[str, Any]):
        estimator = cls(**data["params"])
        estimator.model_ = estimator._model_from_dict(data["model"])
        return estimator

    def _model_to_dict(self) -> Dict[str, Any]:
        return self.model_.to_dict()

    def predict_with_std(self, X: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """Predictions and their standard error, None for methods without one."""
        return self.predict(X), None


class RlrRegressor(_Exportable, RegressorMixin, BaseEstimator):
    def __init__(self, ridge_lambda: float = 1.0):
        self.ridge_lambda = ridge_lambda

    def fit(self, X, y):
        self.model_ = fit_rlr(X, y, self.ridge_lambda)
        return self

    def predict(self, X):
        check_is_fitted(self)
        return self.model_.predict(X)

    @staticmethod
    def _model_from_dict(data):
        return LinearModel.from_dict(data)


class ElmRegressor(_Exportable, RegressorMixin, BaseEstimator):
    def __init__(self, n_hidden: int = 100, ridge_lambda: float = 1e-3, random_state: int = 0):
        self.n_hidden = n_hidden
        self.ridge_lambda = ridge_lambda
        self.random_state = random_state

    def fit(self, X, y):
        self.model_ = fit_elm(X, y, self.n_hidden, self.ridge_lambda, self.random_state)
        return self

    def predict(self, X):
        check_is_fitted(self)
        return self.model_.predict(X)

    @staticmethod
    def _model_from_dict(data):
        return ElmModel.from_dict(data)


class KrrRegressor(_Exportable, RegressorMixin, BaseEstimator):
    """ARD kernel ridge with one shared lengthscale.

    The lengthscale is given in units of sqrt(n_features) and the noise
    variance as a fraction of the target variance, which is also the signal
    variance.
    """

    def __init__(self, lengthscale: float = 1.0, noise_fraction: float = 0.1):
        self.lengthscale = lengthscale
        self.noise_fraction = noise_fraction

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        variance = float(np.var(y)) or 1.0
        params = KernelParams.shared(variance, self.lengthscale * math.sqrt(X.shape[1]),
                                     X.shape[1], math.sqrt(self.noise_fraction * variance))
        self.model_ = fit_krr(X, y, params)
        return self

    def predict(self, X):
        check_is_fitted(self)
        return self.model_.predict(X)

    @staticmethod
    def _model_from_dict(data):
        return KernelModel.from_dict(data)


class GprRegressor(_Exportable, RegressorMixin, BaseEstimator):
    def __init__(self, restarts: int = DEFAULT_RESTARTS, random_state: int = 0):
        self.restarts = restarts
        self.random_state = random_state

    def fit(self, X, y):
        self.model_ = fit_gpr(X, y, restarts=self.restarts, seed=self.random_state)
        return self

    def predict(self, X):
        check_is_fitted(self)
        return self.model_.predict(X)

    def predict_with_std(self, X):
        check_is_fitted(self)
        return self.model_.predict(X), np.sqrt(self.model_.predict_variance(X))

    @staticmethod
    def _model_from_dict(data):
        return KernelModel.from_dict(data)


class RfRegressor(_Exportable, RegressorMixin, BaseEstimator):
    """Bagged surrogate-split regression forest."""

    def __init__(self, n_trees: int = 100, min_node_size: int = 5,
                 max_features: Optional[int] = None, random_state: int = 0, n_jobs: int = 1):
        self.n_trees = n_trees
        self.min_node_size = min_node_size
        self.max_features = max_features
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y, feature_names: Optional[Sequence[str]] = None):
        X = np.asarray(X, dtype=float)
        names = list(feature_names) if feature_names is not None else [
            f"x{i}" for i in range(X.shape[1])]
        params = ForestParams(n_trees=self.n_trees, mode=EnsembleMode.BAGGED,
                              task=Task.REGRESSION, max_features=self.max_features,
                              min_node_size=self.min_node_size, n_jobs=self.n_jobs)
        self.model_ = fit_forest(X, np.asarray(y, dtype=float), params,
                                 ColumnSchema.numeric(names), self.random_state)
        return self

    def predict(self, X):
        return self.predict_with_std(X)[0]

    def predict_with_std(self, X):
        check_is_fitted(self)
        estimate, spread = predict_forest_batch(self.model_, X)
        return np.asarray(estimate, dtype=float), spread

    def _model_to_dict(self):
        return forest_to_dict(self.model_)

    @staticmethod
    def _model_from_dict(data):
        return forest_from_dict(data)


@dataclass(frozen=True)
class MethodSpec:
    estimator: Callable[[int, int], BaseEstimator]
    grid: Dict[str, List[Any]] = field(default_factory=dict)
    """Inner cross-validation grid; empty when the method tunes itself."""


METHODS: Dict[RegressionMethod, MethodSpec] = {
    RegressionMethod.RLR: MethodSpec(
        lambda seed, n_jobs: RlrRegressor(),
        {"ridge_lambda": [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0]}),
    RegressionMethod.RF: MethodSpec(
        lambda seed, n_jobs: RfRegressor(random_state=seed, n_jobs=n_jobs)),
    RegressionMethod.ELM: MethodSpec(
        lambda seed, n_jobs: ElmRegressor(random_state=seed),
        {"n_hidden": [25, 50, 100], "ridge_lambda": [1e-4, 1e-2, 1.0]}),
    RegressionMethod.KRR: MethodSpec(
        lambda seed, n_jobs: KrrRegressor(),
        {"lengthscale": [0.25, 0.5, 1.0, 2.0, 4.0], "noise_fraction": [1e-3, 1e-2, 1e-1, 0.5]}),
    RegressionMethod.GPR: MethodSpec(
        lambda seed, n_jobs: GprRegressor(random_state=seed)),
}

ESTIMATOR_CLASSES = {
    RegressionMethod.RLR: RlrRegressor,
    RegressionMethod.RF: RfRegressor,
    RegressionMethod.ELM: ElmRegressor,
    RegressionMethod.KRR: KrrRegressor,
    RegressionMethod.GPR: GprRegressor,
}


def fit_method(method: Union[str, RegressionMethod], X: np.ndarray, y: np.ndarray, seed: int = 0,
               n_jobs: int = 1, inner_folds: int = DEFAULT_INNER_FOLDS,
               feature_names: Optional[Sequence[str]] = None
               ) -> Tuple[BaseEstimator, Dict[str, Any]]:
    """Fit ``method``, picking grid hyperparameters by inner k-fold CV on RMSE.

    Grids are skipped when there are fewer than two rows per inner fold.

    Returns:
        The fitted estimator and the chosen hyperparameters.
    """
    method = RegressionMethod(method)
    spec = METHODS[method]
    estimator = spec.estimator(seed, n_jobs)
    fit_params = {"feature_names": feature_names} if method is RegressionMethod.RF else {}
    if spec.grid and len(y) >= 2 * inner_folds:
        search = GridSearchCV(estimator, spec.grid, scoring="neg_root_mean_squared_error",
                              cv=KFold(inner_folds, shuffle=True, random_state=seed),
                              error_score="raise")
        search.fit(X, y, **fit_params)
        logger.debug(f"{method.value}: inner CV picked {search.best_params_}")
        return search.best_estimator_, dict(search.best_params_)
    estimator.fit(X, y, **fit_params)
    return estimator, {}


@dataclass(frozen=True, eq=False)
class TraitModel:
    """A fitted regressor with the feature order and standardization it expects."""
    method: RegressionMethod
    trait: str
    feature_names: Tuple[str, ...]
    stats: FeatureStats
    estimator: BaseEstimator
    hyperparameters: Dict[str, Any] = field(default_factory=dict)

    def predict(self, X: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """Predictions and standard errors for raw (unstandardized) feature rows."""
        return self.estimator.predict_with_std(self.stats.apply(X))


def train_trait_model(method: Union[str, RegressionMethod], trait: str, X: np.ndarray,
                      y: np.ndarray, feature_names: Sequence[str], seed: int = 0,
                      n_jobs: int = 1) -> TraitModel:
    """Standardize the features and fit ``method`` to one trait."""
    Xs, stats = standardize_features(X)
    estimator, chosen = fit_method(method, Xs, y, seed, n_jobs, feature_names=feature_names)
    return TraitModel(RegressionMethod(method), trait, tuple(feature_names), stats, estimator,
                      chosen)


def save_trait_model(model: TraitModel, path: Union[str, Path]) -> None:
    data = {"format_version": FORMAT_VERSION, "method": model.method.value, "trait": model.trait,
            "feature_names": list(model.feature_names), "stats": model.stats.model_dump(),
            "hyperparameters": model.hyperparameters, "estimator": model.estimator.export()}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f)


def load_trait_model(path: Union[str, Path]) -> TraitModel:
    """Read a model written by ``save_trait_model``.

    Raises:
        RegressionError: On an unknown format version or method.
    """
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise RegressionError(f"{path}: not a trait model ({e})") from None
    if data.get("format_version") != FORMAT_VERSION:
        raise RegressionError(f"{path}: unsupported format version {data.get('format_version')}")
    try:
        method = RegressionMethod(data["method"])
    except ValueError:
        raise RegressionError(f"{path}: unknown method {data['method']!r}") from None
    estimator = ESTIMATOR_CLASSES[method].restore(data["estimator"])
    return TraitModel(method, data["trait"], tuple(data["feature_names"]),
                      FeatureStats(**data["stats"]), estimator, data.get("hyperparameters", {}))
