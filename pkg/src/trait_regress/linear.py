"""Ridge-regularized linear regression and extreme learning machines."""

from dataclasses import dataclass
from typing import Any, Dict

import numpy as np
from scipy import linalg
from scipy.special import expit


class RegressionError(ValueError):
    """Raised for invalid regression inputs or failed fits."""


class RankDeficientError(RegressionError):
    """The unregularized normal equations are singular."""


def check_training_data(X: np.ndarray, y: np.ndarray):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise RegressionError(f"X of shape {X.shape} does not match {y.size} targets")
    if y.size < 1:
        raise RegressionError("no training rows")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise RegressionError("training data must be finite")
    return X, y


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray
    bias: float
    ridge_lambda: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weights + self.bias

    def to_dict(self) -> Dict[str, Any]:
        return {"weights": self.weights.tolist(), "bias": self.bias,
                "ridge_lambda": self.ridge_lambda}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LinearModel":
        return cls(np.asarray(data["weights"], dtype=float), float(data["bias"]),
                   float(data["ridge_lambda"]))


def fit_rlr(X: np.ndarray, y: np.ndarray, ridge_lambda: float = 1.0) -> LinearModel:
    """Minimize ||Xw - y||^2 + lambda ||w||^2 with an unpenalized bias.

    The bias comes from centering. The penalized problem is solved as an
    augmented least-squares system rather than through the normal equations.

    Raises:
        RankDeficientError: If ``ridge_lambda`` is 0 and X is rank deficient.
    """
    if ridge_lambda < 0:
        raise RegressionError(f"ridge_lambda must be >= 0, got {ridge_lambda}")
    X, y = check_training_data(X, y)
    x_mean, y_mean = X.mean(axis=0), float(y.mean())
    Xc, yc = X - x_mean, y - y_mean
    n_features = X.shape[1]
    if ridge_lambda > 0:
        Xc = np.vstack([Xc, np.sqrt(ridge_lambda) * np.eye(n_features)])
        yc = np.concatenate([yc, np.zeros(n_features)])
    weights, _, rank, _ = linalg.lstsq(Xc, yc)
    if rank < n_features:
        raise RankDeficientError(f"design matrix has rank {rank} < {n_features} features; "
                                 f"use ridge_lambda > 0")
    return LinearModel(weights, y_mean - float(x_mean @ weights), float(ridge_lambda))


@dataclass(frozen=True, eq=False)
class ElmModel:
    """Single hidden layer with frozen random input weights and a ridge readout."""
    hidden_weights: np.ndarray
    hidden_bias: np.ndarray
    output: LinearModel
    activation: str = "logistic"
    seed: int = 0

    def __post_init__(self):
        self.hidden_weights.setflags(write=False)
        self.hidden_bias.setflags(write=False)

    @property
    def n_hidden(self) -> int:
        return self.hidden_bias.size

    def hidden(self, X: np.ndarray) -> np.ndarray:
        return expit(np.asarray(X, dtype=float) @ self.hidden_weights + self.hidden_bias)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.output.predict(self.hidden(X))

    def to_dict(self) -> Dict[str, Any]:
        return {"hidden_weights": self.hidden_weights.tolist(),
                "hidden_bias": self.hidden_bias.tolist(), "output": self.output.to_dict(),
                "activation": self.activation, "seed": self.seed}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ElmModel":
        return cls(np.asarray(data["hidden_weights"], dtype=float),
                   np.asarray(data["hidden_bias"], dtype=float),
                   LinearModel.from_dict(data["output"]), data["activation"], int(data["seed"]))


def fit_elm(X: np.ndarray, y: np.ndarray, n_hidden: int = 100, ridge_lambda: float = 1e-3,
            seed: int = 0) -> ElmModel:
    """Extreme learning machine with logistic hidden units.

    Input weights and biases are drawn uniformly on [-1, 1] from ``seed``;
    only the readout is fitted, by ``fit_rlr`` on the hidden activations.
    """
    if n_hidden < 1:
        raise RegressionError(f"n_hidden must be >= 1, got {n_hidden}")
    X, y = check_training_data(X, y)
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-1.0, 1.0, size=(X.shape[1], n_hidden))
    bias = rng.uniform(-1.0, 1.0, size=n_hidden)
    hidden = expit(X @ weights + bias)
    return ElmModel(weights, bias, fit_rlr(hidden, y, ridge_lambda), "logistic", seed)
