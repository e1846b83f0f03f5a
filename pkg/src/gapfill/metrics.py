"""Agreement statistics between predicted and observed values."""

import math
from typing import Sequence, Tuple

import numpy as np


class UndefinedCorrelationError(ValueError):
    """Pearson r is undefined because one of the vectors has zero variance.

    The bias and error, which remain defined, are carried as ``me`` and
    ``rmse``.
    """

    def __init__(self, me: float, rmse: float):
        self.me = me
        self.rmse = rmse
        super().__init__("correlation undefined: zero variance in predicted or observed values")


def _as_pair(predicted: Sequence[float], observed: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predicted, dtype=float).ravel()
    o = np.asarray(observed, dtype=float).ravel()
    if p.shape != o.shape:
        raise ValueError(f"length mismatch: {p.size} predictions, {o.size} observations")
    if p.size < 2:
        raise ValueError("need at least two values")
    if not (np.isfinite(p).all() and np.isfinite(o).all()):
        raise ValueError("values must be finite")
    return p, o


def bias_and_error(predicted: Sequence[float], observed: Sequence[float]) -> Tuple[float, float]:
    """Mean error and root-mean-square error; ``rmse >= |me|`` always holds."""
    p, o = _as_pair(predicted, observed)
    diff = p - o
    me = float(diff.mean())
    rmse = math.sqrt(float(np.mean(diff * diff)))
    return me, max(rmse, abs(me))


def compute_metrics(predicted: Sequence[float], observed: Sequence[float]
                    ) -> Tuple[float, float, float]:
    """Mean error, RMSE and Pearson correlation of ``predicted`` against ``observed``.

    Raises:
        ValueError: On mismatched, too short or non-finite input.
        UndefinedCorrelationError: When either vector is constant.
    """
    p, o = _as_pair(predicted, observed)
    me, rmse = bias_and_error(p, o)
    if np.ptp(p) == 0.0 or np.ptp(o) == 0.0:
        raise UndefinedCorrelationError(me, rmse)
    r = float(np.corrcoef(p, o)[0, 1])
    if not math.isfinite(r):
        raise UndefinedCorrelationError(me, rmse)
    return me, rmse, min(1.0, max(-1.0, r))
