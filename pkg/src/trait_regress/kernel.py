"""ARD squared-exponential kernels, kernel ridge regression and Gaussian processes."""

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.distance import cdist

from logging_utils import get_logger
from trait_regress.linear import RegressionError, check_training_data

logger = get_logger("traitscale.regress")

JITTER_STEPS: Tuple[float, ...] = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
LENGTHSCALE_BOUNDS = (1e-3, 1e3)
DEFAULT_RESTARTS = 3

Kernel = Callable[[np.ndarray, np.ndarray], np.ndarray]


class FactorizationError(RegressionError):
    """The kernel system stayed non positive definite after jitter escalation."""


@dataclass(frozen=True, eq=False)
class KernelParams:
    """signal variance, one lengthscale per feature and noise std."""
    signal_variance: float
    lengthscales: np.ndarray
    noise_std: float = 0.0

    def __post_init__(self):
        lengthscales = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if not self.signal_variance > 0:
            raise RegressionError(f"signal variance must be positive, got {self.signal_variance}")
        if not (lengthscales > 0).all():
            raise RegressionError("lengthscales must be positive")
        if self.noise_std < 0:
            raise RegressionError(f"noise std must be >= 0, got {self.noise_std}")
        object.__setattr__(self, "lengthscales", lengthscales)

    @classmethod
    def shared(cls, signal_variance: float, lengthscale: float, n_features: int,
               noise_std: float = 0.0) -> "KernelParams":
        return cls(signal_variance, np.full(n_features, float(lengthscale)), noise_std)

    def to_log_vector(self) -> np.ndarray:
        return np.log(np.concatenate([[self.signal_variance], self.lengthscales,
                                      [self.noise_std]]))

    @classmethod
    def from_log_vector(cls, theta: np.ndarray) -> "KernelParams":
        values = np.exp(np.asarray(theta, dtype=float))
        return cls(float(values[0]), values[1:-1], float(values[-1]))

    def to_dict(self) -> Dict[str, Any]:
        return {"signal_variance": self.signal_variance,
                "lengthscales": self.lengthscales.tolist(), "noise_std": self.noise_std}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "KernelParams":
        return cls(float(data["signal_variance"]), np.asarray(data["lengthscales"], dtype=float),
                   float(data["noise_std"]))


def _scaled_sqdist(A: np.ndarray, B: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    return cdist(A / lengthscales, B / lengthscales, "sqeuclidean")


def ard_kernel(A: np.ndarray, B: Optional[np.ndarray], params: KernelParams) -> np.ndarray:
    """nu * exp(-sum_f (a_f - b_f)^2 / (2 sigma_f^2)).

    With ``B`` None the kernel is the training self-kernel of ``A`` and the
    noise variance is added to its diagonal.
    """
    A = np.asarray(A, dtype=float)
    if A.shape[1] != params.lengthscales.size:
        raise RegressionError(f"{A.shape[1]} features but {params.lengthscales.size} lengthscales")
    other = A if B is None else np.asarray(B, dtype=float)
    K = params.signal_variance * np.exp(-0.5 * _scaled_sqdist(A, other, params.lengthscales))
    if B is None:
        K[np.diag_indices_from(K)] += params.noise_std ** 2
    return K


def spd_factor(K: np.ndarray) -> Tuple[Tuple[np.ndarray, bool], float]:
    """Cholesky factor of ``K``, adding escalating diagonal jitter on failure.

    Returns:
        The ``cho_factor`` result and the jitter that was needed.

    Raises:
        FactorizationError: If the largest jitter still fails.
    """
    scale = max(float(np.mean(np.diag(K))), 1e-300)
    for jitter in JITTER_STEPS:
        try:
            factor = linalg.cho_factor(K + jitter * scale * np.eye(K.shape[0]), lower=True)
        except linalg.LinAlgError:
            continue
        if jitter:
            logger.warning(f"Kernel matrix needed relative jitter {jitter:g}")
        return factor, jitter * scale
    raise FactorizationError(f"kernel matrix of size {K.shape[0]} is not positive definite "
                             f"with jitter up to {JITTER_STEPS[-1]:g}")


@dataclass(frozen=True, eq=False)
class KernelModel:
    """Dual-form kernel regressor; ``kind`` is "krr" or "gpr"."""
    train_inputs: np.ndarray
    alphas: np.ndarray
    alpha0: float
    params: KernelParams
    kind: str = "krr"
    factor: Optional[Tuple[np.ndarray, bool]] = field(default=None, repr=False)
    log_marginal_likelihood: Optional[float] = None
    kernel: Optional[Kernel] = field(default=None, repr=False)

    def _cross(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.kernel is not None:
            return self.kernel(X, self.train_inputs)
        return ard_kernel(X, self.train_inputs, self.params)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.alpha0 + self._cross(X) @ self.alphas

    def predict_variance(self, X: np.ndarray) -> np.ndarray:
        """Latent predictive variance k** - k*^T (K + sigma_n^2 I)^-1 k*, clipped at 0."""
        if self.factor is None:
            raise RegressionError("model was built without its training factorization")
        Ks = self._cross(X)
        v = linalg.cho_solve(self.factor, Ks.T)
        prior = self.params.signal_variance if self.kernel is None else np.diag(
            self.kernel(np.asarray(X, dtype=float), np.asarray(X, dtype=float)))
        return np.maximum(prior - np.einsum("ij,ji->i", Ks, v), 0.0)

    def to_dict(self) -> Dict[str, Any]:
        if self.kernel is not None:
            raise RegressionError("models with a custom kernel cannot be serialized")
        return {"kind": self.kind, "train_inputs": self.train_inputs.tolist(),
                "alphas": self.alphas.tolist(), "alpha0": self.alpha0,
                "params": self.params.to_dict(),
                "log_marginal_likelihood": self.log_marginal_likelihood}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "KernelModel":
        params = KernelParams.from_dict(data["params"])
        X = np.asarray(data["train_inputs"], dtype=float)
        factor, _ = spd_factor(ard_kernel(X, None, params))
        return cls(X, np.asarray(data["alphas"], dtype=float), float(data["alpha0"]), params,
                   data["kind"], factor, data.get("log_marginal_likelihood"))


def _solve(X: np.ndarray, y: np.ndarray, params: KernelParams, kind: str,
           kernel: Optional[Kernel] = None) -> KernelModel:
    if kernel is None:
        K = ard_kernel(X, None, params)
    else:
        K = kernel(X, X) + params.noise_std ** 2 * np.eye(X.shape[0])
    factor, _ = spd_factor(K)
    alpha0 = float(y.mean())
    alphas = linalg.cho_solve(factor, y - alpha0)
    return KernelModel(X, alphas, alpha0, params, kind, factor, kernel=kernel)


def fit_krr(X: np.ndarray, y: np.ndarray, params: KernelParams,
            kernel: Optional[Kernel] = None) -> KernelModel:
    """Kernel ridge regression at fixed hyperparameters.

    ``alphas = (K + sigma_n^2 I)^-1 (y - mean(y))`` and ``alpha0 = mean(y)``.
    A custom ``kernel(A, B)`` replaces the ARD kernel; its noise term is still
    ``params.noise_std``.
    """
    X, y = check_training_data(X, y)
    if y.size < 2:
        raise RegressionError("kernel ridge regression needs at least two rows")
    return _solve(X, y, params, "krr", kernel)


def log_marginal_likelihood(theta: np.ndarray, X: np.ndarray, y: np.ndarray,
                            gradient: bool = True):
    """Log marginal likelihood of centered ``y`` at log-hyperparameters ``theta``.

    ``theta`` is ``log([nu, sigma_1 .. sigma_F, sigma_n])``. Returns the value,
    and with ``gradient`` also its derivative with respect to ``theta``.

    Raises:
        FactorizationError: If the covariance cannot be factorized.
    """
    return _lml(KernelParams.from_log_vector(theta), X, y, gradient)


def _lml(params: KernelParams, X: np.ndarray, y: np.ndarray, gradient: bool):
    n, n_features = X.shape
    scaled = X / params.lengthscales
    signal = params.signal_variance * np.exp(-0.5 * cdist(scaled, scaled, "sqeuclidean"))
    K = signal + params.noise_std ** 2 * np.eye(n)
    factor, _ = spd_factor(K)
    alpha = linalg.cho_solve(factor, y)
    lml = (-0.5 * float(y @ alpha) - float(np.log(np.diag(factor[0])).sum())
           - 0.5 * n * math.log(2 * math.pi))
    if not gradient:
        return lml
    inner = np.outer(alpha, alpha) - linalg.cho_solve(factor, np.eye(n))
    grad = np.empty(n_features + 2)
    grad[0] = 0.5 * float(np.sum(inner * signal))
    for f in range(n_features):
        d2 = (scaled[:, f, None] - scaled[None, :, f]) ** 2
        grad[1 + f] = 0.5 * float(np.sum(inner * signal * d2))
    grad[-1] = float(np.trace(inner)) * params.noise_std ** 2
    return lml, grad


def _bounds(y_var: float, n_features: int) -> List[Tuple[float, float]]:
    lo, hi = LENGTHSCALE_BOUNDS
    scale = max(y_var, 1e-12)
    return ([(math.log(1e-4 * scale), math.log(1e4 * scale))]
            + [(math.log(lo), math.log(hi))] * n_features
            + [(math.log(1e-4 * math.sqrt(scale)), math.log(10.0 * math.sqrt(scale)))])


def default_gpr_params(X: np.ndarray, y: np.ndarray) -> KernelParams:
    y_var = float(np.var(y)) or 1.0
    return KernelParams.shared(y_var, math.sqrt(X.shape[1]), X.shape[1], 0.1 * math.sqrt(y_var))


def fit_gpr(X: np.ndarray, y: np.ndarray, params: Optional[KernelParams] = None,
            restarts: int = DEFAULT_RESTARTS, seed: int = 0, optimize_params: bool = True
            ) -> KernelModel:
    """Gaussian process regression with ARD hyperparameters from the marginal likelihood.

    L-BFGS-B runs over log-hyperparameters with analytic gradients, first from
    ``params`` (or a data-scaled default) and then from ``restarts - 1`` random
    starts inside the bounds; the highest likelihood wins. With
    ``optimize_params`` False the given hyperparameters are used as they are.

    Raises:
        RegressionError: If no start reaches a finite likelihood.
        FactorizationError: If the final covariance cannot be factorized.
    """
    X, y = check_training_data(X, y)
    if y.size < 2:
        raise RegressionError("Gaussian process regression needs at least two rows")
    start = params if params is not None else default_gpr_params(X, y)
    if not optimize_params:
        model = _solve(X, y, start, "gpr")
        lml = _lml(start, X, y - model.alpha0, gradient=False)
        return KernelModel(X, model.alphas, model.alpha0, start, "gpr", model.factor, lml)

    yc = y - y.mean()
    bounds = _bounds(float(np.var(y)), X.shape[1])

    def objective(theta: np.ndarray):
        try:
            lml, grad = log_marginal_likelihood(theta, X, yc)
        except FactorizationError:
            return 1e25, np.zeros_like(theta)
        if not math.isfinite(lml):
            return 1e25, np.zeros_like(theta)
        return -lml, -grad

    rng = np.random.default_rng(seed)
    lower = np.array([b[0] for b in bounds])
    upper = np.array([b[1] for b in bounds])
    starts = [np.clip(start.to_log_vector(), lower, upper)]
    starts += [rng.uniform(lower, upper) for _ in range(max(0, restarts - 1))]

    best_theta, best_value = None, math.inf
    for i, theta0 in enumerate(starts):
        result = optimize.minimize(objective, theta0, jac=True, method="L-BFGS-B", bounds=bounds)
        logger.debug(f"GPR start {i}: -lml {result.fun:.6g} ({result.message})")
        if result.fun < best_value and result.fun < 1e25:
            best_theta, best_value = result.x, float(result.fun)
    if best_theta is None:
        raise RegressionError("marginal likelihood is not finite at any start")
    best = KernelParams.from_log_vector(best_theta)
    model = _solve(X, y, best, "gpr")
    return KernelModel(X, model.alphas, model.alpha0, best, "gpr", model.factor, -best_value)
