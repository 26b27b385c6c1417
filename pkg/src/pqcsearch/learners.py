"""Kernel learners, scores, fixed-fold cross-validation and kernel-target alignment."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np
import scipy.linalg

from .pqk import PqkFeatureMatrix, gram

logger = logging.getLogger(__name__)

REGRESSION = "regression"
CLASSIFICATION = "classification"

LAMBDA_RANGE = (1e-8, 1.0)
C_RANGE = (1e-2, 1e3)


class IllConditionedError(ArithmeticError):
    pass


class DegenerateLabelsError(ValueError):
    pass


class UndefinedVarianceError(ValueError):
    pass


class ScoringError(RuntimeError):
    pass


class UndefinedAlignmentError(ValueError):
    pass


# ---------------------------------------------------------------------------
# folds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    n: int
    k: int
    assignment: np.ndarray = field(repr=False)
    seed: int = 0

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)

    def sizes(self) -> list[int]:
        return np.bincount(self.assignment, minlength=self.k).tolist()

    def relabeled(self, permutation) -> "FoldPlan":
        """Same partition with fold ids renamed ``f -> permutation[f]``."""
        return FoldPlan(self.n, self.k, np.asarray(permutation)[self.assignment], self.seed)


def fixed_folds(n: int, k: int = 5, seed: int = 0) -> FoldPlan:
    """Shuffle ``range(n)`` with ``seed`` and cut it into ``k`` contiguous blocks.

    Block sizes differ by at most one; the first ``n % k`` blocks are larger.
    """
    if k < 1 or n < k:
        raise ValueError(f"need n >= k >= 1, got n={n}, k={k}")
    order = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    for fold, block in enumerate(np.array_split(order, k)):
        assignment[block] = fold
    return FoldPlan(n, k, assignment, seed)


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

@dataclass
class KernelModel:
    kind: str
    dual_coef: np.ndarray
    reg: float
    bias: float = 0.0
    gamma: Optional[float] = None
    train_features: Optional[PqkFeatureMatrix] = None
    labels: Optional[np.ndarray] = None
    n_iter: int = 0

    def decision_function(self, K_test_train: np.ndarray) -> np.ndarray:
        K_test_train = np.atleast_2d(K_test_train)
        if K_test_train.shape[1] != self.dual_coef.shape[0]:
            raise ValueError("kernel block does not match the number of training points")
        if self.kind == "svc":
            return K_test_train @ (self.dual_coef * self.labels) + self.bias
        return K_test_train @ self.dual_coef + self.bias


def krr_fit(K: np.ndarray, y, lam: float, fit_intercept: bool = False) -> KernelModel:
    """Solve ``(K + lam I) alpha = y`` by Cholesky.

    With ``fit_intercept`` the targets are centred first and the mean is kept
    as the model bias.
    """
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise ValueError("targets contain non-finite values")
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    K = np.asarray(K, dtype=np.float64)
    if K.shape != (y.size, y.size):
        raise ValueError("kernel matrix must be square and match the targets")
    bias = float(y.mean()) if fit_intercept else 0.0
    try:
        factor = scipy.linalg.cho_factor(K + lam * np.eye(y.size), lower=True, check_finite=True)
        alpha = scipy.linalg.cho_solve(factor, y - bias)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise IllConditionedError(f"Cholesky factorisation failed ({exc}); try a larger lambda") from exc
    return KernelModel("krr", alpha, lam, bias)


def krr_predict(model: KernelModel, K_test_train: np.ndarray) -> np.ndarray:
    return model.decision_function(K_test_train)


@numba.njit(cache=True)
def _smo(K, y, C, tol, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    it = 0
    while it < max_iter:
        # maximal violating pair
        g_max = -np.inf
        g_max2 = -np.inf
        i = -1
        j = -1
        for t in range(n):
            if y[t] > 0:
                if alpha[t] < C and -grad[t] >= g_max:
                    g_max = -grad[t]
                    i = t
                if alpha[t] > 0 and grad[t] >= g_max2:
                    g_max2 = grad[t]
                    j = t
            else:
                if alpha[t] > 0 and grad[t] >= g_max:
                    g_max = grad[t]
                    i = t
                if alpha[t] < C and -grad[t] >= g_max2:
                    g_max2 = -grad[t]
                    j = t
        if g_max + g_max2 < tol or i < 0 or j < 0:
            break
        it += 1
        qii = K[i, i]
        qjj = K[j, j]
        qij = y[i] * y[j] * K[i, j]
        old_i = alpha[i]
        old_j = alpha[j]
        if y[i] != y[j]:
            quad = qii + qjj + 2.0 * qij
            if quad <= 0:
                quad = 1e-12
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = qii + qjj - 2.0 * qij
            if quad <= 0:
                quad = 1e-12
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        d_i = alpha[i] - old_i
        d_j = alpha[j] - old_j
        for t in range(n):
            grad[t] += y[t] * (y[i] * K[t, i] * d_i + y[j] * K[t, j] * d_j)
    # bias from free vectors, else midpoint of the feasible interval
    total = 0.0
    n_free = 0
    upper = np.inf
    lower = -np.inf
    for t in range(n):
        yg = y[t] * grad[t]
        if 0 < alpha[t] < C:
            total += yg
            n_free += 1
        elif (y[t] > 0 and alpha[t] >= C) or (y[t] < 0 and alpha[t] <= 0):
            lower = max(lower, yg)
        else:
            upper = min(upper, yg)
    if n_free > 0:
        rho = total / n_free
    else:
        rho = 0.5 * (upper + lower)
    return alpha, -rho, it


def svc_fit(K: np.ndarray, y, C: float, tol: float = 1e-3, max_iter: int = 100_000) -> KernelModel:
    """Binary soft-margin SVC on a precomputed kernel, solved by SMO.

    Labels must be -1/+1. Working pairs are the maximal KKT violators; the
    solver stops once the violation gap drops below ``tol``.
    """
    y = np.asarray(y, dtype=np.float64)
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ValueError("SVC labels must be -1 or +1")
    if np.unique(y).size < 2:
        raise DegenerateLabelsError("SVC needs both classes in the training labels")
    if not C > 0:
        raise ValueError(f"C must be positive, got {C}")
    K = np.ascontiguousarray(K, dtype=np.float64)
    if K.shape != (y.size, y.size):
        raise ValueError("kernel matrix must be square and match the labels")
    alpha, bias, n_iter = _smo(K, y, float(C), float(tol), int(max_iter))
    if n_iter >= max_iter:
        logger.warning("SMO hit the iteration cap (%d) before converging", max_iter)
    return KernelModel("svc", alpha, C, float(bias), labels=y, n_iter=int(n_iter))


def svc_predict(model: KernelModel, K_test_train: np.ndarray) -> np.ndarray:
    return np.where(model.decision_function(K_test_train) >= 0, 1.0, -1.0)


# ---------------------------------------------------------------------------
# scores
# ---------------------------------------------------------------------------

def r2_score(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ValueError("inputs must be non-empty and of equal length")
    ss_tot = np.sum((y_true - y_true.mean()) ** 2)
    if ss_tot == 0:
        raise UndefinedVarianceError("R^2 is undefined for constant targets")
    return float(1.0 - np.sum((y_true - y_pred) ** 2) / ss_tot)


def accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ValueError("inputs must be non-empty and of equal length")
    return float(np.mean(y_true == y_pred))


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    """Kernel model choice: KRR (``reg`` = lambda) for regression, SVC (``reg`` = C) for classification."""

    task: str
    gamma: float = 1.0
    reg: float = 1.0
    fit_intercept: bool = True

    def __post_init__(self):
        if self.task not in (REGRESSION, CLASSIFICATION):
            raise ValueError(f"unknown task {self.task!r}")


def fit(K: np.ndarray, y, config: ModelConfig) -> KernelModel:
    if config.task == CLASSIFICATION:
        model = svc_fit(K, y, config.reg)
    else:
        model = krr_fit(K, y, config.reg, fit_intercept=config.fit_intercept)
    model.gamma = config.gamma
    return model


def predict(model: KernelModel, K_test_train: np.ndarray) -> np.ndarray:
    return svc_predict(model, K_test_train) if model.kind == "svc" else krr_predict(model, K_test_train)


def score(task: str, y_true, y_pred) -> float:
    return accuracy(y_true, y_pred) if task == CLASSIFICATION else r2_score(y_true, y_pred)


def cross_validate(features, y, folds: FoldPlan, config: ModelConfig, return_folds: bool = False):
    """Mean held-out score over the folds of ``folds``.

    The Gram matrix is built once from the full feature matrix and sliced per
    fold. Folds whose training part has a single class (SVC) or whose held-out
    targets are constant (R^2) are skipped with a warning.
    """
    y = np.asarray(y, dtype=np.float64)
    values = features.values if isinstance(features, PqkFeatureMatrix) else np.asarray(features, dtype=np.float64)
    if values.shape[0] != folds.n or y.size != folds.n:
        raise ValueError("features, labels and fold plan disagree on the number of points")
    K = gram(values, None, config.gamma)
    scores = []
    for fold in range(folds.k):
        tr = folds.train_indices(fold)
        te = folds.test_indices(fold)
        try:
            model = fit(K[np.ix_(tr, tr)], y[tr], config)
            scores.append(score(config.task, y[te], predict(model, K[np.ix_(te, tr)])))
        except (DegenerateLabelsError, UndefinedVarianceError) as exc:
            warnings.warn(f"fold {fold} skipped: {exc}", RuntimeWarning, stacklevel=2)
            scores.append(np.nan)
    valid = [s for s in scores if np.isfinite(s)]
    if not valid:
        raise ScoringError("no fold produced a valid score")
    mean = float(np.mean(valid))
    return (mean, scores) if return_folds else mean


# ---------------------------------------------------------------------------
# alignment
# ---------------------------------------------------------------------------

def kernel_target_alignment(K: np.ndarray, y) -> float:
    """``sum_ij K_ij y_i y_j / sqrt(sum_ij K_ij^2 * sum_ij y_i^2 y_j^2)``."""
    K = np.asarray(K, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if K.shape != (y.size, y.size):
        raise ValueError("kernel matrix must be square and match the labels")
    k_norm = np.sqrt(np.sum(K * K))
    y_sq = float(y @ y)
    if k_norm == 0 or y_sq == 0:
        raise UndefinedAlignmentError("alignment is undefined for a zero kernel or zero labels")
    return float(y @ K @ y / (k_norm * y_sq))
