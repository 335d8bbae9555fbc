"""L2-regularized, sample-weighted logistic regression trained with SAG.

Objective (intercept unpenalized, labels mapped to -1/+1)::

    F(w, b) = 0.5 * ||w||^2 + C * sum_i s_i * log(1 + exp(-y_i * (w . x_i + b)))

``C`` is the inverse regularization strength. :func:`fit_sag` minimizes F
with stochastic average gradient; :func:`grid_search` picks C by stratified
k-fold cross-validated accuracy.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit
from scipy import sparse
from scipy.special import expit

from .errors import DataError

log = logging.getLogger(__name__)

DEFAULT_C_GRID = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4, 1e5)


@dataclass(frozen=True)
class SAGSettings:
    max_epochs: int = 1000
    tolerance: float = 1e-4
    seed: int = 0


@dataclass(frozen=True)
class TrainConfig:
    C_grid: tuple[float, ...] = DEFAULT_C_GRID
    class_weight: str = "balanced"
    optimizer: SAGSettings = SAGSettings()
    cv_folds: int = 5
    threshold: float = 0.5

    def __post_init__(self):
        if not self.C_grid or any(not (c > 0 and math.isfinite(c)) for c in self.C_grid):
            raise ValueError("C_grid must be a non-empty list of positive numbers")
        if self.class_weight not in ("balanced", "uniform"):
            raise ValueError(f"class_weight must be 'balanced' or 'uniform', got {self.class_weight!r}")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie strictly between 0 and 1")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")


@dataclass
class Model:
    feature_names: list[str]
    weights: np.ndarray
    intercept: float
    C: float
    feature_means: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.feature_means = np.asarray(self.feature_means, dtype=np.float64)
        if not (len(self.weights) == len(self.feature_names) == len(self.feature_means)):
            raise ValueError("weights, feature_names and feature_means must have equal length")
        if not self.C > 0:
            raise ValueError("C must be positive")

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "weights": [float(v) for v in self.weights],
            "intercept": float(self.intercept),
            "C": float(self.C),
            "feature_means": [float(v) for v in self.feature_means],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Model":
        return cls(list(d["feature_names"]), d["weights"], float(d["intercept"]), float(d["C"]),
                   d["feature_means"], dict(d.get("metadata", {})))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Model":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --------------------------------------------------------------------------
# Objective
# --------------------------------------------------------------------------


def _as_labels(y) -> np.ndarray:
    y = np.asarray(y)
    if y.dtype != bool:
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be boolean or 0/1")
        y = y.astype(bool)
    return y


def _check_finite(*arrays) -> None:
    for a in arrays:
        data = a.data if sparse.issparse(a) else np.asarray(a, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise ValueError("inputs contain non-finite values")


def compute_class_weights(labels) -> tuple[float, float]:
    """Balanced weights ``n / (2 * n_c)`` for the positive and negative class."""
    y = _as_labels(labels)
    n, n_pos = len(y), int(y.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("class weights need both classes present")
    return n / (2 * n_pos), n / (2 * n_neg)


def sample_weights_for(labels, class_weight: str = "balanced") -> np.ndarray:
    y = _as_labels(labels)
    if class_weight == "uniform":
        return np.ones(len(y))
    w_pos, w_neg = compute_class_weights(y)
    return np.where(y, w_pos, w_neg)


def objective(weights, intercept, X, y, C, sample_weights=None) -> float:
    return loss_and_gradient(weights, intercept, X, y, C, sample_weights)[0]


def loss_and_gradient(weights, intercept, X, y, C, sample_weights=None):
    """Return ``(loss, grad_w, grad_b)`` of the objective in the module docstring."""
    w = np.asarray(weights, dtype=np.float64)
    y = _as_labels(y)
    n = X.shape[0]
    s = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    if X.shape[1] != len(w) or len(y) != n or len(s) != n:
        raise ValueError("dimension mismatch between weights, X, y and sample_weights")
    if not C > 0:
        raise ValueError("C must be positive")
    _check_finite(w, X, s, [intercept, C])
    signs = np.where(y, 1.0, -1.0)
    margins = signs * (X @ w + intercept)
    loss = 0.5 * float(w @ w) + C * float(s @ np.logaddexp(0.0, -margins))
    dz = -C * s * signs * expit(-margins)
    grad_w = w + np.asarray(X.T @ dz).ravel()
    return loss, grad_w, float(dz.sum())


# --------------------------------------------------------------------------
# SAG
# --------------------------------------------------------------------------


@njit(cache=True)
def _sag_epoch(data, indices, indptr, signs, sw, C, order, step, w, state, grad_mem, seen, sum_grad):
    # state = [intercept, sum_grad_intercept, n_seen]
    n = indptr.shape[0] - 1
    d = w.shape[0]
    b = state[0]
    sum_b = state[1]
    n_seen = state[2]
    for t in range(order.shape[0]):
        i = order[t]
        z = b
        for k in range(indptr[i], indptr[i + 1]):
            z += data[k] * w[indices[k]]
        m = signs[i] * z
        if m > 0:
            e = math.exp(-m)
            sig = e / (1.0 + e)
        else:
            sig = 1.0 / (1.0 + math.exp(m))
        g = -C * sw[i] * signs[i] * sig
        delta = g - grad_mem[i]
        grad_mem[i] = g
        for k in range(indptr[i], indptr[i + 1]):
            sum_grad[indices[k]] += delta * data[k]
        sum_b += delta
        if not seen[i]:
            seen[i] = True
            n_seen += 1.0
        scale = n / n_seen
        for j in range(d):
            w[j] -= step * (scale * sum_grad[j] + w[j])
        b -= step * scale * sum_b
    state[0] = b
    state[1] = sum_b
    state[2] = n_seen


def sag_step_size(X: sparse.csr_matrix, C: float, sample_weights: np.ndarray) -> float:
    """1 / L with L = 0.25 * C * n * max_i s_i * (||x_i||^2 + 1) + 1."""
    n = X.shape[0]
    sq = np.asarray(X.multiply(X).sum(axis=1)).ravel() + 1.0
    lipschitz = 0.25 * C * n * float(np.max(sample_weights * sq)) + 1.0
    return 1.0 / lipschitz


@dataclass
class SAGResult:
    weights: np.ndarray
    intercept: float
    epochs: int
    converged: bool


def sag_solve(X, y, C: float, sample_weights=None, settings: SAGSettings = SAGSettings()) -> SAGResult:
    y = _as_labels(y)
    X = sparse.csr_matrix(X, dtype=np.float64)
    n, d = X.shape
    if n == 0 or y.all() or not y.any():
        raise DataError("SAG training needs both classes present")
    s = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    _check_finite(X, s, [C])
    X.sort_indices()
    signs = np.where(y, 1.0, -1.0)
    step = sag_step_size(X, C, s)
    rng = np.random.default_rng(settings.seed)

    w = np.zeros(d)
    state = np.zeros(3)
    grad_mem = np.zeros(n)
    seen = np.zeros(n, dtype=np.bool_)
    sum_grad = np.zeros(d)
    data, indices, indptr = X.data, X.indices.astype(np.int64), X.indptr.astype(np.int64)

    converged = False
    epoch = 0
    for epoch in range(1, settings.max_epochs + 1):
        order = rng.integers(0, n, size=n)
        w_prev, b_prev = w.copy(), state[0]
        _sag_epoch(data, indices, indptr, signs, s, float(C), order, step, w, state, grad_mem, seen, sum_grad)
        change = max(float(np.max(np.abs(w - w_prev))) if d else 0.0, abs(state[0] - b_prev))
        if change < settings.tolerance:
            converged = True
            break
    if not converged:
        log.debug("SAG did not converge in %d epochs (C=%g)", settings.max_epochs, C)
    return SAGResult(w, float(state[0]), epoch, converged)


def fit_sag(X, y, C: float, sample_weights=None, settings: SAGSettings = SAGSettings(),
            feature_names: Sequence[str] | None = None) -> Model:
    """Fit the weighted L2 logistic objective with SAG and wrap it as a :class:`Model`.

    Non-convergence is not an error: ``metadata["converged"]`` is False.
    """
    res = sag_solve(X, y, C, sample_weights, settings)
    if not res.converged:
        log.warning("SAG did not converge in %d epochs (C=%g)", settings.max_epochs, C)
    Xc = sparse.csr_matrix(X, dtype=np.float64)
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(Xc.shape[1])]
    means = np.asarray(Xc.mean(axis=0)).ravel()
    meta = {"seed": settings.seed, "converged": res.converged, "epochs": res.epochs}
    return Model(names, res.weights, res.intercept, float(C), means, meta)


# --------------------------------------------------------------------------
# Model selection
# --------------------------------------------------------------------------


def stratified_folds(y, k: int, seed: int) -> np.ndarray:
    """Fold id per sample; each class is shuffled then dealt round-robin."""
    y = _as_labels(y)
    rng = np.random.default_rng(seed)
    folds = np.empty(len(y), dtype=np.int64)
    offset = 0
    for c in (True, False):
        members = rng.permutation(np.flatnonzero(y == c))
        folds[members] = (np.arange(len(members)) + offset) % k
        offset += len(members)
    for f in range(k):
        part = y[folds != f]
        held = y[folds == f]
        if held.size == 0 or part.all() or not part.any():
            raise DataError(f"stratification failed: fold {f} leaves a single-class training set "
                            f"({int(y.sum())} positives, {int((~y).sum())} negatives, {k} folds)")
    return folds


def select_best_C(table: Sequence[dict]) -> float:
    """Highest accuracy wins; exact ties go to the smallest C."""
    best = max(r["correct"] for r in table)
    return min(r["C"] for r in table if r["correct"] == best)


def grid_search(X, y, config: TrainConfig = TrainConfig()) -> tuple[float, list[dict]]:
    """Cross-validated accuracy for every C in the grid.

    Returns ``(best_C, table)`` where each table row holds ``C``, the pooled
    number of correct held-out predictions, ``n`` and ``accuracy``.
    """
    y = _as_labels(y)
    X = sparse.csr_matrix(X, dtype=np.float64)
    if y.all() or not y.any():
        raise DataError("grid search needs both classes present")
    folds = stratified_folds(y, config.cv_folds, config.optimizer.seed)
    table = []
    for C in config.C_grid:
        correct = 0
        for f in range(config.cv_folds):
            tr, te = folds != f, folds == f
            sw = sample_weights_for(y[tr], config.class_weight)
            res = sag_solve(X[tr], y[tr], C, sw, config.optimizer)
            p = expit(X[te] @ res.weights + res.intercept)
            correct += int(((p >= config.threshold) == y[te]).sum())
        table.append({"C": float(C), "correct": correct, "n": int(len(y)), "accuracy": correct / len(y)})
        log.info("C=%g cv accuracy %.4f", C, correct / len(y))
    return select_best_C(table), table


def fingerprint(X, y) -> str:
    X = sparse.csr_matrix(X, dtype=np.float64)
    X.sort_indices()
    h = hashlib.sha256()
    for arr in (np.asarray(X.shape, dtype=np.int64), X.indptr.astype(np.int64), X.indices.astype(np.int64),
                X.data, _as_labels(y).astype(np.uint8)):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def train(X, y, feature_names: Sequence[str], config: TrainConfig = TrainConfig()) -> Model:
    """Grid-search C, then refit on all of ``X`` at the chosen C."""
    y = _as_labels(y)
    best_C, table = grid_search(X, y, config)
    sw = sample_weights_for(y, config.class_weight)
    model = fit_sag(X, y, best_C, sw, config.optimizer, feature_names)
    model.metadata.update({
        "cv_accuracy_table": table,
        "cv_protocol": f"stratified {config.cv_folds}-fold cross-validation, pooled accuracy",
        "class_weight": config.class_weight,
        "threshold": config.threshold,
        "train_fingerprint": fingerprint(X, y),
        "n_train": int(len(y)),
    })
    return model


# --------------------------------------------------------------------------
# Prediction
# --------------------------------------------------------------------------


def decision_function(model: Model, x):
    if sparse.issparse(x):
        if x.shape[1] != len(model.weights):
            raise ValueError(f"expected {len(model.weights)} features, got {x.shape[1]}")
        return np.asarray(x @ model.weights).ravel() + model.intercept
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1] != len(model.weights):
        raise ValueError(f"expected {len(model.weights)} features, got {arr.shape[-1]}")
    out = arr @ model.weights + model.intercept
    return float(out) if arr.ndim == 1 else out


def predict_proba(model: Model, x):
    """sigmoid(w . x + b) for one vector (float) or a matrix of rows (array)."""
    z = decision_function(model, x)
    return float(expit(z)) if np.ndim(z) == 0 else expit(z)


def classify(model: Model, x, threshold: float = 0.5):
    p = predict_proba(model, x)
    return bool(p >= threshold) if np.ndim(p) == 0 else p >= threshold
