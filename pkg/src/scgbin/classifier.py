"""RBF-kernel SVM trained by SMO, stratified k-fold CV and grid search.

Labels are HLV/LLV strings or +1/-1; HLV is the positive class (+1) both for
the SVM and for sensitivity/precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._smo import smo_solve
from .errors import ConvergenceError, ParameterError
from .events import HLV, LLV

KKT_TOL = 1e-3
# solver stopping tolerance, stricter than the audit
SOLVER_TOL = 1e-4
# after reaching SOLVER_TOL, keep refining toward POLISH_TOL for about
# POLISH_WORK / n pair updates; small problems end up solved to round-off
POLISH_TOL = 1e-9
POLISH_WORK = 200_000
MAX_ITER = 1_000_000
DEFAULT_COST_GRID = tuple(2.0 ** p for p in range(-5, 16, 2))
DEFAULT_GAMMA_GRID = tuple(2.0 ** p for p in range(-15, 4, 2))
CLASS_MAP = {1: HLV, -1: LLV}


def encode_labels(labels) -> np.ndarray:
    """Map HLV/LLV (or +-1) to +1/-1 floats."""
    out = []
    for v in labels:
        if v == HLV or v == 1:
            out.append(1.0)
        elif v == LLV or v == -1:
            out.append(-1.0)
        else:
            raise ParameterError(f"unknown label {v!r}")
    return np.asarray(out, dtype=np.float64)


def _as_matrix(features) -> np.ndarray:
    rows = [getattr(f, "values", f) for f in features]
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim != 2:
        raise ParameterError("features must all have the same length")
    if not np.all(np.isfinite(X)):
        raise ParameterError("features must be finite")
    return X


def sq_distances(A, B) -> np.ndarray:
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    return np.maximum(d, 0.0)


def rbf_kernel(A, B, gamma) -> np.ndarray:
    return np.exp(-gamma * sq_distances(A, B))


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X):
        sd = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(sd > 0, sd, 1.0))

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim))

    def transform(self, X):
        return (X - self.mean) / self.scale


@dataclass(frozen=True)
class RbfSvmModel:
    support_samples: np.ndarray
    dual_coefficients: np.ndarray
    bias: float
    gamma: float
    cost: float
    scaler: Scaler
    iterations: int = 0
    kkt_violation: float = 0.0
    dual_objective: float = float("nan")
    class_map: dict = field(default_factory=lambda: dict(CLASS_MAP))

    @property
    def n_features(self) -> int:
        return self.support_samples.shape[1]

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ParameterError(f"feature length {X.shape[1]} != model's {self.n_features}")
        K = rbf_kernel(self.scaler.transform(X), self.support_samples, self.gamma)
        return K @ self.dual_coefficients + self.bias

    def to_dict(self) -> dict:
        return {"kernel": "rbf", "gamma": self.gamma, "cost": self.cost, "bias": self.bias,
                "class_map": {str(k): v for k, v in self.class_map.items()},
                "scaler": {"mean": self.scaler.mean.tolist(), "scale": self.scaler.scale.tolist()},
                "support_samples": self.support_samples.tolist(),
                "dual_coefficients": self.dual_coefficients.tolist(),
                "diagnostics": {"iterations": self.iterations,
                                "kkt_violation": self.kkt_violation,
                                "dual_objective": self.dual_objective}}

    @classmethod
    def from_dict(cls, d) -> "RbfSvmModel":
        diag = d.get("diagnostics", {})
        return cls(support_samples=np.asarray(d["support_samples"], dtype=np.float64),
                   dual_coefficients=np.asarray(d["dual_coefficients"], dtype=np.float64),
                   bias=float(d["bias"]), gamma=float(d["gamma"]), cost=float(d["cost"]),
                   scaler=Scaler(np.asarray(d["scaler"]["mean"]), np.asarray(d["scaler"]["scale"])),
                   iterations=int(diag.get("iterations", 0)),
                   kkt_violation=float(diag.get("kkt_violation", 0.0)),
                   dual_objective=float(diag.get("dual_objective", float("nan"))),
                   class_map={int(k): v for k, v in d.get("class_map", CLASS_MAP).items()})


@dataclass
class DualSolution:
    alpha: np.ndarray
    bias: float
    iterations: int
    violation: float
    objective: float


def dual_objective(alpha, y, K) -> float:
    """Sum(alpha) - 0.5 * sum_ij alpha_i alpha_j y_i y_j K_ij."""
    v = alpha * y
    return float(alpha.sum() - 0.5 * v @ K @ v)


def _kkt_gap(alpha, grad, y, cost) -> float:
    s = -y * grad
    up = np.where(y > 0, alpha < cost, alpha > 0)
    low = np.where(y > 0, alpha > 0, alpha < cost)
    if not (up.any() and low.any()):
        return 0.0
    return max(float(s[up].max() - s[low].min()), 0.0)


def solve_dual(K, y, cost, tol=SOLVER_TOL, max_iter=MAX_ITER) -> DualSolution:
    """SMO on a precomputed kernel matrix.

    Raises ConvergenceError when ``max_iter`` pair updates do not bring the
    maximal KKT violation below ``tol``.
    """
    n = y.size
    alpha = np.zeros(n)
    grad = -np.ones(n)
    K = np.ascontiguousarray(K, dtype=np.float64)
    iters, gap = smo_solve(K, y, float(cost), float(tol), int(max_iter), alpha, grad)
    if POLISH_TOL <= gap < tol:
        extra = min(POLISH_WORK // n, int(max_iter) - iters)
        if extra > 0:
            saved = alpha.copy(), grad.copy(), iters, gap
            more, _ = smo_solve(K, y, float(cost), POLISH_TOL, extra, alpha, grad)
            iters += more
            gap = _kkt_gap(alpha, grad, y, cost)
            if gap > saved[3]:
                alpha, grad, iters, gap = saved
    if gap >= tol:
        raise ConvergenceError(
            f"SMO stopped after {iters} iterations with KKT violation {gap:.3g} (tol {tol})",
            violation=float(gap), iterations=int(iters))
    s = -y * grad
    free = (alpha > 0) & (alpha < cost)
    if free.any():
        bias = float(s[free].mean())
    else:
        up = np.where(y > 0, alpha < cost, alpha > 0)
        low = np.where(y > 0, alpha > 0, alpha < cost)
        hi = s[up].max() if up.any() else s[low].min()
        lo = s[low].min() if low.any() else hi
        bias = float(0.5 * (hi + lo))
    return DualSolution(alpha, bias, int(iters), float(gap), dual_objective(alpha, y, K))


def _check_training_set(X, y):
    if X.shape[0] < 2:
        raise ParameterError("need at least two training samples")
    if X.shape[0] != y.size:
        raise ParameterError(f"{X.shape[0]} feature rows but {y.size} labels")
    if not ((y > 0).any() and (y < 0).any()):
        raise ParameterError("training data must contain both classes")


def train_svm(features, labels, cost: float, gamma: float, standardize: bool = True,
              tol: float = SOLVER_TOL, max_iter: int = MAX_ITER) -> RbfSvmModel:
    """Fit a soft-margin RBF SVM by solving the dual with SMO.

    Parameters
    ----------
    features : sequence of FeatureVector or 2-D array
    labels : sequence of HLV/LLV or +-1
    cost, gamma : float
        Box constraint C and kernel width in exp(-gamma * |x - x'|^2).
    standardize : bool
        Standardize each column with the training statistics first.
    """
    if not (cost > 0 and gamma > 0):
        raise ParameterError("cost and gamma must be positive")
    X = _as_matrix(features)
    y = encode_labels(labels)
    _check_training_set(X, y)
    scaler = Scaler.fit(X) if standardize else Scaler.identity(X.shape[1])
    Z = scaler.transform(X)
    sol = solve_dual(rbf_kernel(Z, Z, gamma), y, cost, tol, max_iter)
    return _model_from_solution(sol, Z, y, cost, gamma, scaler)


def _model_from_solution(sol, Z, y, cost, gamma, scaler):
    sv = sol.alpha > 0
    return RbfSvmModel(support_samples=Z[sv].copy(), dual_coefficients=(sol.alpha * y)[sv],
                       bias=sol.bias, gamma=float(gamma), cost=float(cost), scaler=scaler,
                       iterations=sol.iterations, kkt_violation=sol.violation,
                       dual_objective=sol.objective)


def predict(model: RbfSvmModel, feature):
    """Return ``(label, decision_value)`` for one feature vector."""
    x = np.asarray(getattr(feature, "values", feature), dtype=np.float64).ravel()
    d = float(model.decision_function(x[None, :])[0])
    return (HLV if d >= 0 else LLV), d


def predict_many(model: RbfSvmModel, X) -> np.ndarray:
    d = model.decision_function(X)
    return np.where(d >= 0, 1.0, -1.0)


# --- metrics ------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ParameterError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)

    @classmethod
    def from_predictions(cls, y_true, y_pred):
        t = np.asarray(y_true) > 0
        p = np.asarray(y_pred) > 0
        return cls(int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(t & ~p)), int(np.sum(~t & ~p)))


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    sensitivity: float
    precision: float
    f1: float

    def to_dict(self):
        return {"accuracy": self.accuracy, "sensitivity": self.sensitivity,
                "precision": self.precision, "f1": self.f1}


def compute_metrics(counts: ConfusionCounts) -> Metrics:
    """Accuracy, sensitivity, precision and F1 with HLV as the positive class.

    Empty denominators give 0 (sensitivity, precision, and F1 when both are 0).
    """
    if counts.total == 0:
        raise ParameterError("cannot compute metrics from all-zero counts")
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    sens = tp / (tp + fn) if tp + fn else 0.0
    prec = tp / (tp + fp) if tp + fp else 0.0
    f1 = 2 * (sens * prec) / (sens + prec) if sens + prec else 0.0
    return Metrics((tp + counts.tn) / counts.total, sens, prec, f1)


# --- cross-validation -----------------------------------------------------------

def kfold_split(n: int, k: int, seed: int = 0, labels=None) -> list:
    """Stratified k-fold test sets.

    Each class is shuffled with ``default_rng(seed)`` (classes in sorted
    order) and dealt round-robin; the dealing position carries over from one
    class to the next, so fold sizes differ by at most one overall and per
    class.
    """
    if n < 1:
        raise ParameterError("n must be positive")
    if not 2 <= k <= n:
        raise ParameterError(f"k must lie in [2, n={n}], got {k}")
    y = np.zeros(n) if labels is None else encode_labels(labels)
    if y.size != n:
        raise ParameterError(f"{y.size} labels for n={n}")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    pos = 0
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        for i in rng.permutation(idx):
            folds[pos % k].append(int(i))
            pos += 1
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


class _FoldData:
    """Standardized train/test distances for one fold, shared across grid cells."""

    def __init__(self, X, y, test_idx, standardize=True):
        mask = np.ones(y.size, dtype=bool)
        mask[test_idx] = False
        self.y_train = y[mask]
        self.y_test = y[test_idx]
        Xtr, Xte = X[mask], X[test_idx]
        scaler = Scaler.fit(Xtr) if standardize else Scaler.identity(X.shape[1])
        Ztr, Zte = scaler.transform(Xtr), scaler.transform(Xte)
        self.d_train = sq_distances(Ztr, Ztr)
        np.fill_diagonal(self.d_train, 0.0)
        self.d_test = sq_distances(Zte, Ztr)

    def evaluate(self, cost, gamma, tol, max_iter):
        sol = solve_dual(np.exp(-gamma * self.d_train), self.y_train, cost, tol, max_iter)
        d = np.exp(-gamma * self.d_test) @ (sol.alpha * self.y_train) + sol.bias
        pred = np.where(d >= 0, 1.0, -1.0)
        return ConfusionCounts.from_predictions(self.y_test, pred)


@dataclass
class CVResult:
    mean_accuracy: float
    pooled: Metrics
    fold_accuracies: list
    fold_metrics: list
    counts: ConfusionCounts

    @property
    def accuracy_sd(self) -> float:
        return float(np.std(self.fold_accuracies))

    @property
    def mean_fold_f1(self) -> float:
        return float(np.mean([m.f1 for m in self.fold_metrics]))

    @property
    def f1_sd(self) -> float:
        return float(np.std([m.f1 for m in self.fold_metrics]))

    def __iter__(self):
        yield self.mean_accuracy
        yield self.pooled

    def to_dict(self):
        return {"mean_accuracy": self.mean_accuracy, "accuracy_sd": self.accuracy_sd,
                "pooled": self.pooled.to_dict(), "mean_fold_f1": self.mean_fold_f1,
                "f1_sd": self.f1_sd, "fold_accuracies": list(self.fold_accuracies),
                "fold_metrics": [m.to_dict() for m in self.fold_metrics]}


def _prepare_folds(features, labels, k, seed, standardize):
    X = _as_matrix(features)
    y = encode_labels(labels)
    if X.shape[0] != y.size:
        raise ParameterError(f"{X.shape[0]} feature rows but {y.size} labels")
    folds = kfold_split(y.size, k, seed, y)
    for i, test in enumerate(folds):
        rest = np.delete(y, test)
        if not ((rest > 0).any() and (rest < 0).any()):
            raise ParameterError(f"training set for fold {i} is missing a class")
    return [_FoldData(X, y, test, standardize) for test in folds]


def _summarize(per_fold) -> CVResult:
    metrics = [compute_metrics(c) for c in per_fold]
    total = per_fold[0]
    for c in per_fold[1:]:
        total = total + c
    accs = [m.accuracy for m in metrics]
    return CVResult(float(np.mean(accs)), compute_metrics(total), accs, metrics, total)


def cross_validate(features, labels, k: int = 10, cost: float = 1.0, gamma: float = 1.0,
                   seed: int = 0, standardize: bool = True, tol: float = SOLVER_TOL,
                   max_iter: int = MAX_ITER) -> CVResult:
    """Stratified k-fold CV of one (cost, gamma) cell.

    ``mean_accuracy`` averages the k fold accuracies; ``pooled`` metrics come
    from the summed confusion counts. Per-fold metrics are kept too.
    """
    folds = _prepare_folds(features, labels, k, seed, standardize)
    return _summarize([f.evaluate(cost, gamma, tol, max_iter) for f in folds])


@dataclass
class GridResult:
    best_cost: float
    best_gamma: float
    cv_accuracy: float
    best: CVResult
    table: list

    def __iter__(self):
        yield self.best_cost
        yield self.best_gamma
        yield self.cv_accuracy


def grid_search(features, labels, k: int = 10, cost_grid=DEFAULT_COST_GRID,
                gamma_grid=DEFAULT_GAMMA_GRID, seed: int = 0, standardize: bool = True,
                tol: float = SOLVER_TOL, max_iter: int = MAX_ITER) -> GridResult:
    """Exhaustive search maximizing mean CV accuracy over identical folds.

    Ties go to the smaller cost, then the smaller gamma.
    """
    costs = sorted(float(c) for c in cost_grid)
    gammas = sorted(float(g) for g in gamma_grid)
    if not costs or not gammas:
        raise ParameterError("cost and gamma grids must be non-empty")
    folds = _prepare_folds(features, labels, k, seed, standardize)
    table = []
    best: Optional[tuple] = None
    for cost in costs:
        for gamma in gammas:
            res = _summarize([f.evaluate(cost, gamma, tol, max_iter) for f in folds])
            table.append((cost, gamma, res.mean_accuracy))
            if best is None or res.mean_accuracy > best[2].mean_accuracy + 1e-12:
                best = (cost, gamma, res)
    return GridResult(best[0], best[1], best[2].mean_accuracy, best[2], table)
