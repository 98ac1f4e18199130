"""Regression models and the repeated train/test split harness.

Four models are implemented here on numpy: least squares, Bayesian ridge
(evidence maximization), brute-force k-nearest neighbours and a random forest
of variance-reduction trees. A train-mean model serves as the null baseline.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from errors import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    """Feature matrix X (n x L), targets y and the cluster ids of the rows."""

    X: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    ids: np.ndarray = field(repr=False)
    node_ids: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "ids", np.asarray(self.ids))
        if X.shape[0] != y.size or self.ids.size != y.size:
            raise ValidationError(f"dataset parts disagree on row count: X={X.shape[0]}, y={y.size}, ids={self.ids.size}")
        if y.size < 2:
            raise ValidationError(f"dataset needs at least 2 rows, got {y.size}")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise ValidationError("dataset contains non-finite values")

    @property
    def n(self) -> int:
        return self.y.size

    def subset(self, rows: np.ndarray) -> "Dataset":
        node_ids = None if self.node_ids is None else self.node_ids[rows]
        return Dataset(self.X[rows], self.y[rows], self.ids[rows], node_ids)


def r_squared(y, y_hat) -> float:
    """Coefficient of determination 1 - SS_res / SS_tot.

    Raises:
        ValidationError: On length mismatch, fewer than 2 points or constant y
    """
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape or y.size < 2:
        raise ValidationError("r_squared needs two equal-length vectors with at least 2 entries")
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0:
        raise ValidationError("r_squared is undefined for a constant target")
    return float(1.0 - np.sum((y - y_hat) ** 2) / ss_tot)


class MeanPredictor:
    """Predicts the training mean everywhere."""

    def __init__(self, mean: float):
        self.mean = mean

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(X).shape[0], self.mean)


class LinearPredictor:
    """y = intercept + X @ coef."""

    def __init__(self, intercept: float, coef: np.ndarray, rank_deficient: bool = False):
        self.intercept = float(intercept)
        self.coef = np.asarray(coef, dtype=float)
        self.rank_deficient = rank_deficient

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.intercept + np.atleast_2d(X) @ self.coef


class BayesianRidgePredictor(LinearPredictor):
    def __init__(self, intercept, coef, alpha: float, beta: float, iterations: int, converged: bool):
        super().__init__(intercept, coef)
        self.alpha = alpha
        self.beta = beta
        self.iterations = iterations
        self.converged = converged


def fit_mean(train: Dataset) -> MeanPredictor:
    return MeanPredictor(float(train.y.mean()))


def fit_linear(train: Dataset) -> LinearPredictor:
    """Least squares with intercept via SVD; rank-deficient designs get the minimum-norm solution."""
    design = np.column_stack([np.ones(train.n), train.X])
    solution, _, rank, _ = np.linalg.lstsq(design, train.y, rcond=None)
    deficient = rank < design.shape[1]
    if deficient:
        logger.debug("Linear fit is rank deficient (rank %d of %d)", rank, design.shape[1])
    return LinearPredictor(solution[0], solution[1:], rank_deficient=bool(deficient))


def fit_bayesian_ridge(
    train: Dataset,
    max_iter: int = 300,
    tol: float = 1e-4,
    alpha_init: float = 1.0,
    beta_init: Optional[float] = None,
    fit_alpha: bool = True,
    hyper: float = 1e-6,
) -> BayesianRidgePredictor:
    """Bayesian ridge regression by evidence maximization.

    alpha is the weight precision and beta the noise precision; both are
    re-estimated in turn until their relative change falls below tol or
    max_iter is reached. fit_alpha=False pins alpha at alpha_init.

    Args:
        train: Training data
        max_iter: Iteration cap
        tol: Relative-change convergence threshold for alpha and beta
        alpha_init: Starting (or pinned) weight precision
        beta_init: Starting noise precision, 1/var(y) when None
        fit_alpha: Re-estimate alpha from the evidence
        hyper: Shape and rate of the Gamma hyperpriors on alpha and beta

    Returns:
        BayesianRidgePredictor carrying final alpha, beta, iteration count and convergence flag
    """
    X_mean = train.X.mean(axis=0)
    y_mean = train.y.mean()
    X = train.X - X_mean
    y = train.y - y_mean
    n = train.n

    U, S, Vh = linalg.svd(X, full_matrices=False)
    eigen = S ** 2
    Uy = U.T @ y

    alpha = float(alpha_init)
    var_y = np.var(y)
    beta = float(beta_init) if beta_init is not None else (1.0 / var_y if var_y > 0 else 1.0)

    converged = False
    iterations = 0
    coef = np.zeros(train.X.shape[1])
    for iterations in range(1, max_iter + 1):
        coef = Vh.T @ (S / (eigen + alpha / beta) * Uy)
        sse = float(np.sum((y - X @ coef) ** 2))
        gamma = float(np.sum(beta * eigen / (alpha + beta * eigen)))

        new_alpha = (gamma + 2 * hyper) / (float(coef @ coef) + 2 * hyper) if fit_alpha else alpha
        new_beta = (n - gamma + 2 * hyper) / (sse + 2 * hyper)

        done = abs(new_alpha - alpha) <= tol * abs(alpha) and abs(new_beta - beta) <= tol * abs(beta)
        alpha, beta = new_alpha, new_beta
        if done:
            converged = True
            break

    coef = Vh.T @ (S / (eigen + alpha / beta) * Uy)
    if not converged:
        logger.warning("Bayesian ridge did not converge in %d iterations", max_iter)
    return BayesianRidgePredictor(y_mean - X_mean @ coef, coef, alpha, beta, iterations, converged)


class KNNPredictor:
    """Mean target of the k nearest training rows (Euclidean); ties go to the lower row index."""

    def __init__(self, X: np.ndarray, y: np.ndarray, k: int):
        self.X = X
        self.y = y
        self.k = k

    def neighbors(self, x: np.ndarray) -> np.ndarray:
        distances = np.sum((self.X - x) ** 2, axis=1)
        return np.argsort(distances, kind="stable")[: self.k]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.array([self.y[self.neighbors(x)].mean() for x in np.atleast_2d(X)])


def fit_knn(train: Dataset, k: int = 5) -> KNNPredictor:
    """Raises ValidationError unless 1 <= k <= n."""
    if not 1 <= k <= train.n:
        raise ValidationError(f"knn k must be in 1..{train.n}, got {k}")
    return KNNPredictor(train.X.copy(), train.y.copy(), int(k))


class RegressionTree:
    """Variance-reduction regression tree stored as flat node arrays.

    Rows with x[feature] <= threshold go left. Leaves have feature -1.
    """

    def __init__(self, max_depth: int, min_leaf: int, m_try: int, rng: np.random.Generator):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.m_try = m_try
        self.rng = rng
        self.feature: List[int] = []
        self.threshold: List[float] = []
        self.left: List[int] = []
        self.right: List[int] = []
        self.value: List[float] = []

    def fit(self, X: np.ndarray, y: np.ndarray) -> "RegressionTree":
        self._grow(X, y, np.arange(y.size), depth=0)
        self.rng = None
        return self

    def _new_node(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.value) - 1

    def _grow(self, X, y, rows, depth) -> int:
        node = self._new_node(float(y[rows].mean()))
        if depth >= self.max_depth or rows.size < 2 * self.min_leaf or np.ptp(y[rows]) == 0:
            return node
        features = self.rng.choice(X.shape[1], size=min(self.m_try, X.shape[1]), replace=False)
        split = best_split(X, y, rows, features, self.min_leaf)
        if split is None:
            return node
        feature, threshold = split
        goes_left = X[rows, feature] <= threshold
        self.feature[node] = int(feature)
        self.threshold[node] = float(threshold)
        self.left[node] = self._grow(X, y, rows[goes_left], depth + 1)
        self.right[node] = self._grow(X, y, rows[~goes_left], depth + 1)
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0])
        for i, x in enumerate(X):
            node = 0
            while self.feature[node] >= 0:
                node = self.left[node] if x[self.feature[node]] <= self.threshold[node] else self.right[node]
            out[i] = self.value[node]
        return out


def best_split(X, y, rows, features, min_leaf) -> Optional[Tuple[int, float]]:
    """Feature and midpoint threshold minimizing the children's summed squared error.

    Candidate positions leave at least min_leaf rows on both sides and fall between
    distinct feature values. Ties keep the earlier feature in `features`, then the
    lower position.
    """
    n = rows.size
    sizes = np.arange(min_leaf, n - min_leaf + 1)
    if sizes.size == 0:
        return None
    best_cost, best = np.inf, None
    y_rows = y[rows]
    for f in features:
        x = X[rows, f]
        order = np.argsort(x, kind="stable")
        xs, ys = x[order], y_rows[order]
        csum, csq = np.cumsum(ys), np.cumsum(ys * ys)
        left_sum, left_sq = csum[sizes - 1], csq[sizes - 1]
        right_sum, right_sq = csum[-1] - left_sum, csq[-1] - left_sq
        cost = (left_sq - left_sum ** 2 / sizes) + (right_sq - right_sum ** 2 / (n - sizes))
        cost[xs[sizes - 1] >= xs[np.minimum(sizes, n - 1)]] = np.inf
        j = int(np.argmin(cost))
        if cost[j] < best_cost:
            best_cost = cost[j]
            best = (int(f), (xs[sizes[j] - 1] + xs[sizes[j]]) / 2.0)
    return best


def tree_stream(seed: int, tree_index: int) -> np.random.Generator:
    """Random stream of one tree; depends only on (seed, tree_index)."""
    return np.random.default_rng([seed, tree_index])


class RandomForestPredictor:
    def __init__(self, trees: Sequence[RegressionTree]):
        self.trees = list(trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.mean([tree.predict(X) for tree in self.trees], axis=0)

    def combine(self, other: "RandomForestPredictor") -> "RandomForestPredictor":
        """Forest made of this forest's trees followed by the other's."""
        return RandomForestPredictor(self.trees + other.trees)


def fit_random_forest(
    train: Dataset,
    n_trees: int = 100,
    max_depth: int = 12,
    min_leaf: int = 3,
    m_try: Optional[int] = None,
    seed: int = 0,
) -> RandomForestPredictor:
    """Bagged variance-reduction trees; m_try defaults to ceil(L / 3)."""
    if n_trees < 1 or max_depth < 0 or min_leaf < 1:
        raise ValidationError("random forest needs n_trees >= 1, max_depth >= 0, min_leaf >= 1")
    if m_try is None:
        m_try = max(1, math.ceil(train.X.shape[1] / 3))
    trees = []
    for t in range(n_trees):
        rng = tree_stream(seed, t)
        sample = rng.integers(0, train.n, train.n)
        tree = RegressionTree(max_depth, min_leaf, m_try, rng)
        trees.append(tree.fit(train.X[sample], train.y[sample]))
    return RandomForestPredictor(trees)


MODEL_FITTERS: Dict[str, Callable[..., Any]] = {
    "linear": fit_linear,
    "bayesian_ridge": fit_bayesian_ridge,
    "knn": fit_knn,
    "random_forest": fit_random_forest,
    "mean": fit_mean,
}


@dataclass(frozen=True)
class ModelSpec:
    """Model name plus the keyword arguments of its fit function."""

    name: str
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in MODEL_FITTERS:
            raise ValidationError(f"unknown model '{self.name}'; valid: {sorted(MODEL_FITTERS)}")

    def fit(self, train: Dataset, seed: Optional[int] = None):
        params = dict(self.params)
        if self.name == "random_forest" and seed is not None:
            params["seed"] = seed
        return MODEL_FITTERS[self.name](train, **params)


class Standardizer:
    """Z-scoring fitted on training rows; zero-variance columns are only centered."""

    def __init__(self, X: np.ndarray):
        self.mean = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale = np.where(std > 0, std, 1.0)

    def apply(self, data: Dataset) -> Dataset:
        return Dataset((data.X - self.mean) / self.scale, data.y, data.ids, data.node_ids)


@dataclass(frozen=True)
class FitReport:
    model: str
    train_r2: Tuple[float, ...]
    test_r2: Tuple[float, ...]
    median_test_r2: float
    seed: int
    notes: Dict[str, Any] = field(default_factory=dict)
    predictions: Tuple[Tuple[int, int, float, float], ...] = field(default=(), repr=False)

    @property
    def median_train_r2(self) -> float:
        return median(self.train_r2)


def median(values: Sequence[float]) -> float:
    """Order-statistic median ignoring NaN; NaN when nothing remains."""
    arr = np.asarray(values, dtype=float)
    arr = arr[~np.isnan(arr)]
    return float(np.median(arr)) if arr.size else float("nan")


def _safe_r2(y, y_hat) -> float:
    try:
        return r_squared(y, y_hat)
    except ValidationError:
        return float("nan")


def _prediction_rows(data: Dataset, predicted: np.ndarray) -> Tuple[Tuple[int, int, float, float], ...]:
    node_ids = data.node_ids if data.node_ids is not None else np.full(data.n, -1)
    return tuple(
        (int(c), int(nd), float(a), float(p)) for c, nd, a, p in zip(data.ids, node_ids, data.y, predicted)
    )


def _describe(predictor) -> Dict[str, Any]:
    if isinstance(predictor, BayesianRidgePredictor):
        return {"alpha": predictor.alpha, "beta": predictor.beta,
                "iterations": predictor.iterations, "converged": predictor.converged}
    if isinstance(predictor, LinearPredictor):
        return {"rank_deficient": predictor.rank_deficient}
    return {}


def _split_seed(seed: int, split: int) -> int:
    return int(np.random.SeedSequence([seed, split]).generate_state(1)[0])


def split_indices(n: int, train_frac: float, seed: int, split: int) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded permutation of rows into (train, test); both halves keep at least 2 rows."""
    perm = np.random.default_rng([seed, split]).permutation(n)
    n_train = min(max(int(round(train_frac * n)), 2), n - 2)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _run_split(data, spec, train_frac, seed, split, standardize):
    train_rows, test_rows = split_indices(data.n, train_frac, seed, split)
    train, test = data.subset(train_rows), data.subset(test_rows)
    if standardize:
        scaler = Standardizer(train.X)
        train, test = scaler.apply(train), scaler.apply(test)
    predictor = spec.fit(train, seed=_split_seed(seed, split))
    test_pred = predictor.predict(test.X)
    return (
        _safe_r2(train.y, predictor.predict(train.X)),
        _safe_r2(test.y, test_pred),
        _describe(predictor),
        _prediction_rows(test, test_pred),
    )


def split_harness(
    data: Dataset,
    spec: ModelSpec,
    n_splits: int = 100,
    train_frac: float = 0.5,
    seed: int = 0,
    standardize: bool = False,
    workers: int = 1,
) -> FitReport:
    """Fit and score a model on n_splits seeded train/test partitions of the clusters.

    Split s draws its permutation from (seed, s); results do not depend on the
    worker count. A split whose test half has a constant target scores NaN and is
    left out of the median. The report's predictions are split 0's test half.

    Raises:
        ValidationError: On fewer than 4 rows or bad split settings
    """
    if data.n < 4:
        raise ValidationError(f"split harness needs at least 4 rows, got {data.n}")
    if n_splits < 1 or not 0 < train_frac < 1:
        raise ValidationError(f"need n_splits >= 1 and 0 < train_frac < 1, got {n_splits}, {train_frac}")

    def run(split):
        return _run_split(data, spec, train_frac, seed, split, standardize)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(n_splits)))
    else:
        results = [run(s) for s in range(n_splits)]

    train_r2 = tuple(r[0] for r in results)
    test_r2 = tuple(r[1] for r in results)
    notes: Dict[str, Any] = {}
    described = [r[2] for r in results]
    if described and "rank_deficient" in described[0]:
        notes["rank_deficient_splits"] = sum(d["rank_deficient"] for d in described)
    if described and "converged" in described[0]:
        notes["unconverged_splits"] = sum(not d["converged"] for d in described)
    report = FitReport(spec.name, train_r2, test_r2, median(test_r2), seed, notes, results[0][3])
    logger.info("%s: median test R2 %.5f over %d split(s)", spec.name, report.median_test_r2, n_splits)
    return report


@dataclass(frozen=True)
class TransferReport:
    model: str
    train_r2: float
    test_r2: float
    notes: Dict[str, Any] = field(default_factory=dict)
    predictions: Tuple[Tuple[int, int, float, float], ...] = field(default=(), repr=False)


def transfer_fit(train: Dataset, test: Dataset, spec: ModelSpec, seed: int = 0,
                 standardize: bool = False) -> TransferReport:
    """Fit on one snapshot's joined data and score on another's (spatio-temporal prediction)."""
    if train.X.shape[1] != test.X.shape[1]:
        raise ValidationError(f"feature widths differ: {train.X.shape[1]} vs {test.X.shape[1]}")
    if standardize:
        scaler = Standardizer(train.X)
        train, test = scaler.apply(train), scaler.apply(test)
    predictor = spec.fit(train, seed=_split_seed(seed, 0))
    predicted = predictor.predict(test.X)
    report = TransferReport(
        spec.name,
        _safe_r2(train.y, predictor.predict(train.X)),
        _safe_r2(test.y, predicted),
        _describe(predictor),
        _prediction_rows(test, predicted),
    )
    logger.info("%s transfer: test R2 %.5f on %d row(s)", spec.name, report.test_r2, test.n)
    return report


def write_fit_report(report: FitReport, path) -> None:
    """Write `split,train_r2,test_r2` rows followed by a `#summary` line."""
    df = pd.DataFrame({"split": range(len(report.test_r2)), "train_r2": report.train_r2, "test_r2": report.test_r2})
    text = df.to_csv(index=False, float_format="%.17g", lineterminator="\n")
    text += f"#summary model={report.model} median_test_r2={report.median_test_r2!r} seed={report.seed}\n"
    Path(path).write_text(text, encoding="utf-8")


def write_predictions(rows: Sequence[Tuple[int, int, float, float]], path) -> None:
    df = pd.DataFrame(list(rows), columns=["cluster_id", "node_id", "actual", "predicted"])
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
