"""Squared-error gradient boosting over greedy regression trees.

Each tree is fitted to the current residuals. A leaf holding residual sum
``G`` over ``n`` rows takes the value ``G / (n + reg_lambda)``, and a split is
scored by

    gain = G_L**2 / (n_L + lam) + G_R**2 / (n_R + lam) - G**2 / (n + lam)

which with ``lam = 0`` is the usual reduction in sum of squared errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LEAF = -1

# splits whose gain is below this fraction of the node's sum of squares are noise
_GAIN_RTOL = 1e-12


@dataclass
class TreeParams:
    n_trees: int = 500
    max_depth: int = 4
    shrinkage: float = 0.1
    reg_lambda: float = 1.0
    min_samples_leaf: int = 1

    def __post_init__(self):
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValueError(f"shrinkage must lie in (0, 1], got {self.shrinkage}")
        if self.reg_lambda < 0 or self.n_trees < 0 or self.max_depth < 0 or self.min_samples_leaf < 1:
            raise ValueError("invalid boosting hyperparameters")


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    gain: float


@dataclass
class RegressionTree:
    """Flat node arrays; ``feature[i] == LEAF`` marks a leaf holding ``value[i]``.

    Routing: ``x[feature] <= threshold`` goes left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    max_depth: int = 0

    @classmethod
    def leaf(cls, value: float = 0.0) -> "RegressionTree":
        return cls(np.array([LEAF], np.int32), np.zeros(1), np.array([LEAF], np.int32),
                   np.array([LEAF], np.int32), np.array([float(value)]))

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def depth(self) -> int:
        def walk(i):
            if self.feature[i] == LEAF:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        node = np.zeros(X.shape[0], dtype=np.intp)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            inner = feat != LEAF
            if not inner.any():
                return self.value[node]
            go_left = X[rows[inner], feat[inner]] <= self.threshold[node[inner]]
            node[inner] = np.where(go_left, self.left[node[inner]], self.right[node[inner]])


@dataclass
class GradientBoostedForest:
    trees: list[RegressionTree]
    shrinkage: float
    base_score: float
    n_features: int
    params: TreeParams = field(default_factory=TreeParams)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ValueError(f"dimension mismatch: got {X.shape[1]} features, forest expects {self.n_features}")
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += tree.predict(X)
        return self.base_score + self.shrinkage * total

    def staged_predict(self, X):
        """Yield predictions after 0, 1, ..., n_trees trees."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        total = np.zeros(X.shape[0])
        yield self.base_score + self.shrinkage * total
        for tree in self.trees:
            total += tree.predict(X)
            yield self.base_score + self.shrinkage * total


def predict_forest(forest: GradientBoostedForest, x) -> float:
    """Forest output for one input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("predict_forest takes a single vector; use forest.predict for batches")
    return float(forest.predict(x[None])[0])


def _split_scan(sorted_x: np.ndarray, sorted_r: np.ndarray, params: TreeParams):
    """Gains for every cut position of a stack of pre-sorted columns.

    ``sorted_x``/``sorted_r`` are ``(F, n)``. Returns ``gains (F, n-1)`` with
    invalid cuts set to ``-inf``.
    """
    n = sorted_x.shape[1]
    lam = params.reg_lambda
    total = sorted_r[0].sum()
    G_left = np.cumsum(sorted_r, axis=1)[:, :-1]
    G_right = total - G_left
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    with np.errstate(divide="ignore", invalid="ignore"):
        gains = (G_left ** 2 / (n_left + lam) + G_right ** 2 / (n_right + lam)
                 - total ** 2 / (n + lam))
    valid = sorted_x[:, 1:] > sorted_x[:, :-1]
    k = params.min_samples_leaf
    valid[:, : k - 1] = False
    valid[:, n - k:] = False
    return np.where(valid, gains, -np.inf)


def _midpoint(a: float, b: float) -> float:
    mid = a + (b - a) / 2.0
    return a if mid >= b else mid


def best_split(X, residuals, params: TreeParams | None = None) -> Split | None:
    """Best (feature, threshold) for one node, or ``None`` when it should stay a leaf.

    Thresholds are midpoints between consecutive distinct values. Ties go to the
    lowest feature index, then the lowest threshold.
    """
    params = params or TreeParams()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    r = np.asarray(residuals, dtype=np.float64)
    order = np.argsort(X, axis=0, kind="stable").T
    return _best_split_sorted(X, r, order, params)


def _best_split_sorted(X, r, order, params) -> Split | None:
    n = order.shape[1]
    if n < 2 * params.min_samples_leaf:
        return None
    sorted_x = np.take_along_axis(X.T, order, axis=1)
    sorted_r = r[order]
    gains = _split_scan(sorted_x, sorted_r, params)
    flat = int(np.argmax(gains))
    f, pos = divmod(flat, n - 1)
    gain = gains[f, pos]
    if not np.isfinite(gain) or gain <= _GAIN_RTOL * max(float(r @ r), np.finfo(float).tiny):
        return None
    return Split(f, _midpoint(sorted_x[f, pos], sorted_x[f, pos + 1]), float(gain))


def _fit_tree(X, r, order, params: TreeParams) -> tuple[RegressionTree, np.ndarray]:
    """Grow one tree on residuals ``r``; also return its predictions on the training rows."""
    feature, threshold, left, right, value = [], [], [], [], []
    fitted = np.empty(X.shape[0])
    # (node id, member mask, depth); nodes are numbered in creation order
    stack = [(0, np.ones(X.shape[0], dtype=bool), 0)]
    feature.append(LEAF); threshold.append(0.0); left.append(LEAF); right.append(LEAF); value.append(0.0)
    while stack:
        node, mask, depth = stack.pop()
        split = None
        if depth < params.max_depth:
            node_order = order if mask.all() else order[mask[order]].reshape(order.shape[0], -1)
            split = _best_split_sorted(X, np.where(mask, r, 0.0), node_order, params)
        if split is None:
            members = r[mask]
            leaf = members.sum() / (members.size + params.reg_lambda)
            value[node] = float(leaf)
            fitted[mask] = leaf
            continue
        go_left = X[:, split.feature] <= split.threshold
        ids = []
        for _ in range(2):
            ids.append(len(feature))
            feature.append(LEAF); threshold.append(0.0); left.append(LEAF); right.append(LEAF); value.append(0.0)
        feature[node], threshold[node] = split.feature, split.threshold
        left[node], right[node] = ids
        stack.append((ids[1], mask & ~go_left, depth + 1))
        stack.append((ids[0], mask & go_left, depth + 1))
    tree = RegressionTree(np.array(feature, np.int32), np.array(threshold, np.float64),
                          np.array(left, np.int32), np.array(right, np.int32),
                          np.array(value, np.float64), params.max_depth)
    return tree, fitted


def fit_forest(X, targets, params: TreeParams | None = None, seed=None) -> GradientBoostedForest:
    """Stagewise boosting of ``params.n_trees`` trees on squared error.

    Fitting is fully deterministic; ``seed`` is accepted for interface symmetry
    and unused because there is no row or column subsampling. Rows are put in
    a canonical order first, so shuffling the input leaves the forest unchanged.
    """
    params = params or TreeParams()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(targets, dtype=np.float64).ravel()
    if X.shape[0] == 0 or y.shape[0] != X.shape[0]:
        raise ValueError(f"need a non-empty training set with aligned targets ({X.shape[0]} rows, {y.shape[0]} targets)")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite target in boosting training data")
    canon = np.lexsort(np.column_stack([X, y]).T[::-1])
    X, y = X[canon], y[canon]

    base = float(y.mean())
    order = np.argsort(X, axis=0, kind="stable").T
    current = np.full(y.shape[0], base)
    trees = []
    for _ in range(params.n_trees):
        tree, fitted = _fit_tree(X, y - current, order, params)
        trees.append(tree)
        current = current + params.shrinkage * fitted
    return GradientBoostedForest(trees, params.shrinkage, base, X.shape[1], params)
