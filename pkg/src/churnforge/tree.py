"""Weighted binary decision trees and bagged ensembles, built on numpy.

Split search is vectorized across the sampled feature block at each
node (one argsort plus prefix sums), which keeps deep trees usable at
tens of thousands of candidate features. Trees support sample weights
(for boosting), per-split feature subsampling (for bagging), and both
Gini impurity (classification) and variance (regression) criteria.
"""

from __future__ import annotations

import numpy as np

_LEAF = -1


class DecisionTree:
    """Single CART-style tree over float features and 0/1 or real targets."""

    def __init__(self, max_depth: int | None = None,
                 max_features: int | None = None,
                 min_samples_leaf: int = 1,
                 task: str = "classify",
                 rng: np.random.Generator | None = None):
        if task not in ("classify", "regress"):
            raise ValueError(f"unknown task {task!r}")
        self.max_depth = max_depth
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf
        self.task = task
        self.rng = rng or np.random.default_rng(0)
        self.feature: np.ndarray | None = None
        self.threshold: np.ndarray | None = None
        self.left: np.ndarray | None = None
        self.right: np.ndarray | None = None
        self.value: np.ndarray | None = None
        self.importances_: np.ndarray | None = None

    def fit(self, X: np.ndarray, y: np.ndarray,
            sample_weight: np.ndarray | None = None) -> "DecisionTree":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n, d = X.shape
        w = np.ones(n) if sample_weight is None else \
            np.asarray(sample_weight, dtype=np.float64)
        self.importances_ = np.zeros(d)

        feature, threshold, left, right, value = [], [], [], [], []
        # stack of (node_id, row index array, depth)
        feature.append(_LEAF)
        threshold.append(0.0)
        left.append(_LEAF)
        right.append(_LEAF)
        value.append(0.0)
        stack = [(0, np.arange(n), 0)]
        while stack:
            node, rows, depth = stack.pop()
            yr, wr = y[rows], w[rows]
            wsum = wr.sum()
            value[node] = self._leaf_value(yr, wr, wsum)
            imp = self._impurity(yr, wr, wsum)
            if (imp <= 1e-15 or len(rows) < 2 * self.min_samples_leaf
                    or (self.max_depth is not None and depth >= self.max_depth)):
                continue
            split = self._best_split(X, rows, yr, wr, wsum)
            if split is None:
                continue
            feat, thr, decrease = split
            self.importances_[feat] += decrease
            go_left = X[rows, feat] <= thr
            feature[node] = feat
            threshold[node] = thr
            for child_rows, slot in ((rows[go_left], "l"),
                                     (rows[~go_left], "r")):
                child = len(feature)
                feature.append(_LEAF)
                threshold.append(0.0)
                left.append(_LEAF)
                right.append(_LEAF)
                value.append(0.0)
                if slot == "l":
                    left[node] = child
                else:
                    right[node] = child
                stack.append((child, child_rows, depth + 1))

        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)
        return self

    def _leaf_value(self, y, w, wsum):
        if wsum <= 0:
            return 0.0
        mean = float((w * y).sum() / wsum)
        return mean

    def _impurity(self, y, w, wsum):
        if wsum <= 0:
            return 0.0
        if self.task == "classify":
            p = (w * y).sum() / wsum
            return 2.0 * p * (1.0 - p)
        mean = (w * y).sum() / wsum
        return float((w * (y - mean) ** 2).sum() / wsum)

    def _best_split(self, X, rows, yr, wr, wsum):
        d = X.shape[1]
        if self.max_features is not None and self.max_features < d:
            feats = self.rng.choice(d, size=self.max_features, replace=False)
        else:
            feats = np.arange(d)
        Xs = X[np.ix_(rows, feats)]
        order = np.argsort(Xs, axis=0, kind="stable")
        xs = np.take_along_axis(Xs, order, axis=0)
        ws = wr[order]
        ys = yr[order]

        cw = np.cumsum(ws, axis=0)
        cwy = np.cumsum(ws * ys, axis=0)
        n = len(rows)
        lw = cw[:-1]
        rw = wsum - lw
        lwy = cwy[:-1]
        rwy = cwy[-1] - lwy

        with np.errstate(invalid="ignore", divide="ignore"):
            if self.task == "classify":
                pl = np.where(lw > 0, lwy / lw, 0.0)
                pr = np.where(rw > 0, rwy / rw, 0.0)
                cost = lw * 2 * pl * (1 - pl) + rw * 2 * pr * (1 - pr)
            else:
                cwy2 = np.cumsum(ws * ys * ys, axis=0)
                lwy2 = cwy2[:-1]
                rwy2 = cwy2[-1] - lwy2
                sse_l = lwy2 - np.where(lw > 0, lwy ** 2 / lw, 0.0)
                sse_r = rwy2 - np.where(rw > 0, rwy ** 2 / rw, 0.0)
                cost = sse_l + sse_r

        valid = xs[1:] > xs[:-1]
        if self.min_samples_leaf > 1:
            pos = np.arange(1, n)[:, None]
            valid &= (pos >= self.min_samples_leaf) & \
                     (n - pos >= self.min_samples_leaf)
        cost = np.where(valid & (lw > 0) & (rw > 0), cost, np.inf)
        if not np.isfinite(cost).any():
            return None
        i, j = np.unravel_index(np.argmin(cost), cost.shape)
        feat = int(feats[j])
        thr = float((xs[i, j] + xs[i + 1, j]) / 2.0)
        parent_cost = wsum * self._impurity(yr, wr, wsum)
        decrease = float(parent_cost - cost[i, j])
        return feat, thr, max(decrease, 0.0)

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        """Leaf value per row: class-1 weight fraction or leaf mean."""
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(len(X))
        idx = np.arange(len(X))
        stack = [(0, idx)]
        while stack:
            node, rows_idx = stack.pop()
            if len(rows_idx) == 0:
                continue
            if self.feature[node] == _LEAF:
                out[rows_idx] = self.value[node]
                continue
            go_left = X[rows_idx, self.feature[node]] <= self.threshold[node]
            stack.append((self.left[node], rows_idx[go_left]))
            stack.append((self.right[node], rows_idx[~go_left]))
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        vals = self.predict_value(X)
        if self.task == "classify":
            return (vals > 0.5).astype(np.float64)
        return vals


class BaggedForest:
    """Bootstrap-aggregated trees with per-split feature subsampling."""

    def __init__(self, n_trees: int = 100, max_depth: int | None = 12,
                 max_features: str | int | None = "sqrt",
                 bootstrap: bool = True, task: str = "classify",
                 seed: int = 0):
        if n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.task = task
        self.seed = seed
        self.trees: list[DecisionTree] = []
        self.feature_importances_: np.ndarray | None = None

    def _resolve_max_features(self, d: int) -> int | None:
        if self.max_features == "sqrt":
            return max(1, int(np.sqrt(d)))
        return self.max_features

    def fit(self, X: np.ndarray, y: np.ndarray) -> "BaggedForest":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n, d = X.shape
        mf = self._resolve_max_features(d)
        self.trees = []
        raw = np.zeros(d)
        for t in range(self.n_trees):
            rng = np.random.default_rng([self.seed, t])
            rows = rng.integers(0, n, size=n) if self.bootstrap else np.arange(n)
            tree = DecisionTree(max_depth=self.max_depth, max_features=mf,
                                task=self.task, rng=rng)
            tree.fit(X[rows], y[rows])
            raw += tree.importances_
            self.trees.append(tree)
        total = raw.sum()
        self.feature_importances_ = raw / total if total > 0 else raw
        return self

    def predict_score(self, X: np.ndarray) -> np.ndarray:
        """Mean of tree votes (classification) or tree means (regression)."""
        acc = np.zeros(len(X))
        for tree in self.trees:
            acc += tree.predict(X)
        return acc / len(self.trees)
