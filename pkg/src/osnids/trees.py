"""Decision-tree building blocks for the meta-classifier families.

All trees share one flat node-array representation (feature == -1 marks a
leaf), which keeps prediction vectorized and serialization trivial. Three
builders exist: Gini CART for bagged forests, and two Newton-step boosting
builders that differ only in growth order (level-by-level to a fixed depth
versus best-gain leaf-wise under a leaf cap).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

_GAIN_TOL = 1e-12


@dataclass
class TreeNodes:
    feature: np.ndarray  # int32; -1 marks a leaf
    threshold: np.ndarray  # float64
    left: np.ndarray  # int32
    right: np.ndarray  # int32
    value: np.ndarray  # float64 leaf outputs; 0 for internal nodes

    def __len__(self) -> int:
        return len(self.feature)


class _Builder:
    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def add(self, value: float = 0.0) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def make_split(self, node: int, feature: int, threshold: float, left: int, right: int) -> None:
        self.feature[node] = feature
        self.threshold[node] = threshold
        self.left[node] = left
        self.right[node] = right
        self.value[node] = 0.0

    def finish(self) -> TreeNodes:
        return TreeNodes(
            feature=np.array(self.feature, dtype=np.int32),
            threshold=np.array(self.threshold, dtype=np.float64),
            left=np.array(self.left, dtype=np.int32),
            right=np.array(self.right, dtype=np.int32),
            value=np.array(self.value, dtype=np.float64),
        )


def predict_tree(nodes: TreeNodes, X: np.ndarray) -> np.ndarray:
    """Route every row to its leaf; returns the leaf values."""
    idx = np.zeros(X.shape[0], dtype=np.int64)
    active = nodes.feature[idx] >= 0
    while active.any():
        rows = np.flatnonzero(active)
        node = idx[rows]
        go_left = X[rows, nodes.feature[node]] <= nodes.threshold[node]
        idx[rows] = np.where(go_left, nodes.left[node], nodes.right[node])
        active = nodes.feature[idx] >= 0
    return nodes.value[idx]


# --- Gini CART (classification) ---


def _best_gini_split(X, y, feature_ids):
    """Best (feature, threshold, impurity decrease) over candidate features."""
    n = y.shape[0]
    pos = y.sum()
    p1 = pos / n
    parent = 1.0 - p1 * p1 - (1.0 - p1) ** 2
    best = None
    for f in feature_ids:
        x = X[:, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        valid = np.flatnonzero(xs[:-1] < xs[1:])
        if valid.size == 0:
            continue
        pos_l = np.cumsum(y[order])[valid]
        n_l = valid + 1.0
        n_r = n - n_l
        pos_r = pos - pos_l
        gini_l = 1.0 - (pos_l / n_l) ** 2 - ((n_l - pos_l) / n_l) ** 2
        gini_r = 1.0 - (pos_r / n_r) ** 2 - ((n_r - pos_r) / n_r) ** 2
        decrease = parent - (n_l * gini_l + n_r * gini_r) / n
        j = int(np.argmax(decrease))
        if decrease[j] > _GAIN_TOL and (best is None or decrease[j] > best[0]):
            thr = (xs[valid[j]] + xs[valid[j] + 1]) / 2.0
            best = (float(decrease[j]), int(f), float(thr))
    return best


def build_gini_tree(
    X: np.ndarray,
    y: np.ndarray,
    max_depth: int,
    rng: np.random.Generator,
    max_features: int,
    min_samples_split: int = 2,
) -> TreeNodes:
    """CART with Gini impurity; leaf value is the class-1 fraction."""
    n_features = X.shape[1]
    builder = _Builder()

    def grow(idx: np.ndarray, depth: int) -> int:
        ysub = y[idx]
        mean = float(ysub.mean())
        if depth >= max_depth or idx.size < min_samples_split or mean in (0.0, 1.0):
            return builder.add(mean)
        if max_features < n_features:
            feats = np.sort(rng.choice(n_features, size=max_features, replace=False))
        else:
            feats = np.arange(n_features)
        best = _best_gini_split(X[idx], ysub, feats)
        if best is None:
            return builder.add(mean)
        _, f, thr = best
        node = builder.add()
        go_left = X[idx, f] <= thr
        left = grow(idx[go_left], depth + 1)
        right = grow(idx[~go_left], depth + 1)
        builder.make_split(node, f, thr, left, right)
        return node

    grow(np.arange(X.shape[0]), 0)
    return builder.finish()


# --- Newton boosting trees (regression on gradient/hessian) ---


def _best_newton_split(X, g, h, reg_lambda):
    """Best split by the usual second-order gain; None when nothing helps."""
    G, H = g.sum(), h.sum()
    parent = G * G / (H + reg_lambda)
    best = None
    for f in range(X.shape[1]):
        x = X[:, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        valid = np.flatnonzero(xs[:-1] < xs[1:])
        if valid.size == 0:
            continue
        G_l = np.cumsum(g[order])[valid]
        H_l = np.cumsum(h[order])[valid]
        gain = 0.5 * (
            G_l**2 / (H_l + reg_lambda) + (G - G_l) ** 2 / (H - H_l + reg_lambda) - parent
        )
        j = int(np.argmax(gain))
        if gain[j] > _GAIN_TOL and (best is None or gain[j] > best[0]):
            thr = (xs[valid[j]] + xs[valid[j] + 1]) / 2.0
            best = (float(gain[j]), int(f), float(thr))
    return best


def _leaf_weight(g, h, reg_lambda) -> float:
    return float(-g.sum() / (h.sum() + reg_lambda))


def build_boost_tree_depthwise(X, g, h, max_depth: int, reg_lambda: float = 1.0) -> TreeNodes:
    """Grow level-by-level to a fixed depth, splitting while gain is positive."""
    builder = _Builder()

    def grow(idx: np.ndarray, depth: int) -> int:
        if depth >= max_depth or idx.size < 2:
            return builder.add(_leaf_weight(g[idx], h[idx], reg_lambda))
        best = _best_newton_split(X[idx], g[idx], h[idx], reg_lambda)
        if best is None:
            return builder.add(_leaf_weight(g[idx], h[idx], reg_lambda))
        _, f, thr = best
        node = builder.add()
        go_left = X[idx, f] <= thr
        left = grow(idx[go_left], depth + 1)
        right = grow(idx[~go_left], depth + 1)
        builder.make_split(node, f, thr, left, right)
        return node

    grow(np.arange(X.shape[0]), 0)
    return builder.finish()


def build_boost_tree_leafwise(X, g, h, max_leaves: int, reg_lambda: float = 1.0) -> TreeNodes:
    """Repeatedly split the leaf with the largest gain until the leaf cap."""
    builder = _Builder()
    root_idx = np.arange(X.shape[0])
    root = builder.add(_leaf_weight(g, h, reg_lambda))

    heap: list = []
    counter = 0

    def offer(node: int, idx: np.ndarray) -> None:
        nonlocal counter
        if idx.size < 2:
            return
        best = _best_newton_split(X[idx], g[idx], h[idx], reg_lambda)
        if best is not None:
            heapq.heappush(heap, (-best[0], counter, node, idx, best[1], best[2]))
            counter += 1

    offer(root, root_idx)
    n_leaves = 1
    while heap and n_leaves < max_leaves:
        _, _, node, idx, f, thr = heapq.heappop(heap)
        go_left = X[idx, f] <= thr
        left_idx, right_idx = idx[go_left], idx[~go_left]
        left = builder.add(_leaf_weight(g[left_idx], h[left_idx], reg_lambda))
        right = builder.add(_leaf_weight(g[right_idx], h[right_idx], reg_lambda))
        builder.make_split(node, f, thr, left, right)
        n_leaves += 1
        offer(left, left_idx)
        offer(right, right_idx)
    return builder.finish()


# --- ensembles over the builders ---


@dataclass
class RandomForest:
    """Bagged Gini CARTs with per-split feature subsampling."""

    n_trees: int = 100
    max_depth: int = 8
    seed: int = 0
    trees: list[TreeNodes] = field(default_factory=list)

    def fit(self, X: np.ndarray, y: np.ndarray) -> "RandomForest":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n, d = X.shape
        max_features = max(1, int(round(np.sqrt(d))))
        rng = np.random.default_rng(self.seed)
        self.trees = []
        for _ in range(self.n_trees):
            boot = rng.integers(0, n, size=n)
            self.trees.append(
                build_gini_tree(X[boot], y[boot], self.max_depth, rng, max_features)
            )
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.mean([predict_tree(t, X) for t in self.trees], axis=0)


@dataclass
class GradientBoostedTrees:
    """Boosted trees on the logistic loss with Newton leaf weights."""

    growth: str = "depthwise"  # or "leafwise"
    rounds: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    max_leaves: int = 15
    reg_lambda: float = 1.0
    base_score: float = 0.0
    trees: list[TreeNodes] = field(default_factory=list)

    def fit(self, X: np.ndarray, y: np.ndarray) -> "GradientBoostedTrees":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        prior = float(np.clip(y.mean(), 1e-6, 1.0 - 1e-6))
        self.base_score = float(np.log(prior / (1.0 - prior)))
        F = np.full(X.shape[0], self.base_score)
        self.trees = []
        for _ in range(self.rounds):
            p = 1.0 / (1.0 + np.exp(-F))
            g = p - y
            h = np.maximum(p * (1.0 - p), 1e-12)
            if self.growth == "depthwise":
                tree = build_boost_tree_depthwise(X, g, h, self.max_depth, self.reg_lambda)
            else:
                tree = build_boost_tree_leafwise(X, g, h, self.max_leaves, self.reg_lambda)
            self.trees.append(tree)
            F = F + self.learning_rate * predict_tree(tree, X)
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        F = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            F = F + self.learning_rate * predict_tree(tree, X)
        return 1.0 / (1.0 + np.exp(-F))
