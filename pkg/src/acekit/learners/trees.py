"""Regression trees with exact splits, and the two ensembles built on them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import make_rng


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray    # -1 marks a leaf
    threshold: np.ndarray  # go left when x[feature] <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    depth: int

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.int64)
        rows = np.arange(x.shape[0])
        for _ in range(self.depth):
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                break
            go_left = x[rows, np.where(internal, f, 0)] <= self.threshold[node]
            node = np.where(internal, np.where(go_left, self.left[node], self.right[node]), node)
        return self.value[node]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "depth": self.depth,
        }

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(
            np.asarray(d["feature"], np.int64),
            np.asarray(d["threshold"], float),
            np.asarray(d["left"], np.int64),
            np.asarray(d["right"], np.int64),
            np.asarray(d["value"], float),
            int(d["depth"]),
        )


def _best_split(x: np.ndarray, y: np.ndarray, sorted_idx, features, min_leaf: int):
    """(gain, feature, threshold) of the best exact split, or None.

    ``sorted_idx[f]`` lists the node's rows in ascending order of feature f.
    """
    n = len(sorted_idx[features[0]])
    left_n = np.arange(min_leaf, n - min_leaf + 1)
    best = None
    for f in features:
        order = sorted_idx[f]
        xs = x[order, f]
        cs = np.cumsum(y[order])
        total = cs[-1]
        sl = cs[left_n - 1]
        gain = sl * sl / left_n + (total - sl) ** 2 / (n - left_n) - total * total / n
        # a split must fall between two distinct values
        valid = xs[left_n - 1] < xs[left_n]
        if not valid.any():
            continue
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain))
        g = float(gain[i])
        if g > 0 and (best is None or g > best[0]):
            lo, hi = xs[left_n[i] - 1], xs[left_n[i]]
            thr = lo + (hi - lo) / 2
            if not lo <= thr < hi:
                thr = lo
            best = (g, f, float(thr))
    return best


def fit_tree(
    x: np.ndarray,
    y: np.ndarray,
    max_depth: int,
    min_leaf: int,
    rng: np.random.Generator | None = None,
    max_features: int | None = None,
) -> Tree:
    n_rows, n_features = x.shape
    feature, threshold, left, right, value = [], [], [], [], []
    go_left = np.zeros(n_rows, dtype=bool)

    def grow(sorted_idx: list[np.ndarray], depth: int) -> int:
        node = len(feature)
        rows = sorted_idx[0]
        ys = y[rows]
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(ys.mean()))
        if depth >= max_depth or len(rows) < 2 * min_leaf or ys.min() == ys.max():
            return node
        if max_features is not None and max_features < n_features:
            feats = sorted(rng.choice(n_features, size=max_features, replace=False).tolist())
        else:
            feats = list(range(n_features))
        split = _best_split(x, y, sorted_idx, feats, min_leaf)
        if split is None:
            return node
        _, f, thr = split
        go_left[rows] = x[rows, f] <= thr
        # boolean filtering keeps each per-feature ordering sorted
        left_idx = [s[go_left[s]] for s in sorted_idx]
        right_idx = [s[~go_left[s]] for s in sorted_idx]
        feature[node] = int(f)
        threshold[node] = thr
        left[node] = grow(left_idx, depth + 1)
        right[node] = grow(right_idx, depth + 1)
        return node

    grow([np.argsort(x[:, f], kind="stable") for f in range(n_features)], 0)
    return Tree(
        np.asarray(feature, np.int64),
        np.asarray(threshold, float),
        np.asarray(left, np.int64),
        np.asarray(right, np.int64),
        np.asarray(value, float),
        max_depth,
    )


@dataclass(frozen=True)
class TreeEnsembleModel:
    """``base + weight * sum(trees)``; trees are summed in order."""

    base: float
    weight: float
    trees: tuple[Tree, ...]
    train_loss: tuple[float, ...] = ()

    def predict(self, x: np.ndarray) -> np.ndarray:
        acc = np.zeros(x.shape[0])
        for t in self.trees:
            acc = acc + t.predict(x)
        return self.base + self.weight * acc

    def to_dict(self) -> dict:
        return {
            "base": self.base,
            "weight": self.weight,
            "trees": [t.to_dict() for t in self.trees],
            "train_loss": list(self.train_loss),
        }

    @classmethod
    def from_dict(cls, d) -> "TreeEnsembleModel":
        return cls(
            float(d["base"]),
            float(d["weight"]),
            tuple(Tree.from_dict(t) for t in d["trees"]),
            tuple(float(v) for v in d.get("train_loss", ())),
        )


def fit_boosted_trees(
    x, y, *, n_trees, max_depth, learning_rate, min_leaf, subsample, seed
) -> TreeEnsembleModel:
    """Squared-error gradient boosting from the mean.

    ``train_loss[r]`` is the training MSE after ``r`` rounds.
    """
    rng = make_rng(seed)
    n = len(y)
    base = float(np.mean(y))
    # trees enter the prediction as weight * sum, so keep the running sum too
    acc = np.zeros(n)
    fitted = np.full(n, base)
    losses = [float(np.mean((y - fitted) ** 2))]
    trees = []
    n_sub = max(1, int(round(subsample * n)))
    for _ in range(n_trees):
        resid = y - fitted
        if n_sub < n:
            rows = np.sort(rng.choice(n, size=n_sub, replace=False))
            tree = fit_tree(x[rows], resid[rows], max_depth, min_leaf)
        else:
            tree = fit_tree(x, resid, max_depth, min_leaf)
        trees.append(tree)
        acc = acc + tree.predict(x)
        fitted = base + learning_rate * acc
        losses.append(float(np.mean((y - fitted) ** 2)))
    return TreeEnsembleModel(base, float(learning_rate), tuple(trees), tuple(losses))


def fit_random_forest(x, y, *, n_trees, max_depth, min_leaf, seed) -> TreeEnsembleModel:
    """Bagged trees with a random feature subset (a third, at least one) per split."""
    rng = make_rng(seed)
    n, p = x.shape
    max_features = max(1, p // 3)
    trees = []
    for _ in range(n_trees):
        rows = rng.integers(0, n, size=n)
        trees.append(fit_tree(x[rows], y[rows], max_depth, min_leaf, rng, max_features))
    if not trees:
        return TreeEnsembleModel(float(np.mean(y)), 0.0, ())
    return TreeEnsembleModel(0.0, 1.0 / n_trees, tuple(trees))
