"""Random-forest regression on CART trees built from bootstrap resamples.

Splits minimize the pooled child sum of squares over ``mtry`` columns
sampled without replacement at each node; every leaf keeps at least
``min_leaf`` rows. The delivery column is treated as an unordered
factor, split by ordering its levels on the node's target means.
Each tree draws its own generator from (seed, tree index), so results
are bit-identical for any thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .base import DesignMatrix, TrainedModel

_LEAF = -1


@dataclass
class _Tree:
    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)  # float, or level bitmask for factor splits
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    value: list = field(default_factory=list)
    oob: np.ndarray = None

    def add_node(self) -> int:
        self.feature.append(_LEAF)
        self.threshold.append(0.0)
        self.left.append(_LEAF)
        self.right.append(_LEAF)
        self.value.append(0.0)
        return len(self.feature) - 1

    def predict(self, F: np.ndarray, cat_col: Optional[int]) -> np.ndarray:
        out = np.empty(F.shape[0])
        self._fill(0, np.arange(F.shape[0]), F, cat_col, out)
        return out

    def _fill(self, node: int, rows: np.ndarray, F: np.ndarray,
              cat_col: Optional[int], out: np.ndarray) -> None:
        j = self.feature[node]
        if j == _LEAF:
            out[rows] = self.value[node]
            return
        v = F[rows, j]
        if cat_col is not None and j == cat_col:
            mask_bits = int(self.threshold[node])
            go_left = (np.left_shift(1, v.astype(np.int64)) & mask_bits) != 0
        else:
            go_left = v <= self.threshold[node]
        self._fill(self.left[node], rows[go_left], F, cat_col, out)
        self._fill(self.right[node], rows[~go_left], F, cat_col, out)


def _best_numeric_split(v, y, min_leaf):
    order = np.argsort(v, kind="stable")
    vs, ys = v[order], y[order]
    n = len(ys)
    csum = np.cumsum(ys)
    total = csum[-1]
    sizes = np.arange(1, n)
    valid = (vs[:-1] < vs[1:]) & (sizes >= min_leaf) & (n - sizes >= min_leaf)
    if not valid.any():
        return None
    left_sum = csum[:-1]
    score = np.full(n - 1, -np.inf)
    score[valid] = (left_sum[valid] ** 2 / sizes[valid]
                    + (total - left_sum[valid]) ** 2 / (n - sizes[valid]))
    k = int(np.argmax(score))
    return score[k], (vs[k] + vs[k + 1]) / 2.0


def _best_factor_split(v, y, min_leaf):
    levels, inverse = np.unique(v, return_inverse=True)
    if len(levels) < 2:
        return None
    counts = np.bincount(inverse)
    sums = np.bincount(inverse, weights=y)
    order = np.argsort(sums / counts, kind="stable")
    csum = np.cumsum(sums[order])
    ccnt = np.cumsum(counts[order])
    total, n = csum[-1], ccnt[-1]
    sizes = ccnt[:-1]
    valid = (sizes >= min_leaf) & (n - sizes >= min_leaf)
    if not valid.any():
        return None
    score = np.full(len(levels) - 1, -np.inf)
    score[valid] = (csum[:-1][valid] ** 2 / sizes[valid]
                    + (total - csum[:-1][valid]) ** 2 / (n - sizes[valid]))
    k = int(np.argmax(score))
    mask = 0
    for lv in levels[order[:k + 1]]:
        mask |= 1 << int(lv)
    return score[k], float(mask)


def _build_tree(F, y, cat_col, mtry, min_leaf, rng, sample_idx) -> _Tree:
    tree = _Tree()
    n_features = F.shape[1]

    def grow(rows: np.ndarray) -> int:
        node = tree.add_node()
        ys = y[rows]
        tree.value[node] = float(ys.mean())
        if len(rows) < 2 * min_leaf or np.all(ys == ys[0]):
            return node
        candidates = rng.choice(n_features, size=min(mtry, n_features), replace=False)
        best = (-np.inf, None, None)
        for j in candidates:
            v = F[rows, j]
            hit = (_best_factor_split(v, ys, min_leaf)
                   if cat_col is not None and j == cat_col
                   else _best_numeric_split(v, ys, min_leaf))
            if hit is not None and hit[0] > best[0]:
                best = (hit[0], j, hit[1])
        if best[1] is None:
            return node
        _, j, thr = best
        v = F[rows, j]
        if cat_col is not None and j == cat_col:
            go_left = (np.left_shift(1, v.astype(np.int64)) & int(thr)) != 0
        else:
            go_left = v <= thr
        tree.feature[node] = int(j)
        tree.threshold[node] = thr
        tree.left[node] = grow(rows[go_left])
        tree.right[node] = grow(rows[~go_left])
        return node

    grow(sample_idx)
    return tree


class RandomForestModel(TrainedModel):
    def __init__(self, schema, trees, cat_col, n_trees, mtry, min_leaf, seed):
        super().__init__("random_forest", schema)
        self.trees = trees
        self.cat_col = cat_col
        self.n_trees = n_trees
        self.mtry = mtry
        self.min_leaf = min_leaf
        self.seed = seed

    def _feature_block(self, design: DesignMatrix) -> np.ndarray:
        if design.delivery is None:
            return design.values
        return np.column_stack([design.values, design.delivery.astype(float)])

    def _predict(self, design: DesignMatrix) -> np.ndarray:
        F = self._feature_block(design)
        total = np.zeros(F.shape[0])
        for tree in self.trees:
            total += tree.predict(F, self.cat_col)
        return total / len(self.trees)

    def tree_predictions(self, design: DesignMatrix) -> np.ndarray:
        self.check_schema(design)
        F = self._feature_block(design)
        return np.stack([tree.predict(F, self.cat_col) for tree in self.trees])

    def oob_indices(self) -> list[np.ndarray]:
        return [tree.oob for tree in self.trees]


def fit_random_forest(design: DesignMatrix, y: np.ndarray, n_trees: int = 500,
                      mtry: Optional[int] = None, min_leaf: int = 5,
                      seed: int = 0, bootstrap: bool = True,
                      n_jobs: int = 1) -> RandomForestModel:
    y = np.asarray(y, dtype=float)
    cat_col = None if design.delivery is None else design.values.shape[1]
    F = (design.values if cat_col is None
         else np.column_stack([design.values, design.delivery.astype(float)]))
    n, p_eff = F.shape
    if mtry is None:
        mtry = max(1, p_eff // 3)
    base = seed & 0xFFFFFFFFFFFFFFFF

    def one_tree(i: int) -> _Tree:
        rng = np.random.default_rng((base, i))
        idx = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        tree = _build_tree(F, y, cat_col, mtry, min_leaf, rng, idx)
        tree.oob = np.setdiff1d(np.arange(n), np.unique(idx))
        return tree

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(one_tree, range(n_trees)))
    else:
        trees = [one_tree(i) for i in range(n_trees)]
    return RandomForestModel(design.schema, trees, cat_col, n_trees, mtry, min_leaf, seed)
