"""Honest CART and honest random forests over the joint (x, z) feature space.

A fitted tree exposes the weight function: for a query point the weight of
training row ``i`` is ``1/N`` when ``i`` is one of the ``N`` estimation rows
in the query's leaf and 0 otherwise. Splits are chosen on a structure half
of the training rows only, so the weights never depend on the outcomes they
average.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._kernels import route, split_scan, weight_aggregates
from .data import DataError, ObservationalDataset

_LEAF = -1


@dataclass(frozen=True)
class TreeParams:
    """Hyperparameters shared by trees and forests.

    min_leaf is the minimum number of estimation rows per leaf and
    max_leaves caps the number of leaves (``None`` means no cap).
    """

    min_leaf: int = 5
    max_leaves: Optional[int] = None
    honesty_fraction: float = 0.5
    max_depth: Optional[int] = None
    max_features: Optional[int] = None
    min_structure_leaf: int = 1

    def __post_init__(self):
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.max_leaves is not None and self.max_leaves < 1:
            raise ValueError("max_leaves must be >= 1")
        if not 0.0 < self.honesty_fraction < 1.0:
            raise ValueError("honesty_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "min_leaf": self.min_leaf,
            "max_leaves": self.max_leaves,
            "honesty_fraction": self.honesty_fraction,
            "max_depth": self.max_depth,
            "max_features": self.max_features,
            "min_structure_leaf": self.min_structure_leaf,
        }


@dataclass(frozen=True)
class WeightVector:
    """Sparse nonnegative weights over the n training rows."""

    indices: np.ndarray
    values: np.ndarray
    n: int

    def dense(self) -> np.ndarray:
        out = np.zeros(self.n)
        out[self.indices] = self.values
        return out

    def sum(self) -> float:
        return float(self.values.sum())

    def max(self) -> float:
        return float(self.values.max()) if self.values.size else 0.0

    def sum_of_squares(self) -> float:
        return float(np.dot(self.values, self.values))

    @classmethod
    def from_dense(cls, w) -> "WeightVector":
        w = np.asarray(w, dtype=float)
        idx = np.flatnonzero(w)
        return cls(idx, w[idx], w.size)


@dataclass(frozen=True)
class LeafRegion:
    """Axis-aligned leaf box; intervals are (lower, upper], except that a
    coordinate clipped to an outer bound is closed there."""

    leaf_id: int
    lower: np.ndarray
    upper: np.ndarray
    estimation_indices: np.ndarray

    def contains(self, point, closed: bool = True) -> bool:
        point = np.asarray(point, dtype=float)
        if closed:
            return bool(np.all(point >= self.lower) and np.all(point <= self.upper))
        return bool(np.all(point > self.lower) and np.all(point <= self.upper))


def _best_split(features, targets, s_rows, e_rows, candidates, params: TreeParams):
    """Exhaustive sum-of-squares scan; returns (gain, feature, threshold) or None."""
    y = targets[s_rows]
    if y.shape[0] < 2:
        return None
    total = float(((y - y.mean(axis=0)) ** 2).sum())
    if total <= 0.0:
        return None
    gain, f, thr = split_scan(features, y, s_rows, e_rows, np.fromiter(candidates, dtype=np.int64),
                              params.min_leaf, max(params.min_structure_leaf, 1), total)
    return None if f < 0 else (float(gain), int(f), float(thr))


class TreeModel:
    """Fitted honest regression tree stored as flat node arrays."""

    def __init__(self, feature, threshold, left, right, leaf_of_node, leaf_indices,
                 n_train, n_features, params: TreeParams, estimation_rows=None, structure_rows=None):
        self.feature = np.asarray(feature, dtype=int)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=int)
        self.right = np.asarray(right, dtype=int)
        self.leaf_of_node = np.asarray(leaf_of_node, dtype=int)
        self.leaf_indices = [np.asarray(ix, dtype=int) for ix in leaf_indices]
        self.n_train = int(n_train)
        self.n_features = int(n_features)
        self.params = params
        self.estimation_rows = None if estimation_rows is None else np.asarray(estimation_rows, dtype=int)
        self.structure_rows = None if structure_rows is None else np.asarray(structure_rows, dtype=int)
        self.node_of_leaf = np.flatnonzero(self.leaf_of_node >= 0)[np.argsort(self.leaf_of_node[self.leaf_of_node >= 0])]
        self.leaf_sizes = np.array([ix.size for ix in self.leaf_indices], dtype=int)
        self.leaf_ptr = np.concatenate([[0], np.cumsum(self.leaf_sizes)])
        self.leaf_flat = (np.concatenate(self.leaf_indices) if self.leaf_indices else np.zeros(0, int))
        self._boxes = None

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_indices)

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):
            if self.feature[node] != _LEAF:
                depth[self.left[node]] = depth[node] + 1
                depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def apply(self, Q) -> np.ndarray:
        """Leaf id for each row of Q (rows go left when value <= threshold)."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if Q.shape[1] != self.n_features:
            raise ValueError(f"query has {Q.shape[1]} features, model expects {self.n_features}")
        node = np.zeros(Q.shape[0], dtype=int)
        rows = np.arange(Q.shape[0])
        while True:
            f = self.feature[node]
            internal = f != _LEAF
            if not internal.any():
                break
            r, nd = rows[internal], node[internal]
            go_left = Q[r, f[internal]] <= self.threshold[nd]
            node[internal] = np.where(go_left, self.left[nd], self.right[nd])
        return self.leaf_of_node[node]

    def weights(self, q) -> WeightVector:
        leaf = int(self.apply(np.asarray(q, dtype=float).reshape(1, -1))[0])
        idx = self.leaf_indices[leaf]
        return WeightVector(idx, np.full(idx.size, 1.0 / idx.size), self.n_train)

    @property
    def stacked(self) -> "_StackedTrees":
        if getattr(self, "_stacked", None) is None:
            self._stacked = _StackedTrees([self])
        return self._stacked

    def weight_triplets(self, Q):
        return self.stacked.triplets(np.atleast_2d(np.asarray(Q, dtype=float)))

    def weight_matrix(self, Q) -> np.ndarray:
        """Dense (m, n_train) matrix whose rows are the query weight vectors."""
        return self.stacked.dense_weights(np.atleast_2d(np.asarray(Q, dtype=float)), self.n_train)

    def node_boxes(self):
        if self._boxes is None:
            D = self.n_features
            lo = np.full((self.n_nodes, D), -np.inf)
            hi = np.full((self.n_nodes, D), np.inf)
            for node in range(self.n_nodes):
                f = self.feature[node]
                if f == _LEAF:
                    continue
                for child in (self.left[node], self.right[node]):
                    lo[child] = lo[node]
                    hi[child] = hi[node]
                hi[self.left[node], f] = self.threshold[node]
                lo[self.right[node], f] = self.threshold[node]
            self._boxes = (lo, hi)
        return self._boxes

    def leaf_boxes(self):
        lo, hi = self.node_boxes()
        return lo[self.node_of_leaf], hi[self.node_of_leaf]

    def to_dict(self) -> dict:
        return {
            "kind": "tree",
            "feature": self.feature.tolist(),
            "threshold": [float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "leaf_of_node": self.leaf_of_node.tolist(),
            "leaf_indices": [ix.tolist() for ix in self.leaf_indices],
            "n_train": self.n_train,
            "n_features": self.n_features,
            "params": self.params.to_dict(),
            "estimation_rows": None if self.estimation_rows is None else self.estimation_rows.tolist(),
            "structure_rows": None if self.structure_rows is None else self.structure_rows.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TreeModel":
        return cls(
            payload["feature"], payload["threshold"], payload["left"], payload["right"],
            payload["leaf_of_node"], payload["leaf_indices"], payload["n_train"],
            payload["n_features"], TreeParams(**payload["params"]),
            payload.get("estimation_rows"), payload.get("structure_rows"),
        )


class ForestModel:
    """Uniform average of honest trees fitted on bootstrap resamples."""

    def __init__(self, trees: Sequence[TreeModel]):
        if len(trees) < 1:
            raise ValueError("a forest needs at least one tree")
        self.trees = list(trees)
        self.n_train = self.trees[0].n_train
        self.n_features = self.trees[0].n_features
        self.params = self.trees[0].params
        self._stacked = None

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def weights(self, q) -> WeightVector:
        return WeightVector.from_dense(self.weight_matrix(np.asarray(q, dtype=float).reshape(1, -1))[0])

    @property
    def stacked(self) -> "_StackedTrees":
        if self._stacked is None:
            self._stacked = _StackedTrees(self.trees)
        return self._stacked

    def apply(self, Q) -> np.ndarray:
        """(m, T) array of global leaf ids."""
        return self.stacked.apply(np.atleast_2d(np.asarray(Q, dtype=float)))

    def weight_triplets(self, Q):
        return self.stacked.triplets(np.atleast_2d(np.asarray(Q, dtype=float)))

    def weight_matrix(self, Q) -> np.ndarray:
        return self.stacked.dense_weights(np.atleast_2d(np.asarray(Q, dtype=float)), self.n_train)

    def to_dict(self) -> dict:
        return {"kind": "forest", "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, payload: dict) -> "ForestModel":
        return cls([TreeModel.from_dict(t) for t in payload["trees"]])


class _StackedTrees:
    """All member trees in one set of flat arrays for batched routing.

    Leaves loop back to themselves so every query can take exactly
    ``depth`` steps without masking.
    """

    def __init__(self, trees):
        feats, thrs, lefts, rights, leaf_ids, roots, sizes, flats = [], [], [], [], [], [], [], []
        node_off = leaf_off = 0
        self.depth = 0
        for tree in trees:
            k = tree.n_nodes
            is_leaf = tree.feature == _LEAF
            own = np.arange(k)
            feats.append(np.where(is_leaf, 0, tree.feature))
            thrs.append(np.where(is_leaf, np.inf, tree.threshold))
            lefts.append(np.where(is_leaf, own, tree.left) + node_off)
            rights.append(np.where(is_leaf, own, tree.right) + node_off)
            leaf_ids.append(np.where(is_leaf, tree.leaf_of_node + leaf_off, -1))
            roots.append(node_off)
            sizes.append(tree.leaf_sizes)
            flats.append(tree.leaf_flat)
            node_off += k
            leaf_off += tree.n_leaves
            self.depth = max(self.depth, tree.depth)
        self.feature = np.concatenate(feats).astype(np.int64)
        self.threshold = np.concatenate(thrs).astype(float)
        self.left = np.concatenate(lefts).astype(np.int64)
        self.right = np.concatenate(rights).astype(np.int64)
        self.leaf_of_node = np.concatenate(leaf_ids).astype(np.int64)
        self.roots = np.asarray(roots, dtype=np.int64)
        self.leaf_sizes = np.concatenate(sizes)
        self.leaf_ptr = np.concatenate([[0], np.cumsum(self.leaf_sizes)])
        self.leaf_flat = np.concatenate(flats)
        self.n_trees = len(trees)

    def apply(self, Q) -> np.ndarray:
        """(m, T) global leaf ids."""
        return route(Q, self.roots, self.feature, self.threshold, self.left, self.right,
                     self.leaf_of_node, self.depth)

    def triplets(self, Q):
        """(rows, cols, vals) weight entries; a (row, col) pair may repeat
        across trees and the entries sum to the weight."""
        m = Q.shape[0]
        leaves = self.apply(Q).ravel()
        sizes = self.leaf_sizes[leaves]
        total = int(sizes.sum())
        ends = np.cumsum(sizes)
        offset = np.arange(total) - np.repeat(ends - sizes, sizes)
        cols = self.leaf_flat[np.repeat(self.leaf_ptr[leaves], sizes) + offset]
        rows = np.repeat(np.repeat(np.arange(m), self.n_trees), sizes)
        vals = np.repeat(1.0 / (self.n_trees * sizes), sizes)
        return rows, cols, vals

    def aggregates(self, Q, F, Y, with_bias=True):
        """(sum w^2, sum w Y, sum w ||F - q||) for each query row."""
        return weight_aggregates(self.apply(Q), self.leaf_ptr, self.leaf_sizes, self.leaf_flat,
                                 F, Y, Q, with_bias)

    def dense_weights(self, Q, n_train) -> np.ndarray:
        m = Q.shape[0]
        rows, cols, vals = self.triplets(Q)
        return np.bincount(rows * n_train + cols, weights=vals, minlength=m * n_train).reshape(m, n_train)


def _dense_weights(trees, Q, n_train) -> np.ndarray:
    return _StackedTrees(trees).dense_weights(Q, n_train)


def grow_tree(features, targets, structure_rows, estimation_rows, n_train,
              params: TreeParams, rng: Optional[np.random.Generator] = None) -> TreeModel:
    """Best-first growth on the structure rows; leaves hold estimation rows.

    ``structure_rows`` may repeat rows (bootstrap multiplicity).
    ``estimation_rows`` must be unique.
    """
    features = np.asarray(features, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets.reshape(-1, 1)
    D = features.shape[1]
    max_features = params.max_features
    structure_rows = np.asarray(structure_rows, dtype=int)
    estimation_rows = np.sort(np.asarray(estimation_rows, dtype=int))
    if estimation_rows.size < params.min_leaf:
        raise DataError("too few estimation rows for min_leaf")

    def candidates():
        if max_features is None or max_features >= D:
            return range(D)
        return np.sort(rng.choice(D, size=max_features, replace=False))

    feature, threshold, left, right, depth = [_LEAF], [0.0], [_LEAF], [_LEAF], [0]
    members = {0: (structure_rows, estimation_rows)}
    heap = []
    counter = 0

    def consider(node):
        nonlocal counter
        if params.max_depth is not None and depth[node] >= params.max_depth:
            return
        s_rows, e_rows = members[node]
        if D == 0:
            return
        split = _best_split(features, targets, s_rows, e_rows, candidates(), params)
        if split is not None:
            heapq.heappush(heap, (-split[0], counter, node, split[1], split[2]))
            counter += 1

    consider(0)
    n_leaves = 1
    cap = params.max_leaves if params.max_leaves is not None else math.inf
    while heap and n_leaves < cap:
        _, _, node, f, thr = heapq.heappop(heap)
        s_rows, e_rows = members.pop(node)
        feature[node], threshold[node] = f, thr
        kids = []
        for mask_fn in (np.less_equal, np.greater):
            child = len(feature)
            feature.append(_LEAF)
            threshold.append(0.0)
            left.append(_LEAF)
            right.append(_LEAF)
            depth.append(depth[node] + 1)
            members[child] = (
                s_rows[mask_fn(features[s_rows, f], thr)],
                e_rows[mask_fn(features[e_rows, f], thr)],
            )
            kids.append(child)
        left[node], right[node] = kids
        n_leaves += 1
        for child in kids:
            consider(child)

    leaf_of_node = np.full(len(feature), -1, dtype=int)
    leaf_indices = []
    for node in range(len(feature)):
        if feature[node] == _LEAF:
            leaf_of_node[node] = len(leaf_indices)
            leaf_indices.append(members[node][1])
    return TreeModel(feature, threshold, left, right, leaf_of_node, leaf_indices,
                     n_train, D, params, estimation_rows,
                     np.unique(structure_rows))


def training_targets(train: ObservationalDataset, target="outcome", cost=None) -> np.ndarray:
    """Regression target for splitting: the outcome block, the observed cost
    c(Z_i; Y_i), or an explicit array."""
    if isinstance(target, str):
        if target == "outcome":
            return train.outcomes
        if target == "cost":
            if cost is None:
                raise ValueError("target='cost' requires a cost function")
            return np.asarray(cost(train.decisions, train.outcomes), dtype=float).reshape(-1, 1)
        raise ValueError(f"unknown target {target!r}")
    arr = np.asarray(target, dtype=float)
    return arr.reshape(train.n, -1)


def fit_honest_cart(train: ObservationalDataset, target="outcome", params: Optional[TreeParams] = None,
                    cost=None, seed: int = 0) -> TreeModel:
    """Fit an honest CART: a random half of the rows picks the splits, the
    other half populates the leaves."""
    params = params or TreeParams()
    n = train.n
    n_est = int(math.floor(n * params.honesty_fraction))
    if n < 2 * params.min_leaf or n_est < params.min_leaf or n - n_est < 1:
        raise DataError(
            f"too few rows ({n}) for an honest split with min_leaf={params.min_leaf}"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    est = np.sort(perm[:n_est])
    struct = np.sort(perm[n_est:])
    return grow_tree(train.features, training_targets(train, target, cost), struct, est, n, params, rng)


def default_max_features(n_features: int) -> int:
    return max(1, math.ceil(n_features / 3))


def fit_honest_forest(train: ObservationalDataset, target="outcome", params: Optional[TreeParams] = None,
                      n_trees: int = 50, cost=None, seed: int = 0, bootstrap: bool = True) -> ForestModel:
    """Honest random forest.

    Each tree draws a bootstrap resample, splits its distinct rows into a
    structure half (kept with bootstrap multiplicity) and an estimation half
    (each row counted once, so leaf weights stay at most 1/min_leaf).
    """
    params = params or TreeParams()
    if params.max_features is None:
        params = TreeParams(**{**params.to_dict(), "max_features": default_max_features(train.d + train.p)})
    n = train.n
    if n < 2 * params.min_leaf:
        raise DataError(f"too few rows ({n}) for an honest split with min_leaf={params.min_leaf}")
    features = train.features
    targets = training_targets(train, target, cost)
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        draw = rng.integers(0, n, n) if bootstrap else np.arange(n)
        distinct = rng.permutation(np.unique(draw))
        n_est = int(math.floor(distinct.size * params.honesty_fraction))
        if n_est < params.min_leaf:
            n_est = min(params.min_leaf, distinct.size - 1)
        est = np.sort(distinct[:n_est])
        struct_set = distinct[n_est:]
        struct = np.sort(draw[np.isin(draw, struct_set)])
        trees.append(grow_tree(features, targets, struct, est, n, params, rng))
    return ForestModel(trees)


def fit_adaptive_forest(train: ObservationalDataset, target="outcome", params: Optional[TreeParams] = None,
                        n_trees: int = 50, cost=None, seed: int = 0) -> ForestModel:
    """Conventional (non-honest) random forest.

    Each tree splits on its bootstrap resample and its leaves hold the
    distinct rows of that same resample. Weights still sum to one per tree
    but depend on the outcomes, so this is meant for imputation only.
    ``params.max_features=None`` lets every split see all features.
    """
    params = params or TreeParams()
    n = train.n
    if n < params.min_leaf:
        raise DataError(f"too few rows ({n}) for min_leaf={params.min_leaf}")
    features = train.features
    targets = training_targets(train, target, cost)
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        draw = np.sort(rng.integers(0, n, n))
        trees.append(grow_tree(features, targets, draw, np.unique(draw), n, params, rng))
    return ForestModel(trees)


def tree_weights(model: TreeModel, q) -> WeightVector:
    q = q.concat if hasattr(q, "concat") else q
    return model.weights(q)


def forest_weights(model: ForestModel, q) -> WeightVector:
    q = q.concat if hasattr(q, "concat") else q
    return model.weights(q)


def enumerate_leaves(model: TreeModel, space=None, d: Optional[int] = None) -> list[LeafRegion]:
    """Leaf boxes of a tree. With a DecisionSpace (and covariate count ``d``)
    the decision coordinates are clipped to the space box."""
    lo, hi = model.leaf_boxes()
    lo, hi = lo.copy(), hi.copy()
    if space is not None:
        d = model.n_features - space.p if d is None else d
        lo[:, d:] = np.maximum(lo[:, d:], space.lower)
        hi[:, d:] = np.minimum(hi[:, d:], space.upper)
    return [LeafRegion(j, lo[j], hi[j], model.leaf_indices[j]) for j in range(model.n_leaves)]


def model_from_dict(payload: dict):
    kind = payload.get("kind")
    if kind == "tree":
        return TreeModel.from_dict(payload)
    if kind == "forest":
        return ForestModel.from_dict(payload)
    raise ValueError(f"not a tree-family model: {kind!r}")
