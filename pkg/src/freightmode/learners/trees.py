"""CART, random forest, bagging and multinomial gradient boosting, plus impurity importance.

All four families share one grower. Rows are presorted once per feature, and a
node owns a contiguous segment of that presorted index matrix; splitting a node
partitions the segment stably, so no node ever re-sorts. The split scans and the
partition run in compiled kernels, the node bookkeeping stays in Python.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from ..dataset.encoding import EncodedDataset
from ..dataset.schema import N_CLASSES
from ..errors import NumericalError, ValidationError
from . import _tree_kernels as kern
from .core import Family, FittedModel, LearnerSpec, fit, register, softmax

# Split gains below this (and gain differences below it) count as ties.
SPLIT_TOL = 1e-13


@dataclass
class Tree:
    """Flat binary tree, nodes in preorder (left subtree before right).

    ``left[i] == -1`` marks a leaf. ``value`` holds weighted class totals for
    classification trees and a single fitted score for regression trees.
    ``weight`` is the training weight reaching each node and ``decrease`` the
    normalized impurity decrease of its split (0 at leaves).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    weight: np.ndarray
    decrease: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def is_leaf(self) -> np.ndarray:
        return self.left == -1

    @property
    def n_internal(self) -> int:
        return int(np.sum(~self.is_leaf))

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.left[i] != -1:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        return kern.apply_tree(np.ascontiguousarray(X, dtype=np.float64), self.feature, self.threshold, self.left,
                               self.right)

    def leaf_proba(self) -> np.ndarray:
        totals = self.value
        s = totals.sum(axis=1, keepdims=True)
        return np.divide(totals, s, out=np.zeros_like(totals), where=s > 0)

    def importance(self, n_features: int) -> np.ndarray:
        """Per-feature impurity decrease weighted by the share of root weight at each split."""
        internal = ~self.is_leaf
        contrib = self.weight[internal] / self.weight[0] * self.decrease[internal]
        return np.bincount(self.feature[internal], weights=contrib, minlength=n_features)

    def to_nested(self) -> dict:
        def node(i):
            if self.left[i] == -1:
                if self.value.shape[1] == 1:
                    return {"value": float(self.value[i, 0]), "weight": float(self.weight[i])}
                return {"counts": self.value[i].tolist()}
            return {
                "feature": int(self.feature[i]),
                "threshold": float(self.threshold[i]),
                "weight": float(self.weight[i]),
                "decrease": float(self.decrease[i]),
                "left": node(self.left[i]),
                "right": node(self.right[i]),
            }

        return node(0)

    @classmethod
    def from_nested(cls, doc: dict, n_values: int) -> "Tree":
        b = _Builder(n_values)
        stack = [(doc, -1, False)]
        while stack:
            d, parent, is_right = stack.pop()
            i = b.add(parent, is_right)
            if "left" in d:
                b.set_split(i, d["feature"], d["threshold"], d["weight"], d["decrease"])
                stack.append((d["right"], i, True))
                stack.append((d["left"], i, False))
            elif "counts" in d:
                counts = np.asarray(d["counts"], dtype=np.float64)
                b.set_leaf(i, counts, counts.sum())
            else:
                b.set_leaf(i, np.array([d["value"]]), d["weight"])
        return b.build()


class _Builder:
    """Accumulates preorder nodes while the grower pops its stack."""

    def __init__(self, n_values):
        self.n_values = n_values
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.value, self.weight, self.decrease = [], [], []

    def add(self, parent, is_right):
        i = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(np.zeros(self.n_values))
        self.weight.append(0.0)
        self.decrease.append(0.0)
        if parent >= 0:
            (self.right if is_right else self.left)[parent] = i
        return i

    def set_split(self, i, feature, threshold, weight, decrease):
        self.feature[i] = int(feature)
        self.threshold[i] = float(threshold)
        self.weight[i] = float(weight)
        self.decrease[i] = float(decrease)

    def set_leaf(self, i, value, weight):
        self.value[i] = np.asarray(value, dtype=np.float64)
        self.weight[i] = float(weight)

    def build(self) -> Tree:
        # leaves keep feature 0 so compiled traversal never indexes out of range
        feature = np.array(self.feature, dtype=np.int64)
        feature[feature < 0] = 0
        return Tree(
            feature,
            np.array(self.threshold, dtype=np.float64),
            np.array(self.left, dtype=np.int64),
            np.array(self.right, dtype=np.int64),
            np.array(self.value, dtype=np.float64).reshape(len(self.feature), self.n_values),
            np.array(self.weight, dtype=np.float64),
            np.array(self.decrease, dtype=np.float64),
        )


def presort(X: np.ndarray) -> np.ndarray:
    """(D, N) matrix whose row ``f`` orders the samples by feature ``f`` (ties by index)."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T, dtype=np.int64)


def _grow(X, order, w, *, y=None, r=None, max_depth=None, min_samples_split=2, mtry=None, rng=None):
    """Grow one tree over the samples listed in ``order`` (modified in place).

    Classification when ``y`` is given (Gini; leaves keep weighted class
    totals), regression on ``r`` otherwise (squared error; leaf values are left
    at zero for the caller to fill). With ``mtry`` below the feature count each
    node ranks the features by fresh uniforms from ``rng`` and scores the first
    ``mtry`` non-constant ones; if none of them splits the node, the remaining
    non-constant features are scored together.

    Returns the tree and each sample's leaf index (-1 for samples not grown on).
    """
    D = X.shape[1]
    classify = y is not None
    restricted = mtry is not None and mtry < D
    m = order.shape[1]
    u = rng.random((2 * m + 1, D)) if restricted else np.zeros((1, D))
    y_arr = y if classify else np.zeros(X.shape[0], dtype=np.int64)
    r_arr = np.zeros(X.shape[0]) if classify else r
    feature, threshold, left, right, weight, decrease, value, leaf_of = kern.grow_depth_first(
        X, order, y_arr, r_arr, w, N_CLASSES if classify else 1, classify,
        -1 if max_depth is None else max_depth, min_samples_split, SPLIT_TOL, mtry if restricted else 0, u)
    leaf = left == -1
    if not classify:
        value = np.zeros((feature.shape[0], 1))
    else:
        value = np.where(leaf[:, None], value, 0.0)
    tree = Tree(np.where(leaf, 0, feature), np.where(leaf, 0.0, threshold), left, right, value, weight, decrease)
    return tree, leaf_of


class Split(NamedTuple):
    feature: int
    threshold: float
    gini_decrease: float


def best_split(X, y, w=None, candidate_features=None) -> Optional[Split]:
    """Best Gini split of the rows ``X`` (labels ``y``, weights ``w``), or None.

    Thresholds are midpoints between consecutive distinct values; the decrease
    is parent Gini minus the weight-averaged child Gini. Ties keep the lowest
    feature index, then the smallest threshold.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValidationError("best_split needs a nonempty 2-D row matrix")
    y = np.asarray(y, dtype=np.int64)
    w = np.ones(X.shape[0]) if w is None else np.asarray(w, dtype=np.float64)
    feats = np.arange(X.shape[1]) if candidate_features is None else np.unique(candidate_features)
    order = presort(X)
    f, t, gain, _ = kern.best_gini_split(X, order, 0, X.shape[0], feats.astype(np.int64), y, w, N_CLASSES,
                                         SPLIT_TOL)
    return None if f < 0 else Split(int(f), float(t), float(gain))


# ---------------------------------------------------------------- models


class CartModel(FittedModel):
    def __init__(self, spec, tree: Tree, **meta):
        super().__init__(spec, **meta)
        self.tree = tree

    def _proba(self, X):
        return self.tree.leaf_proba()[self.tree.apply(X)]

    def feature_importances(self):
        return _normalize_importance(self.tree.importance(self.n_features))

    def _params(self):
        return {"tree": self.tree.to_nested()}

    @classmethod
    def _from_params(cls, spec, meta, params):
        return cls(spec, Tree.from_nested(params["tree"], N_CLASSES), **_meta(meta))


class ForestModel(FittedModel):
    """Bootstrap ensemble of classification trees; probabilities are the plain mean over trees."""

    def __init__(self, spec, trees, **meta):
        super().__init__(spec, **meta)
        self.trees = list(trees)

    def _proba(self, X):
        X = np.ascontiguousarray(X)
        total = np.zeros((X.shape[0], N_CLASSES))
        for tree in self.trees:
            total += tree.leaf_proba()[tree.apply(X)]
        return total / len(self.trees)

    def feature_importances(self):
        return _normalize_importance(sum(t.importance(self.n_features) for t in self.trees))

    def _params(self):
        return {"trees": [t.to_nested() for t in self.trees]}

    @classmethod
    def _from_params(cls, spec, meta, params):
        return cls(spec, [Tree.from_nested(t, N_CLASSES) for t in params["trees"]], **_meta(meta))


class BaggingModel(ForestModel):
    pass


class BoostedModel(FittedModel):
    """Multinomial-deviance boosting: scores = initial + learning_rate * sum of stage trees.

    ``stages[s]`` is a list of ``(class_index, regression_tree)`` pairs, one per
    class present in training. Absent classes keep a score of ``-inf``.
    """

    def __init__(self, spec, initial_scores, stages, **meta):
        super().__init__(spec, **meta)
        self.initial_scores = np.asarray(initial_scores, dtype=np.float64)
        self.stages = stages
        self.learning_rate = float(spec.hyperparameters["learning_rate"])

    def decision_function(self, X):
        X = np.ascontiguousarray(self._check_X(X))
        F = np.tile(self.initial_scores, (X.shape[0], 1))
        for stage in self.stages:
            for k, tree in stage:
                F[:, k] += self.learning_rate * tree.value[tree.apply(X), 0]
        return F

    def _proba(self, X):
        return softmax(self.decision_function(X))

    def feature_importances(self):
        total = np.zeros(self.n_features)
        for stage in self.stages:
            for _, tree in stage:
                total += tree.importance(self.n_features)
        return _normalize_importance(total)

    def _params(self):
        init = [None if not np.isfinite(s) else float(s) for s in self.initial_scores]
        return {
            "initial_scores": init,
            "stages": [[{"class": int(k), "tree": t.to_nested()} for k, t in stage] for stage in self.stages],
        }

    @classmethod
    def _from_params(cls, spec, meta, params):
        init = [-np.inf if s is None else s for s in params["initial_scores"]]
        stages = [[(d["class"], Tree.from_nested(d["tree"], 1)) for d in stage] for stage in params["stages"]]
        return cls(spec, init, stages, **_meta(meta))


def _meta(doc):
    return {
        "n_features": doc["n_features"],
        "n_samples": doc["n_samples"],
        "feature_names": doc.get("feature_names"),
    }


def _meta_of(data: EncodedDataset, info=None):
    return {
        "n_features": data.n_features,
        "n_samples": data.n_samples,
        "feature_names": data.feature_names,
        "info": info,
    }


def _normalize_importance(total):
    total = np.asarray(total, dtype=np.float64)
    s = total.sum()
    if s <= 0:
        # no split anywhere: nothing to rank, report every feature alike
        return np.full(total.shape, 1.0 / total.size)
    return total / s


# ---------------------------------------------------------------- fitting


def _bootstrap(rng, w, mode):
    """Per-row tree weights for one bootstrap replicate (zero = row left out)."""
    n = w.shape[0]
    if mode == "none":
        return w.copy()
    if mode == "weighted":
        cdf = np.cumsum(w)
        draws = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
        return np.bincount(np.minimum(draws, n - 1), minlength=n).astype(np.float64)
    draws = rng.integers(0, n, size=n)
    return np.bincount(draws, minlength=n) * w


def _ensemble(data, spec, n_trees, mtry):
    hp = spec.hyperparameters
    X = np.ascontiguousarray(data.features)
    y = data.labels
    base = presort(X)
    trees = []
    for seed in np.random.SeedSequence(spec.seed).spawn(n_trees):
        rng = np.random.default_rng(seed)
        tw = _bootstrap(rng, data.weights, hp["bootstrap"])
        keep = tw > 0
        order = base.copy() if keep.all() else _restrict(base, keep)
        tree, _ = _grow(X, order, tw, y=y, max_depth=hp["max_depth"], min_samples_split=hp["min_samples_split"],
                        mtry=mtry, rng=rng)
        trees.append(tree)
    return trees


def _restrict(order, keep):
    m = int(keep.sum())
    return np.ascontiguousarray(order[keep[order]].reshape(order.shape[0], m))


@register(Family.CART, CartModel)
def _fit_cart(data: EncodedDataset, spec: LearnerSpec) -> CartModel:
    hp = spec.hyperparameters
    X = np.ascontiguousarray(data.features)
    tree, _ = _grow(X, presort(X), data.weights, y=data.labels, max_depth=hp["max_depth"],
                    min_samples_split=hp["min_samples_split"])
    return CartModel(spec, tree, **_meta_of(data))


@register(Family.RF, ForestModel)
def _fit_forest(data: EncodedDataset, spec: LearnerSpec) -> ForestModel:
    mtry = spec.hyperparameters["mtry"]
    if mtry > data.n_features:
        raise ValidationError(f"mtry = {mtry} exceeds the {data.n_features} available features")
    trees = _ensemble(data, spec, spec.hyperparameters["n_trees"], mtry)
    return ForestModel(spec, trees, **_meta_of(data))


@register(Family.BAG, BaggingModel)
def _fit_bagging(data: EncodedDataset, spec: LearnerSpec) -> BaggingModel:
    trees = _ensemble(data, spec, spec.hyperparameters["n_estimators"], None)
    return BaggingModel(spec, trees, **_meta_of(data))


# Features with at most this many distinct training values are split from histograms.
HIST_MAX_BINS = 256


class _Presorted(NamedTuple):
    X: np.ndarray
    order: np.ndarray
    Xs: np.ndarray
    hist_slot: np.ndarray
    codes: np.ndarray
    bin_offset: np.ndarray
    bin_values: np.ndarray


def _prepare(X) -> _Presorted:
    """Presort plus value-rank codes of the low-cardinality features."""
    order = presort(X)
    hist_slot = np.full(X.shape[1], -1, dtype=np.int64)
    codes, values, offsets = [], [], [0]
    for f in range(X.shape[1]):
        uniq, inv = np.unique(X[:, f], return_inverse=True)
        if uniq.size <= HIST_MAX_BINS:
            hist_slot[f] = len(codes)
            codes.append(inv.ravel())
            values.append(uniq)
            offsets.append(offsets[-1] + uniq.size)
    codes = np.ascontiguousarray(np.column_stack(codes) if codes else np.zeros((X.shape[0], 0)), dtype=np.uint16)
    values = np.concatenate(values) if values else np.zeros(0)
    return _Presorted(X, order, kern.sorted_values(X, order), hist_slot, codes, np.asarray(offsets, dtype=np.int64),
                      values)


def _regression_tree(pre: _Presorted, r, w, hp, scale):
    """One boosting tree on residuals ``r``; returns it with each training row's leaf.

    Leaf values take one Newton step on the multinomial deviance:
    ``scale * sum(w r) / sum(w |r| (1 - |r|))`` with ``scale = (K - 1) / K``.
    """
    depth = -1 if hp["max_depth"] is None else hp["max_depth"]
    feature, threshold, left, right, weight, decrease, node_of = kern.grow_mse_levelwise(
        pre.X, pre.Xs, pre.order, r, w, depth, hp["min_samples_split"], SPLIT_TOL, pre.hist_slot, pre.codes,
        pre.bin_offset, pre.bin_values)
    n = feature.shape[0]
    num = np.bincount(node_of, weights=w * r, minlength=n)
    a = np.abs(r)
    den = np.bincount(node_of, weights=w * a * (1.0 - a), minlength=n)
    value = np.divide(scale * num, den, out=np.zeros(n), where=den != 0)
    # breadth-first ids -> preorder ids
    preorder = []
    stack = [0]
    while stack:
        i = stack.pop()
        preorder.append(i)
        if left[i] != -1:
            stack.append(right[i])
            stack.append(left[i])
    preorder = np.asarray(preorder, dtype=np.int64)
    new_id = np.empty(n, dtype=np.int64)
    new_id[preorder] = np.arange(n)
    internal = left[preorder] != -1
    tree = Tree(
        np.where(internal, feature[preorder], 0),
        np.where(internal, threshold[preorder], 0.0),
        np.where(internal, new_id[left[preorder]], -1),
        np.where(internal, new_id[right[preorder]], -1),
        np.where(internal, 0.0, value[preorder])[:, None],
        weight[preorder],
        decrease[preorder],
    )
    return tree, new_id[node_of]


@register(Family.BOOST, BoostedModel)
def _fit_boosting(data: EncodedDataset, spec: LearnerSpec) -> BoostedModel:
    hp = spec.hyperparameters
    lr = hp["learning_rate"]
    X = np.ascontiguousarray(data.features)
    y, w = data.labels, data.weights
    totals = np.bincount(y, weights=w, minlength=N_CLASSES)
    present = np.flatnonzero(totals > 0)
    K = present.size
    with np.errstate(divide="ignore"):
        init = np.log(totals / totals.sum())
    F = np.tile(init, (data.n_samples, 1))
    pre = _prepare(X)
    scale = (K - 1) / K
    onehot = y[:, None] == np.arange(N_CLASSES)
    stages = []
    for s in range(hp["n_stages"]):
        P = softmax(F)
        stage = []
        for k in present:
            r = onehot[:, k] - P[:, k]
            tree, leaf_of = _regression_tree(pre, r, w, hp, scale)
            F[:, k] += lr * tree.value[leaf_of, 0]
            stage.append((int(k), tree))
        if not np.all(np.isfinite(F[:, present])):
            raise NumericalError("boosting scores became non-finite", iteration=s)
        stages.append(stage)
    info = {"n_present_classes": int(K)}
    return BoostedModel(spec, init, stages, **_meta_of(data, info))


def boosting_deviance(model: BoostedModel, data: EncodedDataset, n_stages=None) -> float:
    """Weighted mean multinomial deviance (cross-entropy) after the first ``n_stages`` stages."""
    X = np.ascontiguousarray(data.features)
    F = np.tile(model.initial_scores, (data.n_samples, 1))
    for stage in model.stages[:n_stages]:
        for k, tree in stage:
            F[:, k] += model.learning_rate * tree.value[tree.apply(X), 0]
    P = softmax(F)
    p_true = P[np.arange(data.n_samples), data.labels]
    return float(-np.dot(data.weights, np.log(p_true)) / data.weights.sum())


# ---------------------------------------------------------------- public API


def fit_cart(data: EncodedDataset, max_depth=None, min_samples_split=2) -> CartModel:
    return fit(LearnerSpec(Family.CART, {"max_depth": max_depth, "min_samples_split": min_samples_split}), data)


def fit_random_forest(data: EncodedDataset, n_trees=10, mtry=2, seed=0, **hyperparameters) -> ForestModel:
    hp = {"n_trees": n_trees, "mtry": mtry, **hyperparameters}
    return fit(LearnerSpec(Family.RF, hp, seed), data)


def fit_bagging(data: EncodedDataset, n_estimators=10, seed=0, **hyperparameters) -> BaggingModel:
    return fit(LearnerSpec(Family.BAG, {"n_estimators": n_estimators, **hyperparameters}, seed), data)


def fit_gradient_boosting(data: EncodedDataset, n_stages=100, learning_rate=0.1, max_depth=3, seed=0,
                          **hyperparameters) -> BoostedModel:
    hp = {"n_stages": n_stages, "learning_rate": learning_rate, "max_depth": max_depth, **hyperparameters}
    return fit(LearnerSpec(Family.BOOST, hp, seed), data)


def impurity_importance(model) -> np.ndarray:
    """Normalized impurity-decrease importance of a fitted tree-family model.

    Gini decrease for classification trees, squared-error decrease for the
    boosting stage trees, summed over every tree. A model without a single split
    gets the uniform vector.
    """
    if not isinstance(model, (CartModel, ForestModel, BoostedModel)):
        raise TypeError(f"impurity importance needs a tree-family model, got {type(model).__name__}")
    return model.feature_importances()
