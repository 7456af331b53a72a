"""Random forest of Gini-split classification trees for slice selection.

Labels are 0 (clean) and 1 (tumor).  Tree ``k`` draws its bootstrap sample
and per-node feature subsets from ``default_rng([seed, k])``, so a forest is a
pure function of its data and config and trees can be grown in any order.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, DimensionMismatch, InvalidSpec, MissingModel, SingleClass
from .features import FEATURE_LAYOUT_ID, slice_features

CLEAN, TUMOR = 0, 1
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 25
    max_depth: int = 12
    min_samples_leaf: int = 2
    max_features: int | None = None  # None -> ceil(sqrt(d))
    seed: int = 0

    def validate(self) -> None:
        if self.n_trees < 1:
            raise InvalidSpec("n_trees must be >= 1")
        if self.max_depth < 1 or self.min_samples_leaf < 1:
            raise InvalidSpec("max_depth and min_samples_leaf must be >= 1")
        if self.max_features is not None and self.max_features < 1:
            raise InvalidSpec("max_features must be >= 1")


@dataclass
class DecisionTree:
    feature: np.ndarray    # int, -1 at leaves
    threshold: np.ndarray  # go left when x[feature] <= threshold
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray     # (n_nodes, 2) bootstrap class counts

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    def leaf_class(self) -> np.ndarray:
        # ties go to tumor
        return np.where(self.counts[:, TUMOR] >= self.counts[:, CLEAN], TUMOR, CLEAN)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                return node
            r, n = rows[active], node[active]
            go_left = X[r, f[active]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.leaf_class()[self.apply(X)]


@dataclass
class Forest:
    trees: list[DecisionTree]
    dimension: int
    config: ForestConfig
    oob_score: float | None = None

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def _best_split(Xn, yn, features, min_leaf):
    """Lowest weighted Gini over ``features``; returns (feature, threshold) or None."""
    n = yn.shape[0]
    vals = Xn[:, features]
    order = np.argsort(vals, axis=0, kind="stable")
    sv = np.take_along_axis(vals, order, axis=0)
    sy = yn[order]
    pos_left = np.cumsum(sy, axis=0)[:-1]            # tumors among the first k+1 rows
    n_left = np.arange(1, n)[:, None].astype(np.float64)
    n_right = n - n_left
    pos_right = sy.sum(axis=0)[None, :] - pos_left
    gini_left = 1.0 - (pos_left / n_left) ** 2 - (1.0 - pos_left / n_left) ** 2
    gini_right = 1.0 - (pos_right / n_right) ** 2 - (1.0 - pos_right / n_right) ** 2
    impurity = (n_left * gini_left + n_right * gini_right) / n
    valid = (sv[1:] > sv[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    impurity = np.where(valid, impurity, np.inf)
    flat = int(np.argmin(impurity.T))  # feature-major: earliest sampled feature wins ties
    col, k = divmod(flat, n - 1)
    parent = 1.0 - (sy[:, 0].mean()) ** 2 - (1.0 - sy[:, 0].mean()) ** 2
    if impurity[k, col] >= parent - 1e-15:
        return None
    thr = (sv[k, col] + sv[k + 1, col]) / 2.0
    if not thr < sv[k + 1, col]:  # adjacent floats: keep the split exact
        thr = sv[k, col]
    return int(features[col]), float(thr)


def _grow_tree(X, y, sample, cfg: ForestConfig, rng, k_features) -> DecisionTree:
    d = X.shape[1]
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        pos = int(y[idx].sum())
        counts.append((len(idx) - pos, pos))
        return len(feature) - 1

    root = new_node(sample)
    stack = [(root, sample, 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        if depth >= cfg.max_depth or len(idx) < 2 * cfg.min_samples_leaf or yn.min() == yn.max():
            continue
        feats = rng.choice(d, size=k_features, replace=False)
        split = _best_split(X[idx], yn, feats, cfg.min_samples_leaf)
        if split is None:
            continue
        f, thr = split
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is numbered first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return DecisionTree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        counts=np.asarray(counts, dtype=np.int64).reshape(-1, 2),
    )


def bootstrap_indices(n: int, seed: int, tree_index: int) -> np.ndarray:
    return np.random.default_rng([seed, tree_index]).integers(0, n, size=n)


def train_forest(X, y, cfg: ForestConfig = ForestConfig()) -> Forest:
    cfg.validate()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise DimensionMismatch(f"X {X.shape} and y {y.shape} do not line up")
    if not np.all(np.isin(y, (CLEAN, TUMOR))):
        raise ValueError("labels must be 0 (clean) or 1 (tumor)")
    if np.unique(y).size < 2:
        raise SingleClass("training needs both clean and tumor slices")
    n, d = X.shape
    k_features = min(d, cfg.max_features or math.ceil(math.sqrt(d)))

    trees = []
    oob_votes = np.zeros((n, 2), dtype=np.int64)
    for t in range(cfg.n_trees):
        rng = np.random.default_rng([cfg.seed, t])
        sample = rng.integers(0, n, size=n)
        tree = _grow_tree(X, y, sample, cfg, rng, k_features)
        trees.append(tree)
        oob = np.setdiff1d(np.arange(n), sample)
        if oob.size:
            pred = tree.predict(X[oob])
            np.add.at(oob_votes, (oob, pred), 1)

    seen = oob_votes.sum(axis=1) > 0
    oob_score = None
    if seen.any():
        oob_pred = np.where(oob_votes[:, TUMOR] >= oob_votes[:, CLEAN], TUMOR, CLEAN)
        oob_score = float(np.mean(oob_pred[seen] == y[seen]))
    return Forest(trees=trees, dimension=d, config=cfg, oob_score=oob_score)


def tree_votes(f: Forest, X) -> np.ndarray:
    """(n_trees, n_rows) matrix of per-tree labels."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != f.dimension:
        raise DimensionMismatch(f"forest expects {f.dimension} features, got {X.shape[1]}")
    return np.stack([t.predict(X) for t in f.trees])


def predict_forest(f: Forest, x) -> int | np.ndarray:
    """Majority vote; an exact tie is called tumor."""
    single = np.ndim(x) == 1
    votes = tree_votes(f, x)
    tumor = votes.sum(axis=0)
    out = np.where(2 * tumor >= f.n_trees, TUMOR, CLEAN)
    return int(out[0]) if single else out


def select_slices(f: Forest, stack) -> set[int]:
    slices = stack.slices if hasattr(stack, "slices") else np.asarray(stack)
    X = np.stack([slice_features(s) for s in slices])
    return {int(i) for i in np.nonzero(predict_forest(f, X) == TUMOR)[0]}


def forest_to_dict(f: Forest) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "random_forest",
        "dimension": f.dimension,
        "config": asdict(f.config),
        "oob_score": f.oob_score,
        "feature_layout_id": FEATURE_LAYOUT_ID,
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": [float(v) for v in t.threshold],
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "counts": t.counts.tolist(),
            }
            for t in f.trees
        ],
    }


def _check_tree(t: DecisionTree, dimension: int) -> None:
    n = t.n_nodes
    if not (t.threshold.shape == t.left.shape == t.right.shape == (n,)) or t.counts.shape != (n, 2):
        raise ConfigInvalid("tree node arrays have inconsistent lengths")
    internal = t.feature >= 0
    if np.any(t.feature >= dimension):
        raise ConfigInvalid("tree references a feature beyond the model dimension")
    children = np.concatenate([t.left[internal], t.right[internal]])
    if children.size and (children.min() < 1 or children.max() >= n):
        raise ConfigInvalid("tree child index out of range")
    parents = np.concatenate([np.nonzero(internal)[0]] * 2)
    if np.any(children <= parents):
        raise ConfigInvalid("tree is not topologically ordered (possible cycle)")


def forest_from_dict(doc: dict) -> Forest:
    if doc.get("kind") != "random_forest" or doc.get("format_version") != FORMAT_VERSION:
        raise ConfigInvalid(f"not a version-{FORMAT_VERSION} random_forest document")
    if doc.get("feature_layout_id") != FEATURE_LAYOUT_ID:
        raise ConfigInvalid(f"feature layout {doc.get('feature_layout_id')!r} is not {FEATURE_LAYOUT_ID!r}")
    dimension = int(doc["dimension"])
    trees = []
    for td in doc["trees"]:
        t = DecisionTree(
            feature=np.asarray(td["feature"], dtype=np.int64),
            threshold=np.asarray(td["threshold"], dtype=np.float64),
            left=np.asarray(td["left"], dtype=np.int64),
            right=np.asarray(td["right"], dtype=np.int64),
            counts=np.asarray(td["counts"], dtype=np.int64).reshape(-1, 2),
        )
        _check_tree(t, dimension)
        trees.append(t)
    return Forest(trees=trees, dimension=dimension, config=ForestConfig(**doc["config"]),
                  oob_score=doc.get("oob_score"))


def save_forest(f: Forest, path) -> None:
    Path(path).write_text(json.dumps(forest_to_dict(f)) + "\n")


def load_forest(path) -> Forest:
    p = Path(path)
    if not p.is_file():
        raise MissingModel(f"forest model not found: {p}")
    return forest_from_dict(json.loads(p.read_text()))
