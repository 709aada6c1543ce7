"""Gradient-boosted regression trees (squared error, second-order leaf weights).

Each boosting round fits one tree to the current gradients ``g = pred - y``
(hessians are 1). Splits are found by exact greedy search over midpoints of
consecutive distinct feature values, scored by

    gain = 1/2 [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)] - gamma

and leaves take the weight ``-G/(H+lambda)``. Ties go to the lowest feature
index, then the lowest threshold, so results never depend on evaluation order.
X and Y are two independent single-output ensembles.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from . import formats
from .errors import CorruptModel, DimensionMismatch, EmptyDataset, NonFiniteFeature

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GbtHyperparams:
    rounds: int = 200
    max_depth: int = 6
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.reg_lambda < 0 or self.gamma < 0 or self.min_child_weight < 0:
            raise ValueError("reg_lambda, gamma and min_child_weight must be >= 0")


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Flattened binary tree; ``feature == -1`` marks a leaf. Rows with
    ``x[feature] < threshold`` go left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        for name, dtype in (("feature", np.int64), ("left", np.int64), ("right", np.int64)):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=dtype))
        for name in ("threshold", "value"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.feature)
        if n == 0 or not all(len(getattr(self, a)) == n for a in ("threshold", "left", "right", "value")):
            raise CorruptModel("tree arrays are empty or of unequal length")
        internal = self.feature >= 0
        kids = np.concatenate([self.left[internal], self.right[internal]])
        if np.any(kids <= 0) or np.any(kids >= n) or len(np.unique(kids)) != len(kids):
            raise CorruptModel("tree child indices are malformed")
        if len(kids) != n - 1:
            raise CorruptModel("tree has unreachable nodes")

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=int)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row."""
        node = np.zeros(len(X), dtype=np.int64)
        active = np.arange(len(X))
        while len(active):
            f = self.feature[node[active]]
            internal = f >= 0
            active, f = active[internal], f[internal]
            if not len(active):
                break
            cur = node[active]
            go_left = X[active, f] < self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


@dataclass(frozen=True, eq=False)
class GbtModel:
    base_score: tuple[float, float]
    trees_x: tuple[RegressionTree, ...]
    trees_y: tuple[RegressionTree, ...]
    hyperparams: GbtHyperparams
    feature_names: tuple[str, ...]
    train_loss: tuple[tuple[float, ...], tuple[float, ...]] = field(default=((), ()))

    @property
    def n_features(self) -> int:
        return len(self.feature_names)


# --- split search ------------------------------------------------------------

# gains closer than this (relative to the terms that produce them) are ties
TIE_RTOL = 1e-10


@numba.njit(cache=True)
def _scan_splits(X, g, h, order, row_pos, G, H, lam, gamma, mcw):
    """Best (gain, feature, threshold) for every frontier node.

    One pass per feature over the presorted rows accumulates each node's
    left-hand sums; a candidate split sits between consecutive distinct values
    of a node's rows. ``row_pos[i]`` is the frontier slot of row i, or -1 for
    rows in finished leaves. A candidate must beat the current best by more
    than rounding noise (``TIE_RTOL`` times the magnitude of the summed terms),
    so exact ties keep the lowest threshold within a feature and the lowest
    feature across features regardless of summation order.
    """
    nf = G.shape[0]
    best_gain = np.zeros(nf)
    best_feat = np.full(nf, -1, dtype=np.int64)
    best_thr = np.zeros(nf)
    GL = np.zeros(nf)
    HL = np.zeros(nf)
    last = np.zeros(nf)
    seen = np.zeros(nf, dtype=np.bool_)
    parent = G * G / (H + lam)
    for f in range(X.shape[1]):
        GL[:] = 0.0
        HL[:] = 0.0
        seen[:] = False
        for j in range(order.shape[1]):
            i = order[f, j]
            k = row_pos[i]
            if k < 0:
                continue
            x = X[i, f]
            if seen[k] and x > last[k]:
                hl = HL[k]
                hr = H[k] - hl
                if hl >= mcw and hr >= mcw:
                    gl = GL[k]
                    gr = G[k] - gl
                    tl = gl * gl / (hl + lam)
                    tr = gr * gr / (hr + lam)
                    gain = 0.5 * (tl + tr - parent[k]) - gamma
                    noise = TIE_RTOL * (tl + tr + parent[k] + abs(gamma))
                    if gain > best_gain[k] + noise:
                        a = last[k]
                        thr = a + (x - a) / 2.0
                        if not (a < thr and thr <= x):
                            thr = x
                        best_gain[k] = gain
                        best_feat[k] = f
                        best_thr[k] = thr
            GL[k] += g[i]
            HL[k] += h[i]
            last[k] = x
            seen[k] = True
    return best_gain, best_feat, best_thr


def _presort(X: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)


def grow_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, hp: GbtHyperparams, order=None):
    """Grow one tree level by level; returns the tree and each row's leaf index."""
    n, d = X.shape
    if order is None:
        order = _presort(X)
    lam = hp.reg_lambda
    feature, threshold, left, right = [-1], [0.0], [-1], [-1]
    Gs, Hs = [float(np.sum(g))], [float(np.sum(h))]
    node_of = np.zeros(n, dtype=np.int64)
    frontier = [0]
    for _ in range(hp.max_depth):
        if not frontier:
            break
        pos = np.full(len(feature), -1, dtype=np.int64)
        pos[frontier] = np.arange(len(frontier))
        row_pos = pos[node_of]
        G = np.array([Gs[k] for k in frontier])
        H = np.array([Hs[k] for k in frontier])
        gain, feat, thr = _scan_splits(X, g, h, order, row_pos, G, H, lam, hp.gamma, hp.min_child_weight)
        next_frontier = []
        for j, k in enumerate(frontier):
            if feat[j] < 0:
                continue
            rows = np.flatnonzero(node_of == k)
            go_left = X[rows, feat[j]] < thr[j]
            lrows, rrows = rows[go_left], rows[~go_left]
            li, ri = len(feature), len(feature) + 1
            feature[k], threshold[k], left[k], right[k] = int(feat[j]), float(thr[j]), li, ri
            for child_rows in (lrows, rrows):
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                Gs.append(float(np.sum(g[child_rows])))
                Hs.append(float(np.sum(h[child_rows])))
            node_of[lrows], node_of[rrows] = li, ri
            next_frontier += [li, ri]
        frontier = next_frontier
    value = -np.array(Gs) / (np.array(Hs) + lam)
    tree = RegressionTree(np.array(feature), np.array(threshold), np.array(left), np.array(right), value)
    return tree, node_of


def _check_features(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatch(f"feature matrix must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteFeature("features contain NaN or infinity")
    return X


def fit_ensemble(X: np.ndarray, y: np.ndarray, hp: GbtHyperparams):
    """Boost a single-output ensemble; returns (base_score, trees, per-round training loss)."""
    X = np.ascontiguousarray(_check_features(X))
    y = np.asarray(y, dtype=float)
    if len(X) == 0:
        raise EmptyDataset("no training rows")
    if not np.all(np.isfinite(y)):
        raise NonFiniteFeature("targets contain NaN or infinity")
    base = float(np.mean(y))
    pred = np.full(len(y), base)
    order = _presort(X)
    h = np.ones(len(y))
    trees = []
    losses = [float(np.mean((pred - y) ** 2))]
    for _ in range(hp.rounds):
        tree, leaf = grow_tree(X, pred - y, h, hp, order)
        pred = pred + hp.learning_rate * tree.value[leaf]
        trees.append(tree)
        losses.append(float(np.mean((pred - y) ** 2)))
    return base, trees, losses


def train(dataset, hp: GbtHyperparams = GbtHyperparams()) -> GbtModel:
    """Train X and Y ensembles on a (scaled) supervised dataset."""
    if len(dataset) < 2:
        raise EmptyDataset(f"need at least 2 rows, got {len(dataset)}")
    X = dataset.features
    bx, tx, lx = fit_ensemble(X, dataset.targets[:, 0], hp)
    by, ty, ly = fit_ensemble(X, dataset.targets[:, 1], hp)
    log.debug("trained %d+%d trees on %d rows; final mse x=%.3g y=%.3g", len(tx), len(ty), len(X), lx[-1], ly[-1])
    return GbtModel((bx, by), tuple(tx), tuple(ty), hp, tuple(dataset.feature_names), (tuple(lx), tuple(ly)))


def _predict_coord(base: float, trees: Sequence[RegressionTree], eta: float, X: np.ndarray) -> np.ndarray:
    out = np.full(len(X), base)
    for tree in trees:
        out = out + eta * tree.predict(X)
    return out


def predict(model: GbtModel, features) -> np.ndarray:
    """Scaled (x, y) predictions: shape (2,) for one feature vector, (n, 2) for a batch."""
    X = np.asarray(features, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.n_features:
        raise DimensionMismatch(f"model expects {model.n_features} features, got {X.shape[1]}")
    X = _check_features(X)
    eta = model.hyperparams.learning_rate
    out = np.column_stack(
        [
            _predict_coord(model.base_score[0], model.trees_x, eta, X),
            _predict_coord(model.base_score[1], model.trees_y, eta, X),
        ]
    )
    return out[0] if single else out


# --- persistence -------------------------------------------------------------


def _tree_to_dict(t: RegressionTree) -> dict:
    return {
        "feature": t.feature.tolist(),
        "threshold": t.threshold.tolist(),
        "left": t.left.tolist(),
        "right": t.right.tolist(),
        "value": t.value.tolist(),
    }


def model_to_dict(model: GbtModel) -> dict:
    return {
        **formats.json_tag(formats.MODEL),
        "hyperparams": asdict(model.hyperparams),
        "feature_names": list(model.feature_names),
        "base_score": list(model.base_score),
        "trees_x": [_tree_to_dict(t) for t in model.trees_x],
        "trees_y": [_tree_to_dict(t) for t in model.trees_y],
    }


def model_from_dict(doc: dict) -> GbtModel:
    formats.check_json_tag(doc, formats.MODEL)
    try:
        hp = GbtHyperparams(**doc["hyperparams"])
        trees = [
            tuple(RegressionTree(**{k: np.array(v) for k, v in t.items()}) for t in doc[key])
            for key in ("trees_x", "trees_y")
        ]
        base = tuple(float(b) for b in doc["base_score"])
        names = tuple(doc["feature_names"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModel(f"malformed model document: {exc}") from None
    if len(base) != 2:
        raise CorruptModel("base_score must have two entries")
    return GbtModel(base, trees[0], trees[1], hp, names)


def save_model(model: GbtModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n")


def load_model(path: str | Path) -> GbtModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CorruptModel(f"{path}: not a readable model file ({exc})") from None
    return model_from_dict(doc)
