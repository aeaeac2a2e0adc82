"""Regularized gradient-boosted regression trees (squared-error loss).

Every round fits one tree to the current residual gradients
``g_i = pred_i - y_i`` (hessian 1) with exact greedy split search:

    leaf weight  w    = -G / (H + lambda)
    split gain        = 1/2 [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)] - gamma

A split is taken only when its gain is strictly positive. Prediction is
``base_score + eta * sum_k tree_k(x)``, accumulated tree by tree.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from dtalang.errors import ConfigError, InvalidInputError, ShapeError

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
TIE_RTOL = 1e-10


@dataclass(frozen=True)
class BoostParams:
    learning_rate: float = 0.3
    n_rounds: int = 100
    max_depth: int = 6
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    subsample: float = 1.0
    colsample: float = 1.0
    base_score: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ConfigError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        if self.n_rounds < 0 or self.max_depth < 0:
            raise ConfigError("n_rounds and max_depth must be non-negative")
        if self.reg_lambda < 0 or self.gamma < 0 or self.min_child_weight < 0:
            raise ConfigError("reg_lambda, gamma and min_child_weight must be non-negative")
        if not (0 < self.subsample <= 1 and 0 < self.colsample <= 1):
            raise ConfigError("subsample fractions must be in (0, 1]")


@dataclass
class RegressionTree:
    """Flat array encoding; node 0 is the root, ``left == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    default_left: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.value)

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.intp)
        rows = np.arange(len(X))
        while True:
            active = self.left[node] >= 0
            if not active.any():
                return self.value[node]
            r = rows[active]
            nd = node[active]
            x = X[r, self.feature[nd]]
            go_left = np.where(np.isnan(x), self.default_left[nd], x < self.threshold[nd])
            node[active] = np.where(go_left, self.left[nd], self.right[nd])

    def to_dict(self, node: int = 0) -> dict:
        if self.is_leaf(node):
            return {"leaf": float(self.value[node])}
        return {
            "feature": int(self.feature[node]),
            "threshold": float(self.threshold[node]),
            "default_left": bool(self.default_left[node]),
            "left": self.to_dict(int(self.left[node])),
            "right": self.to_dict(int(self.right[node])),
        }

    @classmethod
    def from_dict(cls, tree: dict) -> "RegressionTree":
        b = _TreeBuilder()

        def walk(d):
            if "leaf" in d:
                return b.leaf(d["leaf"])
            node = b.split(d["feature"], d["threshold"], d.get("default_left", True))
            b.attach(node, walk(d["left"]), walk(d["right"]))
            return node

        walk(tree)
        return b.build()


class _TreeBuilder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.value, self.default_left = [], []

    def _new(self, feature, threshold, value, default_left):
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        self.default_left.append(default_left)
        return len(self.value) - 1

    def leaf(self, value):
        return self._new(0, 0.0, float(value), True)

    def split(self, feature, threshold, default_left=True):
        return self._new(int(feature), float(threshold), 0.0, bool(default_left))

    def attach(self, node, left, right):
        self.left[node] = left
        self.right[node] = right

    def build(self) -> RegressionTree:
        return RegressionTree(
            feature=np.array(self.feature, dtype=np.intp),
            threshold=np.array(self.threshold, dtype=np.float64),
            left=np.array(self.left, dtype=np.intp),
            right=np.array(self.right, dtype=np.intp),
            value=np.array(self.value, dtype=np.float64),
            default_left=np.array(self.default_left, dtype=bool),
        )


@dataclass
class TreeEnsemble:
    base_score: float
    learning_rate: float
    trees: list[RegressionTree]
    params: BoostParams
    n_features: int
    train_mse: list[float] = field(default_factory=list)

    def predict(self, X, n_trees: int | None = None) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] != self.n_features:
            raise ShapeError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.full(len(X), self.base_score, dtype=np.float64)
        for tree in self.trees[:n_trees]:
            out += self.learning_rate * tree.predict(X)
        return out

    def staged_predict(self, X):
        """Yield predictions after 0, 1, 2, ... trees."""
        X = _as_matrix(X)
        out = np.full(len(X), self.base_score, dtype=np.float64)
        yield out.copy()
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
            yield out.copy()

    def truncated(self, n_trees: int) -> "TreeEnsemble":
        return TreeEnsemble(self.base_score, self.learning_rate, self.trees[:n_trees],
                            replace(self.params, n_rounds=n_trees), self.n_features,
                            self.train_mse[:n_trees + 1])

    def to_dict(self) -> dict:
        return {
            "version": MODEL_FORMAT_VERSION,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "n_features": self.n_features,
            "params": asdict(self.params),
            "trees": [t.to_dict() for t in self.trees],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "TreeEnsemble":
        if d.get("version") != MODEL_FORMAT_VERSION:
            raise InvalidInputError(f"unsupported model version {d.get('version')!r}")
        return cls(base_score=float(d["base_score"]), learning_rate=float(d["learning_rate"]),
                   trees=[RegressionTree.from_dict(t) for t in d["trees"]],
                   params=BoostParams(**d["params"]), n_features=int(d["n_features"]))

    @classmethod
    def load(cls, path: str | Path) -> "TreeEnsemble":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"feature matrix must be 2-D, got shape {X.shape}")
    return X


def leaf_weight(G: float, H: float, reg_lambda: float) -> float:
    return -G / (H + reg_lambda)


@njit(cache=True)
def _level_splits(sorted_vals, order, g, h, node_of, G, H, cols, lam, gamma, min_child):
    """Best split of every open node of one tree level.

    ``order[f]`` lists the rows by increasing value of feature ``f`` and
    ``sorted_vals[f]`` holds those values. One sweep per feature; rows with
    ``node_of < 0`` are inactive. Candidates are visited by increasing
    column and threshold and replaced only when the gain is larger by more
    than a relative ``TIE_RTOL``, so ties (including ties that rounding
    blurs, e.g. the same partition reached through two columns) go to the
    lowest column, then the lowest threshold.
    """
    n_nodes = len(G)
    best_gain = np.full(n_nodes, -np.inf)
    best_col = np.full(n_nodes, -1)
    best_thr = np.zeros(n_nodes)
    GL = np.zeros(n_nodes)
    HL = np.zeros(n_nodes)
    prev = np.zeros(n_nodes)
    seen = np.zeros(n_nodes, dtype=np.bool_)
    parent = np.empty(n_nodes)
    for k in range(n_nodes):
        parent[k] = G[k] * G[k] / (H[k] + lam)
    for ci in range(len(cols)):
        f = cols[ci]
        GL[:] = 0.0
        HL[:] = 0.0
        seen[:] = False
        rows = order[f]
        vals = sorted_vals[f]
        for t in range(len(rows)):
            r = rows[t]
            k = node_of[r]
            if k < 0:
                continue
            x = vals[t]
            if seen[k] and x > prev[k]:
                hl = HL[k]
                hr = H[k] - hl
                if hl >= min_child and hr >= min_child:
                    gl = GL[k]
                    gr = G[k] - gl
                    gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent[k]) - gamma
                    if best_col[k] < 0 or gain > best_gain[k] + TIE_RTOL * abs(best_gain[k]):
                        best_gain[k] = gain
                        best_col[k] = f
                        thr = 0.5 * (prev[k] + x)
                        if not thr > prev[k]:
                            thr = x
                        best_thr[k] = thr
            GL[k] += g[r]
            HL[k] += h[r]
            prev[k] = x
            seen[k] = True
    return best_gain, best_col, best_thr


@njit(cache=True)
def _node_sums(node_of, g, h, n_nodes):
    G = np.zeros(n_nodes)
    H = np.zeros(n_nodes)
    for r in range(len(node_of)):
        k = node_of[r]
        if k >= 0:
            G[k] += g[r]
            H[k] += h[r]
    return G, H


def _grow_tree(X, presorted, g, h, rows, cols, params: BoostParams):
    """Grow one tree level by level; None if the root cannot split."""
    builder = _TreeBuilder()
    lam = params.reg_lambda
    node_of = np.full(len(X), -1, dtype=np.int64)
    node_of[rows] = 0
    links = [None]  # (parent builder id, side) for each open node of the level
    depth = 0
    while links:
        n_nodes = len(links)
        G, H = _node_sums(node_of, g, h, n_nodes)
        if depth < params.max_depth:
            gain, col, thr = _level_splits(presorted[1], presorted[0], g, h, node_of, G, H, cols,
                                           lam, params.gamma, params.min_child_weight)
        else:
            gain = np.full(n_nodes, -np.inf)
        if depth == 0 and params.max_depth > 0 and not gain[0] > 0:
            return None
        child_slot = np.full(n_nodes, -1, dtype=np.int64)
        next_links = []
        for k, link in enumerate(links):
            if gain[k] > 0:
                node = builder.split(col[k], thr[k], True)
                child_slot[k] = len(next_links)
                next_links += [(node, 0), (node, 1)]
            else:
                node = builder.leaf(leaf_weight(G[k], H[k], lam))
            if link is not None:
                parent, side = link
                (builder.left if side == 0 else builder.right)[parent] = node
        if not next_links:
            break
        idx = np.flatnonzero(node_of >= 0)
        ks = node_of[idx]
        slot = child_slot[ks]
        split = slot >= 0
        go_right = ~(X[idx[split], col[ks[split]]] < thr[ks[split]])
        node_of[idx] = -1
        node_of[idx[split]] = slot[split] + go_right
        links = next_links
        depth += 1
    return builder.build()


def _check_inputs(X, y):
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or len(y) != len(X):
        raise ShapeError(f"{len(X)} rows but {y.size} targets")
    if len(y) < 2:
        raise InvalidInputError("need at least two training rows")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("features contain NaN or infinity")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("targets contain NaN or infinity")
    return X, y


def fit(X, y, params: BoostParams = BoostParams()) -> TreeEnsemble:
    """Train a boosted ensemble of at most ``params.n_rounds`` trees.

    Training stops early when a round finds no positive-gain split at the
    root. With ``max_depth=0`` every round adds a single leaf.
    """
    X, y = _check_inputs(X, y)
    n, d = X.shape
    base = float(np.mean(y)) if params.base_score is None else float(params.base_score)
    pred = np.full(n, base)
    h = np.ones(n)
    rng = np.random.default_rng(params.seed)
    all_rows = np.arange(n)
    all_cols = np.arange(d)
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    presorted = (order, np.take_along_axis(X.T, order, axis=1))
    trees = []
    train_mse = [float(np.mean((pred - y) ** 2))]
    for k in range(params.n_rounds):
        g = pred - y
        rows = all_rows
        if params.subsample < 1:
            take = max(1, int(round(params.subsample * n)))
            rows = np.sort(rng.choice(n, size=take, replace=False))
        cols = all_cols
        if params.colsample < 1:
            take = max(1, int(round(params.colsample * d)))
            cols = np.sort(rng.choice(d, size=take, replace=False))
        tree = _grow_tree(X, presorted, g, h, rows, cols, params)
        if tree is None:
            logger.debug("round %d: no positive-gain split, stopping", k)
            break
        pred += params.learning_rate * tree.predict(X)
        trees.append(tree)
        train_mse.append(float(np.mean((pred - y) ** 2)))
    return TreeEnsemble(base_score=base, learning_rate=params.learning_rate, trees=trees,
                        params=params, n_features=d, train_mse=train_mse)


def predict(ensemble: TreeEnsemble, X) -> np.ndarray:
    return ensemble.predict(X)


@dataclass(frozen=True)
class HyperParamGrid:
    learning_rate: Sequence[float] = (0.05, 0.1, 0.3)
    n_rounds: Sequence[int] = (100, 500, 1000, 2000)
    max_depth: Sequence[int] = (4, 6, 8)
    reg_lambda: Sequence[float] = (1.0,)
    gamma: Sequence[float] = (0.0,)
    min_child_weight: Sequence[float] = (1.0,)
    subsample: Sequence[float] = (1.0,)
    colsample: Sequence[float] = (1.0,)

    def points(self, seed: int = 0) -> list[BoostParams]:
        """Cartesian product in field order (later fields vary fastest)."""
        names = [f.name for f in fields(self)]
        lists = [list(getattr(self, name)) for name in names]
        if any(not values for values in lists):
            raise ConfigError("hyper-parameter grid has an empty candidate list")
        return [BoostParams(**dict(zip(names, combo)), seed=seed)
                for combo in itertools.product(*lists)]


@dataclass
class GridSearchResult:
    best: BoostParams
    table: list[tuple[BoostParams, float, list[float]]]
    # per-fold ensembles keyed by grid point with n_rounds zeroed
    models: dict[BoostParams, list[TreeEnsemble]]

    def best_models(self) -> list[TreeEnsemble]:
        """The per-fold ensembles of the winning grid point."""
        key = replace(self.best, n_rounds=0)
        return [m.truncated(self.best.n_rounds) for m in self.models[key]]


def grid_search_cv(folds, grid: HyperParamGrid | Sequence[BoostParams], seed: int = 0
                   ) -> GridSearchResult:
    """Pick the grid point with the lowest mean validation MSE.

    ``folds`` is a sequence of ``(X_train, y_train, X_val, y_val)``. Ties go
    to the earliest point in grid order. Points that differ only in
    ``n_rounds`` share one fit per fold: the model is trained for the
    largest round count and truncated, which gives the same predictions
    as separate fits.
    """
    points = grid.points(seed) if isinstance(grid, HyperParamGrid) else list(grid)
    if not points:
        raise ConfigError("hyper-parameter grid is empty")
    folds = list(folds)
    if not folds:
        raise ConfigError("no cross-validation folds")

    groups: dict[BoostParams, int] = {}
    for p in points:
        key = replace(p, n_rounds=0)
        groups[key] = max(groups.get(key, 0), p.n_rounds)

    fitted: dict[BoostParams, list[TreeEnsemble]] = {}
    staged: dict[BoostParams, list[list[float]]] = {}
    for key, max_rounds in groups.items():
        fitted[key] = []
        staged[key] = []
        for X_tr, y_tr, X_va, y_va in folds:
            model = fit(X_tr, y_tr, replace(key, n_rounds=max_rounds))
            y_va = np.asarray(y_va, dtype=np.float64)
            curve = [float(np.mean((p - y_va) ** 2)) for p in model.staged_predict(X_va)]
            fitted[key].append(model)
            staged[key].append(curve)

    table = []
    best = None
    best_score = np.inf
    for p in points:
        key = replace(p, n_rounds=0)
        per_fold = [curve[min(p.n_rounds, len(curve) - 1)] for curve in staged[key]]
        score = float(np.mean(per_fold))
        table.append((p, score, per_fold))
        if score < best_score:
            best, best_score = p, score
    return GridSearchResult(best=best, table=table, models=fitted)
