"""Isolation forest: random axis-aligned splits isolate outliers in few steps."""
from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass

import numpy as np

from ..core import Status
from ._common import DetectorError, as_points, check_contamination, threshold_from_scores

LEAF = -1
EULER_GAMMA = 0.5772156649015329


@lru_cache(maxsize=4096)
def harmonic(m: int) -> float:
    if m < 1:
        return 0.0
    if m <= 1000:
        return float(sum(1.0 / i for i in range(1, m + 1)))
    return math.log(m) + EULER_GAMMA + 1.0 / (2 * m) - 1.0 / (12 * m * m)


def c_factor(m: int) -> float:
    """Average unsuccessful-search path length in a binary search tree of m items."""
    if m <= 1:
        return 0.0
    return 2.0 * harmonic(m - 1) - 2.0 * (m - 1) / m


@dataclass(frozen=True, eq=False)
class IsolationTree:
    feature: np.ndarray    # split feature per node, LEAF for leaves
    split: np.ndarray      # split value; x < split goes left
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray       # training points reaching a leaf

    def __post_init__(self):
        adj = np.array([c_factor(int(m)) for m in self.size])
        object.__setattr__(self, "_leaf_adjust", adj)

    def path_length(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=int)
        depth = np.zeros(X.shape[0])
        active = self.feature[node] != LEAF
        while np.any(active):
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] < self.split[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            depth[idx] += 1
            active = self.feature[node] != LEAF
        return depth + self._leaf_adjust[node]

    def to_json(self) -> dict:
        return {k: getattr(self, k).tolist()
                for k in ("feature", "split", "left", "right", "size")}

    @classmethod
    def from_json(cls, d: dict) -> "IsolationTree":
        return cls(np.array(d["feature"], dtype=int), np.array(d["split"], dtype=float),
                   np.array(d["left"], dtype=int), np.array(d["right"], dtype=int),
                   np.array(d["size"], dtype=int))


def _grow(X: np.ndarray, depth_cap: int, rng: np.random.Generator) -> IsolationTree:
    feature, split, left, right, size = [], [], [], [], []

    def new_node():
        for arr, v in ((feature, LEAF), (split, 0.0), (left, LEAF), (right, LEAF),
                       (size, 0)):
            arr.append(v)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        size[node] = idx.size
        if depth >= depth_cap or idx.size <= 1:
            continue
        sub = X[idx]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        candidates = np.flatnonzero(hi > lo)
        if candidates.size == 0:
            continue
        f = int(rng.choice(candidates))
        value = rng.uniform(lo[f], hi[f])
        while value <= lo[f]:
            value = rng.uniform(lo[f], hi[f])
        mask = sub[:, f] < value
        feature[node], split[node] = f, float(value)
        l_node, r_node = new_node(), new_node()
        left[node], right[node] = l_node, r_node
        stack.append((r_node, idx[~mask], depth + 1))
        stack.append((l_node, idx[mask], depth + 1))
    return IsolationTree(np.array(feature), np.array(split), np.array(left),
                         np.array(right), np.array(size))


@dataclass(frozen=True, eq=False)
class IforestModel:
    trees: tuple[IsolationTree, ...]
    subsample_size: int
    threshold: float
    d: int
    constant: bool = False

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def mean_path_length(self, X) -> np.ndarray:
        Q = as_points(X, self.d)
        return np.mean([t.path_length(Q) for t in self.trees], axis=0)

    def score(self, X) -> np.ndarray:
        return iforest_score(self, X)

    def predict(self, X) -> list[Status]:
        return iforest_predict(self, X)

    def to_json(self) -> dict:
        return {"trees": [t.to_json() for t in self.trees],
                "subsample_size": self.subsample_size, "threshold": self.threshold,
                "d": self.d, "constant": self.constant}

    @classmethod
    def from_json(cls, d: dict) -> "IforestModel":
        return cls(tuple(IsolationTree.from_json(t) for t in d["trees"]),
                   int(d["subsample_size"]), float(d["threshold"]), int(d["d"]),
                   bool(d.get("constant", False)))


def iforest_fit(X_train, n_trees: int = 100, subsample: int | None = None,
                contamination: float = 0.05, seed: int = 0) -> IforestModel:
    X = as_points(X_train)
    check_contamination(contamination)
    n, d = X.shape
    if n < 4:
        raise DetectorError(f"isolation forest needs at least 4 points, got {n}")
    if n_trees < 1:
        raise DetectorError("need at least one tree")
    psi = min(256, n) if subsample is None else min(int(subsample), n)
    if psi < 2:
        raise DetectorError("subsample size must be at least 2")
    depth_cap = math.ceil(math.log2(psi))
    rng = np.random.default_rng(seed)
    trees = tuple(_grow(X[rng.choice(n, size=psi, replace=False)], depth_cap, rng)
                  for _ in range(n_trees))
    constant = bool(np.all(X.max(axis=0) == X.min(axis=0)))
    model = IforestModel(trees, psi, 0.0, d, constant)
    scores = iforest_score(model, X)
    return IforestModel(trees, psi, threshold_from_scores(scores, contamination), d,
                        constant)


def scores_from_path_length(mean_path: np.ndarray, subsample_size: int) -> np.ndarray:
    return 2.0 ** (-np.asarray(mean_path) / c_factor(subsample_size))


def iforest_score(model: IforestModel, X) -> np.ndarray:
    """s = 2^(-E[h(x)] / c(subsample)); near 1 for outliers, about 0.5 or less inside."""
    return scores_from_path_length(model.mean_path_length(X), model.subsample_size)


def iforest_predict(model: IforestModel, X) -> list[Status]:
    return [Status.ANOMALOUS if s > model.threshold else Status.NORMAL
            for s in iforest_score(model, X)]
