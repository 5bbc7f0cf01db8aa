"""Local outlier factor in novelty mode: new points are scored against a
stored training set, which is never re-scored."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ..core import Status
from ._common import DetectorError, as_points, check_contamination, threshold_from_scores

# keeps the reachability density finite when k neighbours coincide
DENSITY_GUARD = 1e-10


@dataclass(frozen=True, eq=False)
class LofModel:
    X: np.ndarray
    k_neighbors: int
    threshold: float
    k_distance: np.ndarray   # distance from each training point to its k-th neighbour
    lrd: np.ndarray          # local reachability density of each training point
    train_scores: np.ndarray

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def score(self, X) -> np.ndarray:
        return lof_score(self, X)

    def predict(self, X) -> list[Status]:
        return lof_predict(self, X)

    def to_json(self) -> dict:
        return {"X": self.X.tolist(), "k_neighbors": self.k_neighbors,
                "threshold": self.threshold}

    @classmethod
    def from_json(cls, d: dict) -> "LofModel":
        X = np.array(d["X"], dtype=float)
        kdist, lrd, train = _training_state(X, int(d["k_neighbors"]))
        return cls(X, int(d["k_neighbors"]), float(d["threshold"]), kdist, lrd, train)


def _neighbours(dist: np.ndarray, k: int) -> np.ndarray:
    # stable sort: equal distances resolve to the lower training index
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


def _lrd(dist: np.ndarray, nbrs: np.ndarray, kdist: np.ndarray) -> np.ndarray:
    rows = np.arange(dist.shape[0])[:, None]
    reach = np.maximum(kdist[nbrs], dist[rows, nbrs])
    return 1.0 / (reach.mean(axis=1) + DENSITY_GUARD)


def _training_state(X: np.ndarray, k: int):
    dist = cdist(X, X)
    np.fill_diagonal(dist, np.inf)
    nbrs = _neighbours(dist, k)
    kdist = dist[np.arange(X.shape[0]), nbrs[:, -1]]
    lrd = _lrd(dist, nbrs, kdist)
    scores = lrd[nbrs].mean(axis=1) / lrd
    return kdist, lrd, scores


def lof_fit(X_train, k_neighbors: int = 20, contamination: float = 0.05) -> LofModel:
    X = as_points(X_train)
    check_contamination(contamination)
    if not 1 <= k_neighbors < X.shape[0]:
        raise DetectorError(
            f"k_neighbors={k_neighbors} needs 1 <= k < {X.shape[0]} training points")
    kdist, lrd, scores = _training_state(X, k_neighbors)
    return LofModel(X, k_neighbors, threshold_from_scores(scores, contamination),
                    kdist, lrd, scores)


def lof_score(model: LofModel, X) -> np.ndarray:
    """Ratio of neighbours' mean density to the point's own (about 1 inside
    a cluster, larger for outliers)."""
    Q = as_points(X, model.d)
    dist = cdist(Q, model.X)
    nbrs = _neighbours(dist, model.k_neighbors)
    lrd_q = _lrd(dist, nbrs, model.k_distance)
    return model.lrd[nbrs].mean(axis=1) / lrd_q


def lof_predict(model: LofModel, X) -> list[Status]:
    return [Status.ANOMALOUS if s > model.threshold else Status.NORMAL
            for s in lof_score(model, X)]
