"""Elliptic envelope: robust location/scatter from concentration steps, then
squared Mahalanobis distance against a training-quantile cutoff."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from ..core import Status
from ..linalg import cho_solve, log_det_spd, regularized_cholesky, solve_lower
from ._common import DetectorError, as_points, check_contamination, threshold_from_scores

MAX_CSTEPS = 100


@dataclass(frozen=True, eq=False)
class EeModel:
    center: np.ndarray
    covariance: np.ndarray
    threshold: float
    regularized: bool = False

    @property
    def d(self) -> int:
        return self.center.size

    def score(self, X) -> np.ndarray:
        return ee_score(self, X)

    def predict(self, X) -> list[Status]:
        return ee_predict(self, X)

    def to_json(self) -> dict:
        return {"center": self.center.tolist(), "covariance": self.covariance.tolist(),
                "threshold": self.threshold, "regularized": self.regularized}

    @classmethod
    def from_json(cls, d: dict) -> "EeModel":
        center = np.array(d["center"], dtype=float)
        cov = np.array(d["covariance"], dtype=float).reshape(center.size, center.size)
        return cls(center, cov, float(d["threshold"]), bool(d.get("regularized")))


def _sq_mahalanobis(X: np.ndarray, center: np.ndarray, low: np.ndarray) -> np.ndarray:
    z = solve_lower(low, (X - center).T)
    return np.sum(z * z, axis=0)


def _estimate(X: np.ndarray):
    center = X.mean(axis=0)
    diff = X - center
    cov = diff.T @ diff / X.shape[0]
    low, reg = regularized_cholesky(cov)
    return center, cov, low, reg


def _concentrate(X: np.ndarray, subset: np.ndarray, h: int):
    for _ in range(MAX_CSTEPS):
        center, cov, low, reg = _estimate(X[subset])
        dist = _sq_mahalanobis(X, center, low)
        new = np.sort(np.argsort(dist, kind="stable")[:h])
        if np.array_equal(new, subset):
            break
        subset = new
    return center, cov, low, reg, subset


def _elemental_start(X: np.ndarray, h: int, rng: np.random.Generator) -> np.ndarray:
    """h points closest to a random (d+1)-point subset, grown until nonsingular.

    Small starts are far more likely to be outlier-free than random h-subsets.
    """
    n, d = X.shape
    order = rng.permutation(n)
    size = min(d + 1, n)
    while True:
        center, _, low, reg = _estimate(X[order[:size]])
        if not reg or size >= n:
            break
        size += 1
    dist = _sq_mahalanobis(X, center, low)
    return np.sort(np.argsort(dist, kind="stable")[:h])


def robust_location_scatter(X, support_fraction: float = 0.8, n_restarts: int = 20,
                            seed: int = 0):
    """Approximate minimum-covariance-determinant estimate.

    Each restart seeds an h-subset (h = ceil(support_fraction * n)) from a random
    elemental subset and alternates (fit mean/covariance, keep the closest h
    points) until the subset stops changing; the lowest-determinant result wins.
    The covariance is then rescaled so the median squared distance matches the
    chi-square median.
    """
    X = as_points(X)
    n, d = X.shape
    if not 0 < support_fraction <= 1:
        raise DetectorError(f"support_fraction must lie in (0, 1], got {support_fraction}")
    h = min(n, math.ceil(support_fraction * n))
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_restarts):
        start = _elemental_start(X, h, rng)
        center, cov, low, reg, subset = _concentrate(X, start, h)
        logdet = log_det_spd(low)
        if best is None or logdet < best[0]:
            best = (logdet, center, cov, low, reg)
    _, center, cov, low, reg = best
    dist = _sq_mahalanobis(X, center, low)
    med = np.median(dist)
    if med > 0:
        cov = cov * (med / chi2.ppf(0.5, d))
    low, reg2 = regularized_cholesky(cov)
    return center, low @ low.T if (reg or reg2) else cov, reg or reg2


def ee_fit(X_train, contamination: float = 0.05, support_fraction: float = 0.8,
           n_restarts: int = 20, seed: int = 0) -> EeModel:
    X = as_points(X_train)
    check_contamination(contamination)
    n, d = X.shape
    if n <= 2 * d:
        raise DetectorError(f"elliptic envelope needs more than {2 * d} points, got {n}")
    center, cov, reg = robust_location_scatter(X, support_fraction, n_restarts, seed)
    model = EeModel(center, cov, 0.0, reg)
    scores = ee_score(model, X)
    return EeModel(center, cov, threshold_from_scores(scores, contamination), reg)


def ee_score(model: EeModel, X) -> np.ndarray:
    """Squared Mahalanobis distance (x - center)^T Sigma^-1 (x - center)."""
    Q = as_points(X, model.d)
    low, _ = regularized_cholesky(model.covariance)
    diff = (Q - model.center).T
    return np.sum(diff * cho_solve(low, diff), axis=0)


def ee_predict(model: EeModel, X) -> list[Status]:
    return [Status.ANOMALOUS if s > model.threshold else Status.NORMAL
            for s in ee_score(model, X)]
