"""Principal component analysis for reducing engineered feature vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class PcaError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray                 # d
    components: np.ndarray           # k x d, orthonormal rows
    explained_variance: np.ndarray   # k, descending
    degenerate: bool = False         # training data had zero variance

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def d(self) -> int:
        return self.components.shape[1]

    def transform(self, X) -> np.ndarray:
        return pca_transform(self, X)

    def inverse_transform(self, scores) -> np.ndarray:
        return np.asarray(scores, dtype=float) @ self.components + self.mean

    def to_json(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PcaModel":
        return cls(np.array(d["mean"], dtype=float),
                   np.array(d["components"], dtype=float).reshape(-1, len(d["mean"])),
                   np.array(d["explained_variance"], dtype=float),
                   bool(d.get("degenerate", False)))


def _fix_signs(components: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(components.shape[0]), idx])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


def pca_fit(X, k: int) -> PcaModel:
    """Top-k principal axes of X (rows are samples).

    Uses the SVD of the centered data; variances use the n-1 divisor and
    each axis is signed so its largest-magnitude entry is positive.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise PcaError(f"expected a 2-d array, got shape {X.shape}")
    n, d = X.shape
    if n < 2:
        raise PcaError("PCA needs at least 2 samples")
    if not 1 <= k <= min(n, d):
        raise PcaError(f"k={k} outside [1, min(n, d)={min(n, d)}]")
    if not np.all(np.isfinite(X)):
        raise PcaError("data contains non-finite values")
    mean = X.mean(axis=0)
    centered = X - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=True)
    var = np.zeros(d)
    var[:s.size] = s**2 / (n - 1)
    degenerate = not np.any(var > 0)
    if degenerate:
        vt = np.eye(d)
    return PcaModel(mean, _fix_signs(vt[:k]), var[:k], degenerate)


def pca_transform(model: PcaModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    one = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.d:
        raise PcaError(f"expected {model.d} columns, got {X.shape[1]}")
    scores = (X - model.mean) @ model.components.T
    return scores[0] if one else scores
