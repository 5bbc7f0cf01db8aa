from __future__ import annotations

import numpy as np

from ..core import round_half_up


class DetectorError(ValueError):
    pass


def check_contamination(contamination: float):
    if not 0 < contamination < 0.5:
        raise DetectorError(f"contamination must lie in (0, 0.5), got {contamination}")


def threshold_from_scores(scores: np.ndarray, contamination: float) -> float:
    """Cutoff leaving round(contamination * n) training scores strictly above it."""
    s = np.sort(np.asarray(scores, dtype=float))[::-1]
    n_out = min(round_half_up(contamination * s.size), s.size - 1)
    return float(s[n_out])


def as_points(X, d: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        # unknown width: a 1-d array is a sample of scalars
        if d is None or (d == 1 and X.size != 1):
            X = X[:, None]
        else:
            X = X[None, :]
    if X.ndim != 2:
        raise DetectorError(f"expected 2-d data, got shape {X.shape}")
    if d is not None and X.shape[1] != d:
        raise DetectorError(f"expected {d} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise DetectorError("data contains non-finite values")
    return X
