"""Deterministic feature engineering for time-series bundles and spectra.

Series features (93 values): 15 statistics for each of the six channels,
computed after channel-aware preprocessing, followed by 3 global values.
Spectrum features (20 values): 10 statistics of the 400-point intensity and
the same 10 of its forward difference.  Names and order are pinned in
``data/feature_schema.json``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable

import numpy as np

from .core import CHANNELS, Spectrum1D, TimeSeriesBundle

XPCS_SCHEMA_VERSION = "xpcs-93/v1"
XAFS_SCHEMA_VERSION = "xafs-20/v1"
N_XPCS = 93
N_XAFS = 20
DOWNSAMPLE_POINTS = 400

INTENSITY_LIKE = frozenset(
    {"total_intensity", "intensity_std", "com_x_std", "com_y_std"})
POSITION_LIKE = frozenset({"com_x", "com_y"})

CHANNEL_STATS = (
    "std_mean_ratio",
    "autocorr_1",
    "autocorr_2",
    "autocorr_3",
    "autocorr_4",
    "std_to_diff_std",
    "end_minus_begin",
    "mean_abs_diff",
    "max_abs_dev_median",
    "trend_slope",
    "frac_beyond_3std",
    "half_std_ratio",
    "range_to_std",
    "median",
    "iqr",
)
GLOBAL_STATS = ("log_length", "intensity_begin_end_ratio", "n_flagged_channels")
SPECTRUM_STATS = (
    "autocorr_1",
    "autocorr_2",
    "autocorr_3",
    "autocorr_4",
    "mean_first5",
    "mean_last5",
    "mean",
    "std",
    "sum",
    "argmax_frac",
)


class FeatureError(ValueError):
    pass


@lru_cache(maxsize=1)
def feature_schema() -> dict:
    """Versioned descriptor of both feature vectors."""
    text = resources.files("sentinel").joinpath("data/feature_schema.json").read_text()
    return json.loads(text)


def xpcs_feature_names() -> list[str]:
    names = [f"{ch}.{stat}" for ch in CHANNELS for stat in CHANNEL_STATS]
    return names + list(GLOBAL_STATS)


def xafs_feature_names() -> list[str]:
    return ([f"spectrum.{s}" for s in SPECTRUM_STATS]
            + [f"derivative.{s}" for s in SPECTRUM_STATS])


@dataclass(frozen=True, eq=False)
class XpcsFeatureVector:
    values: np.ndarray
    flags: frozenset[str] = frozenset()
    schema_version: str = XPCS_SCHEMA_VERSION

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (N_XPCS,) or not np.all(np.isfinite(v)):
            raise FeatureError("series feature vector must be 93 finite values")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class XafsFeatureVector:
    values: np.ndarray
    flags: frozenset[str] = frozenset()
    schema_version: str = XAFS_SCHEMA_VERSION

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (N_XAFS,) or not np.all(np.isfinite(v)):
            raise FeatureError("spectrum feature vector must be 20 finite values")
        object.__setattr__(self, "values", v)


# --- primitives -----------------------------------------------------------------

def preprocess_channel(series, kind: str) -> tuple[np.ndarray, bool]:
    """Center a channel; intensity-like channels are also divided by their mean.

    Returns the processed series and a flag that is set when an
    intensity-like channel has zero mean and could only be centered.
    """
    x = np.asarray(series, dtype=float)
    if x.size < 2:
        raise FeatureError("channel needs at least 2 samples")
    mean = x.mean()
    centered = x - mean
    if kind == "position-like":
        return centered, False
    if kind != "intensity-like":
        raise FeatureError(f"unknown channel kind {kind!r}")
    if mean == 0.0:
        return centered, True
    return centered / mean, False


def autocorr(series, lag: int) -> tuple[float, bool]:
    """Pearson correlation of series[:-lag] with series[lag:].

    Zero-variance overlaps give (0.0, True).
    """
    x = np.asarray(series, dtype=float)
    if lag < 1:
        raise FeatureError(f"lag must be >= 1, got {lag}")
    if lag >= x.size:
        raise FeatureError(f"lag {lag} needs a series longer than {x.size}")
    a = x[:-lag] - x[:-lag].mean()
    b = x[lag:] - x[lag:].mean()
    den = np.sqrt(np.dot(a, a) * np.dot(b, b))
    if not den > 0:
        return 0.0, True
    return float(np.clip(np.dot(a, b) / den, -1.0, 1.0)), False


def _safe_div(num: float, den: float) -> tuple[float, bool]:
    if den == 0.0 or not np.isfinite(den):
        return 0.0, True
    return num / den, False


def _channel_stats(y: np.ndarray) -> tuple[list[float], bool]:
    flagged = False
    n = y.size
    out: list[float] = []
    std = y.std()
    out.append(std)
    for lag in range(1, 5):
        if lag < n:
            r, f = autocorr(y, lag)
        else:
            r, f = 0.0, True
        out.append(r)
        flagged |= f
    dy = np.diff(y)
    ratio, f = _safe_div(std, dy.std())
    out.append(ratio)
    flagged |= f
    k = min(5, n)
    out.append(y[-k:].mean() - y[:k].mean())
    out.append(np.abs(dy).mean())
    med = np.median(y)
    out.append(np.abs(y - med).max())
    # slope against time rescaled to [0, 1] so series of any length compare
    t = np.linspace(0.0, 1.0, n)
    tc = t - t.mean()
    out.append(np.dot(tc, y - y.mean()) / np.dot(tc, tc))
    out.append(float(np.mean(np.abs(y - y.mean()) > 3 * std)) if std > 0 else 0.0)
    half = n // 2
    hr, f = _safe_div(y[:half].std(), y[half:].std())
    out.append(hr)
    flagged |= f
    rs, f = _safe_div(np.ptp(y), std)
    out.append(rs)
    flagged |= f
    out.append(med)
    q75, q25 = np.percentile(y, [75, 25])
    out.append(q75 - q25)
    return [float(v) for v in out], flagged


def xpcs_features(bundle: TimeSeriesBundle) -> XpcsFeatureVector:
    values: list[float] = []
    flags: set[str] = set()
    for name in CHANNELS:
        kind = "position-like" if name in POSITION_LIKE else "intensity-like"
        y, f0 = preprocess_channel(bundle.channels[name], kind)
        stats, f1 = _channel_stats(y)
        values.extend(stats)
        if f0 or f1:
            flags.add(name)
    raw = bundle.channels["total_intensity"]
    k = min(5, raw.size)
    ratio, f = _safe_div(raw[:k].mean(), raw[-k:].mean())
    if f:
        flags.add("intensity_begin_end_ratio")
    values.append(float(np.log(len(bundle))))
    values.append(float(ratio))
    values.append(float(sum(1 for c in CHANNELS if c in flags)))
    return XpcsFeatureVector(np.array(values), frozenset(flags))


def downsample_spectrum(s: Spectrum1D, target: int = DOWNSAMPLE_POINTS) -> Spectrum1D:
    """Linear interpolation onto a uniform grid spanning the original bounds."""
    if target < 2:
        raise FeatureError("target length must be >= 2")
    grid = np.linspace(s.grid[0], s.grid[-1], target)
    grid[0], grid[-1] = s.grid[0], s.grid[-1]
    intensity = np.interp(grid, s.grid, s.intensity)
    intensity[0], intensity[-1] = s.intensity[0], s.intensity[-1]
    return Spectrum1D(grid, intensity, s.meta, s.label)


def _spectrum_stats(x: np.ndarray) -> tuple[list[float], bool]:
    flagged = False
    out: list[float] = []
    for lag in range(1, 5):
        r, f = autocorr(x, lag)
        out.append(r)
        flagged |= f
    out.append(x[:5].mean())
    out.append(x[-5:].mean())
    out.append(x.mean())
    out.append(x.std())
    out.append(x.sum())
    out.append(int(np.argmax(x)) / (x.size - 1))
    return [float(v) for v in out], flagged


def xafs_features(s: Spectrum1D | np.ndarray) -> XafsFeatureVector:
    x = np.asarray(s.intensity if isinstance(s, Spectrum1D) else s, dtype=float)
    if x.shape != (DOWNSAMPLE_POINTS,):
        raise FeatureError(
            f"spectrum features need {DOWNSAMPLE_POINTS} points, got {x.size}; "
            "call downsample_spectrum first")
    d = np.diff(x)
    d = np.append(d, d[-1])
    a, fa = _spectrum_stats(x)
    b, fb = _spectrum_stats(d)
    flags = set()
    if fa:
        flags.add("spectrum")
    if fb:
        flags.add("derivative")
    return XafsFeatureVector(np.array(a + b), frozenset(flags))


# --- normalization ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FeatureNormalizer:
    """Divides each feature by its largest absolute training value."""
    maxima: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.maxima, dtype=float)
        if m.ndim != 1 or np.any(m <= 0) or not np.all(np.isfinite(m)):
            raise FeatureError("normalizer maxima must be positive and finite")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "maxima", m)

    def to_json(self) -> dict:
        return {"maxima": self.maxima.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "FeatureNormalizer":
        return cls(np.array(d["maxima"], dtype=float))


def _as_rows(vectors) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        return np.atleast_2d(np.asarray(vectors, dtype=float))
    rows = [v.values if hasattr(v, "values") else v for v in vectors]
    return np.atleast_2d(np.asarray(rows, dtype=float))


def fit_normalizer(train: Iterable) -> FeatureNormalizer:
    X = _as_rows(train)
    if X.shape[0] == 0:
        raise FeatureError("cannot fit a normalizer on no data")
    m = np.abs(X).max(axis=0)
    m[m == 0] = 1.0
    return FeatureNormalizer(m)


def apply_normalizer(norm: FeatureNormalizer, v) -> np.ndarray:
    x = np.asarray(v.values if hasattr(v, "values") else v, dtype=float)
    if x.shape[-1] != norm.maxima.size:
        raise FeatureError(
            f"expected {norm.maxima.size} features, got {x.shape[-1]}")
    return x / norm.maxima


def xpcs_matrix(bundles: Iterable[TimeSeriesBundle]) -> np.ndarray:
    return np.array([xpcs_features(b).values for b in bundles])


def xafs_matrix(spectra: Iterable[Spectrum1D]) -> np.ndarray:
    return np.array([xafs_features(downsample_spectrum(s)).values for s in spectra])
