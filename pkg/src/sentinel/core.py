"""Shared data model, binary evaluation metrics and dataset split protocols."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Hashable, Iterable, Iterator, Mapping, Sequence

import numpy as np

CHANNELS = (
    "total_intensity",
    "intensity_std",
    "com_x",
    "com_y",
    "com_x_std",
    "com_y_std",
)
MIN_SERIES_LENGTH = 10


class DataError(ValueError):
    """Malformed measurement or interchange record."""


class UndefinedMetricError(ArithmeticError):
    """A metric was requested whose denominator is zero."""


class Quality(str, enum.Enum):
    GOOD = "Good"
    BAD = "Bad"


class Status(str, enum.Enum):
    NORMAL = "Normal"
    ANOMALOUS = "Anomalous"


def _freeze(a: Any) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Spectrum1D:
    grid: np.ndarray
    intensity: np.ndarray
    meta: Mapping[str, float] = field(default_factory=dict)
    label: Quality | None = None

    def __post_init__(self):
        grid = _freeze(self.grid)
        intensity = _freeze(self.intensity)
        if grid.ndim != 1 or intensity.ndim != 1:
            raise DataError("spectrum grid and intensity must be 1-d")
        if grid.size != intensity.size:
            raise DataError(
                f"grid has {grid.size} points but intensity has {intensity.size}")
        if grid.size < 2:
            raise DataError("spectrum needs at least 2 points")
        if not np.all(np.diff(grid) > 0):
            raise DataError("spectrum grid must be strictly increasing")
        if not (np.all(np.isfinite(grid)) and np.all(np.isfinite(intensity))):
            raise DataError("spectrum contains non-finite values")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "intensity", intensity)
        object.__setattr__(self, "meta", dict(self.meta))
        if self.label is not None:
            object.__setattr__(self, "label", Quality(self.label))

    def __len__(self):
        return self.grid.size


@dataclass(frozen=True, eq=False)
class TimeSeriesBundle:
    channels: Mapping[str, np.ndarray]
    label: Status | None = None
    id: str = ""

    def __post_init__(self):
        missing = set(CHANNELS) - set(self.channels)
        extra = set(self.channels) - set(CHANNELS)
        if missing or extra:
            raise DataError(
                f"series bundle channels mismatch: missing={sorted(missing)} "
                f"unexpected={sorted(extra)}")
        frozen = {name: _freeze(self.channels[name]) for name in CHANNELS}
        lengths = {v.size for v in frozen.values()}
        if len(lengths) != 1:
            raise DataError(f"channels have unequal lengths {sorted(lengths)}")
        (length,) = lengths
        if length < MIN_SERIES_LENGTH:
            raise DataError(
                f"series length {length} below minimum {MIN_SERIES_LENGTH}")
        for name, v in frozen.items():
            if v.ndim != 1 or not np.all(np.isfinite(v)):
                raise DataError(f"channel {name!r} must be a finite 1-d series")
        object.__setattr__(self, "channels", frozen)
        if self.label is not None:
            object.__setattr__(self, "label", Status(self.label))

    def __len__(self):
        return self.channels[CHANNELS[0]].size


# --- metrics -----------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {value}")
            object.__setattr__(self, name, int(value))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def as_dict(self) -> dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def confusion(predicted: Sequence[Hashable], actual: Sequence[Hashable],
              positive: Hashable) -> ConfusionMatrix:
    """Tally a binary confusion matrix with `positive` as the positive class."""
    predicted = list(predicted)
    actual = list(actual)
    if len(predicted) != len(actual):
        raise ValueError(
            f"length mismatch: {len(predicted)} predictions, {len(actual)} labels")
    if not predicted:
        raise ValueError("cannot build a confusion matrix from empty sequences")
    classes = set(predicted) | set(actual) | {positive}
    if len(classes) > 2:
        raise ValueError(f"labels are not binary: {sorted(map(str, classes))}")
    p = np.array([x == positive for x in predicted])
    a = np.array([x == positive for x in actual])
    return ConfusionMatrix(
        tp=int(np.sum(p & a)),
        fp=int(np.sum(p & ~a)),
        tn=int(np.sum(~p & ~a)),
        fn=int(np.sum(~p & a)),
    )


def _ratio(num: int, den: int, metric: str) -> float:
    if den == 0:
        raise UndefinedMetricError(f"{metric} is undefined: zero denominator")
    return num / den


def accuracy(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp + cm.tn, cm.total, "accuracy")


def precision(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fp, "precision")


def recall(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fn, "recall")


def fdr(cm: ConfusionMatrix) -> float:
    """False discovery rate, FP / (FP + TP)."""
    return _ratio(cm.fp, cm.tp + cm.fp, "fdr")


def f1(cm: ConfusionMatrix) -> float:
    # 2TP / (2TP + FP + FN) is the harmonic mean of precision and recall
    # whenever both exist; require both so degenerate cases raise.
    precision(cm)
    recall(cm)
    return _ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn, "f1")


# --- splits ------------------------------------------------------------------

@dataclass(frozen=True)
class SplitAssignment:
    train: tuple[int, ...]
    validation: tuple[int, ...]
    test: tuple[int, ...] = ()

    def __post_init__(self):
        for name in ("train", "validation", "test"):
            object.__setattr__(self, name, tuple(int(i) for i in getattr(self, name)))
        if not self.train:
            raise ValueError("training set is empty")
        seen = set(self.train)
        for part in (self.validation, self.test):
            if seen & set(part):
                raise ValueError("split parts overlap")
            seen |= set(part)
        if len(seen) != len(self.train) + len(self.validation) + len(self.test):
            raise ValueError("split contains duplicate indices")


def round_half_up(x: float) -> int:
    # the epsilon absorbs representation error such as 0.8 * 97 = 77.60000000000001
    return int(math.floor(x + 0.5 + 1e-9))


def split_uniform(n: int, train_frac: float, seed: int) -> SplitAssignment:
    if n < 2:
        raise ValueError(f"need at least 2 items to split, got {n}")
    if not 0 < train_frac < 1:
        raise ValueError(f"train_frac must lie in (0, 1), got {train_frac}")
    n_train = min(max(round_half_up(train_frac * n), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    return SplitAssignment(sorted(order[:n_train]), sorted(order[n_train:]))


def split_anomaly(normals: Sequence[int], anomalies: Sequence[int],
                  seed: int) -> SplitAssignment:
    """80% of normals for training; remaining normals and all anomalies are
    halved between validation and test, validation taking any odd element."""
    normals = np.asarray(list(normals), dtype=int)
    anomalies = np.asarray(list(anomalies), dtype=int)
    if normals.size < 5:
        raise ValueError(f"need at least 5 normal examples, got {normals.size}")
    if anomalies.size < 2:
        raise ValueError(f"need at least 2 anomalous examples, got {anomalies.size}")
    if set(normals.tolist()) & set(anomalies.tolist()):
        raise ValueError("an index is listed as both normal and anomalous")
    rng = np.random.default_rng(seed)
    normals = rng.permutation(normals)
    anomalies = rng.permutation(anomalies)
    n_train = round_half_up(0.8 * normals.size)
    rest = normals[n_train:]
    n_val = (rest.size + 1) // 2
    a_val = (anomalies.size + 1) // 2
    return SplitAssignment(
        train=sorted(normals[:n_train]),
        validation=sorted(np.concatenate([rest[:n_val], anomalies[:a_val]])),
        test=sorted(np.concatenate([rest[n_val:], anomalies[a_val:]])),
    )


def split_unique(n: int, holdout_group: Sequence[int], val_frac_of_rest: float,
                 seed: int) -> SplitAssignment:
    """Validation = the whole holdout group plus a random share of the rest."""
    holdout = sorted(set(int(i) for i in holdout_group))
    if any(i < 0 or i >= n for i in holdout):
        raise ValueError("holdout indices out of range")
    rest = np.setdiff1d(np.arange(n), holdout)
    if rest.size == 0:
        raise ValueError("holdout group covers every index; nothing left to train on")
    if not 0 < val_frac_of_rest < 1:
        raise ValueError(f"val_frac_of_rest must lie in (0, 1), got {val_frac_of_rest}")
    if rest.size == 1:
        return SplitAssignment(rest.tolist(), holdout)
    inner = split_uniform(rest.size, 1.0 - val_frac_of_rest, seed)
    train = rest[list(inner.train)]
    val = np.concatenate([holdout, rest[list(inner.validation)]]).astype(int)
    return SplitAssignment(sorted(train), sorted(val))


# --- JSON Lines interchange ---------------------------------------------------

def spectrum_to_record(s: Spectrum1D) -> dict[str, Any]:
    return {
        "kind": "spectrum",
        "grid": s.grid.tolist(),
        "intensity": s.intensity.tolist(),
        "meta": dict(s.meta),
        "label": s.label.value if s.label is not None else None,
    }


def bundle_to_record(b: TimeSeriesBundle) -> dict[str, Any]:
    return {
        "kind": "series",
        "channels": {name: b.channels[name].tolist() for name in CHANNELS},
        "label": b.label.value if b.label is not None else None,
        "id": b.id,
    }


def to_record(item: Spectrum1D | TimeSeriesBundle) -> dict[str, Any]:
    if isinstance(item, Spectrum1D):
        return spectrum_to_record(item)
    if isinstance(item, TimeSeriesBundle):
        return bundle_to_record(item)
    raise TypeError(f"cannot serialize {type(item).__name__}")


def from_record(rec: Mapping[str, Any]) -> Spectrum1D | TimeSeriesBundle:
    if not isinstance(rec, Mapping):
        raise DataError("record must be a JSON object")
    kind = rec.get("kind")
    try:
        if kind == "spectrum":
            return Spectrum1D(rec["grid"], rec["intensity"], rec.get("meta") or {},
                              rec.get("label"))
        if kind == "series":
            return TimeSeriesBundle(rec["channels"], rec.get("label"),
                                    str(rec.get("id", "")))
    except KeyError as exc:
        raise DataError(f"{kind} record lacks field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"bad {kind} record: {exc}") from None
    raise DataError(f"unknown record kind {kind!r}")


def dumps_record(item: Spectrum1D | TimeSeriesBundle) -> str:
    return json.dumps(to_record(item), allow_nan=False)


def write_jsonl(path: str | Path, items: Iterable[Spectrum1D | TimeSeriesBundle]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(dumps_record(item))
            fh.write("\n")
            n += 1
    return n


def iter_jsonl(path: str | Path) -> Iterator[Spectrum1D | TimeSeriesBundle]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            try:
                yield from_record(rec)
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None


def read_jsonl(path: str | Path) -> list[Spectrum1D | TimeSeriesBundle]:
    return list(iter_jsonl(path))
