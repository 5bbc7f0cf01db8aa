"""Feature scaling, PCA and a detector chained into one pipeline, plus the
validation grid search over PCA size and contamination."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..core import Status, UndefinedMetricError, confusion, fdr, recall
from ..features import XPCS_SCHEMA_VERSION, xpcs_features
from ..pca import PcaModel, pca_fit
from .envelope import EeModel, ee_fit
from .iforest import IforestModel, iforest_fit
from .lof import LofModel, lof_fit
from ._common import DetectorError

DETECTORS = ("lof", "ee", "iforest")
DEFAULT_N_COMPONENTS = (2, 3, 5, 8, 12, 20)
DEFAULT_CONTAMINATION = (0.01, 0.02, 0.05, 0.1)
_MODEL_TYPES = {"lof": LofModel, "ee": EeModel, "iforest": IforestModel}


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        return cls(X.mean(axis=0), scale)

    def apply(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "Standardizer":
        return cls(np.array(d["mean"], dtype=float), np.array(d["scale"], dtype=float))


def fit_detector(kind: str, Z, contamination: float, seed: int = 0, **params):
    if kind == "lof":
        return lof_fit(Z, params.get("k_neighbors", 20), contamination)
    if kind == "ee":
        return ee_fit(Z, contamination, params.get("support_fraction", 0.8),
                      params.get("n_restarts", 20), seed)
    if kind == "iforest":
        return iforest_fit(Z, params.get("n_trees", 100), params.get("subsample"),
                           contamination, seed)
    raise DetectorError(f"unknown detector {kind!r}; expected one of {DETECTORS}")


@dataclass(frozen=True, eq=False)
class AnomalyPipeline:
    kind: str
    scaler: Standardizer
    pca: PcaModel
    detector: LofModel | EeModel | IforestModel
    contamination: float
    feature_schema: str = XPCS_SCHEMA_VERSION

    @property
    def threshold(self) -> float:
        return self.detector.threshold

    @property
    def n_components(self) -> int:
        return self.pca.k

    def reduce(self, X) -> np.ndarray:
        return self.pca.transform(self.scaler.apply(np.atleast_2d(X)))

    def score_features(self, X) -> np.ndarray:
        return self.detector.score(self.reduce(X))

    def predict_features(self, X) -> list[Status]:
        return [Status.ANOMALOUS if s > self.threshold else Status.NORMAL
                for s in self.score_features(X)]

    def score_bundle(self, bundle) -> float:
        return float(self.score_features(xpcs_features(bundle).values)[0])

    def to_json(self) -> dict:
        return {"kind": self.kind, "scaler": self.scaler.to_json(),
                "pca": self.pca.to_json(), "detector": self.detector.to_json(),
                "contamination": self.contamination,
                "feature_schema": self.feature_schema}

    @classmethod
    def from_json(cls, d: dict) -> "AnomalyPipeline":
        kind = d["kind"]
        if kind not in _MODEL_TYPES:
            raise DetectorError(f"unknown detector {kind!r}")
        return cls(kind, Standardizer.from_json(d["scaler"]), PcaModel.from_json(d["pca"]),
                   _MODEL_TYPES[kind].from_json(d["detector"]), float(d["contamination"]),
                   d.get("feature_schema", XPCS_SCHEMA_VERSION))


def fit_pipeline(kind: str, X_train, n_components: int, contamination: float,
                 seed: int = 0, **params) -> AnomalyPipeline:
    X = np.asarray(X_train, dtype=float)
    scaler = Standardizer.fit(X)
    pca = pca_fit(scaler.apply(X), n_components)
    det = fit_detector(kind, pca.transform(scaler.apply(X)), contamination, seed, **params)
    return AnomalyPipeline(kind, scaler, pca, det, contamination)


def anomaly_objective(predicted: Sequence[Status], actual: Sequence[Status]) -> float:
    """recall on the anomalous class times (1 - FDR); 0 when undefined."""
    cm = confusion(predicted, actual, Status.ANOMALOUS)
    try:
        return recall(cm) * (1.0 - fdr(cm))
    except UndefinedMetricError:
        return 0.0


@dataclass
class TuneResult:
    kind: str
    best: dict
    objective: float
    table: list[dict] = field(default_factory=list)


def tune(kind: str, X_train, X_val, y_val: Sequence[Status],
         n_components: Sequence[int] = DEFAULT_N_COMPONENTS,
         contamination: Sequence[float] = DEFAULT_CONTAMINATION,
         seed: int = 0, workers: int = 1, **params) -> TuneResult:
    """Grid search maximizing recall_anomaly * (1 - FDR) on validation data.

    Ties go to fewer components, then lower contamination.
    """
    if not n_components or not contamination:
        raise ValueError("empty hyperparameter grid")
    y_val = [Status(y) for y in y_val]
    if len(set(y_val)) < 2:
        raise ValueError("validation set must contain both normal and anomalous examples")
    X_train = np.asarray(X_train, dtype=float)
    X_val = np.asarray(X_val, dtype=float)
    limit = min(X_train.shape)
    bad = [k for k in n_components if not 1 <= k <= limit]
    if bad:
        raise ValueError(f"n_components {bad} outside [1, {limit}]")
    cells = sorted((int(k), float(c)) for k in set(n_components) for c in set(contamination))
    scaler = Standardizer.fit(X_train)
    Zt, Zv = scaler.apply(X_train), scaler.apply(X_val)
    pcas = {k: pca_fit(Zt, k) for k in sorted(set(k for k, _ in cells))}

    def run(cell):
        k, c = cell
        pca = pcas[k]
        det = fit_detector(kind, pca.transform(Zt), c, seed, **params)
        pred = det.predict(pca.transform(Zv))
        cm = confusion(pred, y_val, Status.ANOMALOUS)
        row = {"n_components": k, "contamination": c, **cm.as_dict(),
               "objective": anomaly_objective(pred, y_val)}
        return row

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            table = list(pool.map(run, cells))
    else:
        table = [run(cell) for cell in cells]
    best = table[0]
    for row in table[1:]:
        if row["objective"] > best["objective"]:
            best = row
    return TuneResult(kind, {"n_components": best["n_components"],
                             "contamination": best["contamination"]},
                      best["objective"], table)


@dataclass
class DetectorEvaluation:
    kind: str
    pipeline: AnomalyPipeline
    tuning: TuneResult
    test_confusion: object
    recall_anomaly: float
    fdr: float | None

    def row(self) -> dict:
        return {"model": self.kind, **self.tuning.best,
                "recall_anomaly": self.recall_anomaly, "fdr": self.fdr,
                **self.test_confusion.as_dict()}


def evaluate_detectors(X, labels: Sequence[Status], seed: int = 0,
                       kinds: Sequence[str] = DETECTORS,
                       n_components: Sequence[int] = DEFAULT_N_COMPONENTS,
                       contamination: Sequence[float] = DEFAULT_CONTAMINATION,
                       workers: int = 1) -> dict[str, DetectorEvaluation]:
    """Split, tune each detector on validation, refit, and score the test split."""
    from ..core import split_anomaly

    X = np.asarray(X, dtype=float)
    labels = [Status(y) for y in labels]
    normals = [i for i, y in enumerate(labels) if y is Status.NORMAL]
    anomalies = [i for i, y in enumerate(labels) if y is Status.ANOMALOUS]
    split = split_anomaly(normals, anomalies, seed)
    tr, va, te = (list(part) for part in (split.train, split.validation, split.test))
    y_va = [labels[i] for i in va]
    y_te = [labels[i] for i in te]
    out = {}
    for kind in kinds:
        result = tune(kind, X[tr], X[va], y_va, n_components, contamination, seed,
                      workers)
        pipe = fit_pipeline(kind, X[tr], result.best["n_components"],
                            result.best["contamination"], seed)
        pred = pipe.predict_features(X[te])
        cm = confusion(pred, y_te, Status.ANOMALOUS)
        try:
            fd = fdr(cm)
        except UndefinedMetricError:
            fd = None
        out[kind] = DetectorEvaluation(kind, pipe, result, cm, recall(cm), fd)
    return out
