"""Good/bad spectrum classifiers and the raw-vs-engineered evaluation suite.

Labels are handled internally as 0/1 with 1 = the positive class (Bad).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .core import (ConfusionMatrix, Quality, Spectrum1D, accuracy, confusion, f1,
                   split_uniform, split_unique)
from .features import (FeatureNormalizer, apply_normalizer, downsample_spectrum,
                       fit_normalizer, xafs_features)

POSITIVE = Quality.BAD


class ClassifierError(ValueError):
    pass


class MlpDivergedError(ArithmeticError):
    pass


def encode(labels: Sequence) -> np.ndarray:
    return np.array([1 if Quality(y) is POSITIVE else 0 for y in labels], dtype=int)


def decode(y) -> list[Quality]:
    return [Quality.BAD if int(v) == 1 else Quality.GOOD for v in np.atleast_1d(y)]


def _check_xy(X, y):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=int)
    if X.shape[0] != y.size:
        raise ClassifierError(f"{X.shape[0]} rows but {y.size} labels")
    if not np.all(np.isfinite(X)):
        raise ClassifierError("training data contains non-finite values")
    if not set(np.unique(y)) <= {0, 1}:
        raise ClassifierError("labels must be 0/1")
    return X, y


# --- k nearest neighbours ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KnnModel:
    X: np.ndarray
    y: np.ndarray
    k: int = 5

    def predict(self, X) -> np.ndarray:
        return knn_predict(self, X)

    def to_json(self) -> dict:
        return {"X": self.X.tolist(), "y": self.y.tolist(), "k": self.k}

    @classmethod
    def from_json(cls, d: dict) -> "KnnModel":
        return cls(np.array(d["X"], dtype=float), np.array(d["y"], dtype=int), int(d["k"]))


def knn_fit(X, y, k: int = 5) -> KnnModel:
    X, y = _check_xy(X, y)
    if not 1 <= k <= X.shape[0]:
        raise ClassifierError(f"k={k} must lie in [1, {X.shape[0]}]")
    return KnnModel(X, y, k)


def knn_predict(model: KnnModel, X) -> np.ndarray:
    """Majority vote of the k nearest (Euclidean); a tied vote goes to the
    single nearest neighbour's label."""
    Q = np.atleast_2d(np.asarray(X, dtype=float))
    if Q.shape[1] != model.X.shape[1]:
        raise ClassifierError(f"expected {model.X.shape[1]} features, got {Q.shape[1]}")
    dist = cdist(Q, model.X)
    nbrs = np.argsort(dist, axis=1, kind="stable")[:, :model.k]
    votes = model.y[nbrs]
    ones = votes.sum(axis=1)
    zeros = model.k - ones
    out = np.where(ones > zeros, 1, 0)
    tie = ones == zeros
    out[tie] = votes[tie, 0]
    return out


# --- random forest ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DecisionTree:
    feature: np.ndarray     # -1 at leaves
    threshold: np.ndarray   # x <= threshold goes left
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray      # per node class counts [n0, n1]

    def leaf_of(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=int)
        active = self.feature[node] >= 0
        while np.any(active):
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def to_json(self) -> dict:
        return {k: getattr(self, k).tolist()
                for k in ("feature", "threshold", "left", "right", "counts")}

    @classmethod
    def from_json(cls, d: dict) -> "DecisionTree":
        return cls(np.array(d["feature"], dtype=int), np.array(d["threshold"], dtype=float),
                   np.array(d["left"], dtype=int), np.array(d["right"], dtype=int),
                   np.array(d["counts"], dtype=int).reshape(-1, 2))


def _best_split(X: np.ndarray, y: np.ndarray, features: np.ndarray):
    """Lowest weighted Gini split over the candidate features.

    Ties resolve to the smaller feature index, then the smaller threshold.
    """
    n = y.size
    total1 = y.sum()
    best = None  # (impurity, feature, threshold)
    for f in np.sort(features):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        valid = np.flatnonzero(xs[1:] > xs[:-1])
        if valid.size == 0:
            continue
        left_n = valid + 1
        left1 = np.cumsum(ys)[valid]
        right_n = n - left_n
        right1 = total1 - left1
        left0 = left_n - left1
        right0 = right_n - right1
        # written in counts so swapping the class labels leaves it bit-identical
        gini = 2.0 * ((left1 * left0) / left_n + (right1 * right0) / right_n) / n
        i = int(np.argmin(gini))
        g = float(gini[i])
        thr = 0.5 * (xs[valid[i]] + xs[valid[i] + 1])
        if best is None or g < best[0] - 1e-15:
            best = (g, int(f), float(thr))
    return best


def grow_tree(X: np.ndarray, y: np.ndarray, max_features: int,
              rng: np.random.Generator) -> DecisionTree:
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        n1 = int(y[idx].sum())
        counts.append([idx.size - n1, n1])
        return len(feature) - 1

    d = X.shape[1]
    root = new_node(np.arange(y.size))
    stack = [(root, np.arange(y.size))]
    while stack:
        node, idx = stack.pop()
        c0, c1 = counts[node]
        if c0 == 0 or c1 == 0:
            continue
        cand = rng.choice(d, size=min(max_features, d), replace=False)
        split = _best_split(X[idx], y[idx], cand)
        if split is None:
            # no candidate separates; retry with every feature before giving up
            split = _best_split(X[idx], y[idx], np.arange(d))
            if split is None:
                continue
        _, f, thr = split
        mask = X[idx, f] <= thr
        feature[node], threshold[node] = f, thr
        l_node = new_node(idx[mask])
        r_node = new_node(idx[~mask])
        left[node], right[node] = l_node, r_node
        stack.append((r_node, idx[~mask]))
        stack.append((l_node, idx[mask]))
    return DecisionTree(np.array(feature), np.array(threshold), np.array(left),
                        np.array(right), np.array(counts, dtype=int).reshape(-1, 2))


@dataclass(frozen=True, eq=False)
class RandomForestModel:
    trees: tuple[DecisionTree, ...]
    max_features: int
    bootstrap: bool
    seed: int
    tie_label: int   # training majority label, then first training label

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def vote_fraction(self, X) -> np.ndarray:
        """Fraction of trees voting for the positive class."""
        Q = np.atleast_2d(np.asarray(X, dtype=float))
        votes = np.zeros(Q.shape[0])
        for t in self.trees:
            c = t.counts[t.leaf_of(Q)]
            vote = np.where(c[:, 1] > c[:, 0], 1.0,
                            np.where(c[:, 1] < c[:, 0], 0.0, float(self.tie_label)))
            votes += vote
        return votes / self.n_trees

    def predict(self, X) -> np.ndarray:
        frac = self.vote_fraction(X)
        return np.where(frac > 0.5, 1, np.where(frac < 0.5, 0, self.tie_label))

    def to_json(self) -> dict:
        return {"trees": [t.to_json() for t in self.trees],
                "max_features": self.max_features, "bootstrap": self.bootstrap,
                "seed": self.seed, "tie_label": self.tie_label}

    @classmethod
    def from_json(cls, d: dict) -> "RandomForestModel":
        return cls(tuple(DecisionTree.from_json(t) for t in d["trees"]),
                   int(d["max_features"]), bool(d["bootstrap"]), int(d["seed"]),
                   int(d["tie_label"]))


def rf_fit(X, y, n_trees: int = 100, seed: int = 0, bootstrap: bool = True,
           max_features: int | None = None) -> RandomForestModel:
    X, y = _check_xy(X, y)
    n, d = X.shape
    if n < 2 or len(np.unique(y)) < 2:
        raise ClassifierError("random forest needs at least 2 samples of both classes")
    mf = max_features or math.ceil(math.sqrt(d))
    n1 = int(y.sum())
    tie_label = 1 if n1 > n - n1 else 0 if n1 < n - n1 else int(y[0])
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(n_trees):
        idx = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        trees.append(grow_tree(X[idx], y[idx], mf, rng))
    return RandomForestModel(tuple(trees), mf, bootstrap, seed, tie_label)


def rf_predict(model: RandomForestModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Labels and the positive-class vote fraction."""
    frac = model.vote_fraction(X)
    labels = np.where(frac > 0.5, 1, np.where(frac < 0.5, 0, model.tie_label))
    return labels, frac


# --- multi-layer perceptron ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MlpModel:
    W1: np.ndarray   # d x hidden
    b1: np.ndarray
    W2: np.ndarray   # hidden
    b2: float
    learning_rate: float = 1e-2
    epochs: int = 500
    batch_size: int = 32
    seed: int = 0
    loss_trace: tuple[float, ...] = ()

    def predict_proba(self, X) -> np.ndarray:
        return _forward(self.params(), np.atleast_2d(np.asarray(X, dtype=float)))[0]

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) > 0.5).astype(int)

    def params(self) -> dict:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def to_json(self) -> dict:
        return {"W1": self.W1.tolist(), "b1": self.b1.tolist(), "W2": self.W2.tolist(),
                "b2": self.b2, "learning_rate": self.learning_rate,
                "epochs": self.epochs, "batch_size": self.batch_size, "seed": self.seed}

    @classmethod
    def from_json(cls, d: dict) -> "MlpModel":
        W1 = np.array(d["W1"], dtype=float)
        return cls(W1.reshape(-1, len(d["b1"])), np.array(d["b1"], dtype=float),
                   np.array(d["W2"], dtype=float), float(d["b2"]),
                   float(d["learning_rate"]), int(d["epochs"]), int(d["batch_size"]),
                   int(d["seed"]))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _forward(p: dict, X: np.ndarray):
    pre = X @ p["W1"] + p["b1"]
    hidden = np.maximum(pre, 0.0)
    logit = hidden @ p["W2"] + p["b2"]
    return _sigmoid(logit), hidden, pre, logit


def bce_loss(p: dict, X: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy, computed from logits for stability."""
    _, _, _, logit = _forward(p, X)
    return float(np.mean(np.logaddexp(0.0, logit) - y * logit))


def bce_gradient(p: dict, X: np.ndarray, y: np.ndarray) -> dict:
    prob, hidden, pre, _ = _forward(p, X)
    n = X.shape[0]
    g_logit = (prob - y) / n
    g_W2 = hidden.T @ g_logit
    g_b2 = float(g_logit.sum())
    g_hidden = np.outer(g_logit, p["W2"]) * (pre > 0)
    return {"W1": X.T @ g_hidden, "b1": g_hidden.sum(axis=0), "W2": g_W2, "b2": g_b2}


def mlp_init(d: int, hidden: int, rng: np.random.Generator) -> dict:
    lim1 = 1.0 / math.sqrt(d)
    lim2 = 1.0 / math.sqrt(hidden)
    return {"W1": rng.uniform(-lim1, lim1, size=(d, hidden)),
            "b1": rng.uniform(-lim1, lim1, size=hidden),
            "W2": rng.uniform(-lim2, lim2, size=hidden),
            "b2": float(rng.uniform(-lim2, lim2))}


def mlp_fit(X, y, epochs: int = 500, learning_rate: float = 1e-2, seed: int = 0,
            batch_size: int = 32, hidden: int = 10) -> MlpModel:
    """Mini-batch SGD on binary cross-entropy; one ReLU hidden layer."""
    X, y = _check_xy(X, y)
    n, d = X.shape
    rng = np.random.default_rng(seed)
    p = mlp_init(d, hidden, rng)
    yf = y.astype(float)
    trace = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            b = order[start:start + batch_size]
            g = bce_gradient(p, X[b], yf[b])
            for key in p:
                p[key] = p[key] - learning_rate * g[key]
        loss = bce_loss(p, X, yf)
        if not np.isfinite(loss):
            raise MlpDivergedError(
                f"loss became non-finite at epoch {epoch} "
                f"(lr={learning_rate}, batch={batch_size}, "
                f"max |W1|={np.max(np.abs(p['W1'])):.3g})")
        trace.append(loss)
    return MlpModel(p["W1"], p["b1"], p["W2"], float(p["b2"]), learning_rate, epochs,
                    batch_size, seed, tuple(trace))


def mlp_predict(model: MlpModel, X) -> tuple[np.ndarray, np.ndarray]:
    prob = model.predict_proba(X)
    return (prob > 0.5).astype(int), prob


# --- representations and evaluation ----------------------------------------------------

def raw_representation(spectra: Sequence[Spectrum1D]) -> np.ndarray:
    """400-point intensity, each spectrum divided by its own maximum |value|."""
    rows = []
    for s in spectra:
        x = downsample_spectrum(s).intensity
        peak = np.max(np.abs(x))
        rows.append(x / peak if peak > 0 else x)
    return np.array(rows)


def engineered_representation(spectra: Sequence[Spectrum1D]) -> np.ndarray:
    return np.array([xafs_features(downsample_spectrum(s)).values for s in spectra])


MODEL_NAMES = ("RF", "MLP", "k-Neighbors")


def fit_model(name: str, X, y, seed: int = 0):
    if name == "k-Neighbors":
        return knn_fit(X, y, 5)
    if name == "RF":
        return rf_fit(X, y, 100, seed)
    if name == "MLP":
        return mlp_fit(X, y, seed=seed)
    raise ClassifierError(f"unknown model {name!r}")


@dataclass
class EvalRow:
    model: str
    representation: str
    split: str
    f1: float
    accuracy: float
    confusion: ConfusionMatrix

    def as_dict(self) -> dict:
        return {"model": self.model, "representation": self.representation,
                "split": self.split, "f1": self.f1, "accuracy": self.accuracy,
                **self.confusion.as_dict()}


@dataclass
class EvalSuite:
    rows: list[EvalRow] = field(default_factory=list)

    def get(self, model: str, representation: str, split: str) -> EvalRow:
        for r in self.rows:
            if (r.model, r.representation, r.split) == (model, representation, split):
                return r
        raise KeyError((model, representation, split))

    def to_csv(self) -> str:
        """One line per model, representation and split."""
        buf = io.StringIO()
        w = csv.writer(buf)
        cols = [(rep, sp) for rep in ("raw", "engineered") for sp in ("uniform", "unique")]
        w.writerow(["model"] + [f"{rep}_{sp}_f1" for rep, sp in cols])
        for m in dict.fromkeys(r.model for r in self.rows):
            w.writerow([m] + [f"{self.get(m, rep, sp).f1:.3f}" for rep, sp in cols])
        return buf.getvalue()


def eval_suite(spectra: Sequence[Spectrum1D], holdout_group: Sequence[int],
               seed: int = 0, models: Sequence[str] = MODEL_NAMES,
               train_frac: float = 0.8, val_frac_of_rest: float = 0.1) -> EvalSuite:
    """Every model x {raw, engineered} x {uniform, unique} split."""
    labels = [s.label for s in spectra]
    if any(lab is None for lab in labels):
        first = next(i for i, lab in enumerate(labels) if lab is None)
        raise ClassifierError(f"spectrum {first} has no label")
    y = encode(labels)
    if len(np.unique(y)) < 2:
        raise ClassifierError("dataset must contain both Good and Bad spectra")
    reps = {"raw": raw_representation(spectra),
            "engineered": engineered_representation(spectra)}
    splits = {"uniform": split_uniform(len(spectra), train_frac, seed),
              "unique": split_unique(len(spectra), holdout_group, val_frac_of_rest, seed)}
    suite = EvalSuite()
    for name in models:
        for rep, X in reps.items():
            for split_name, split in splits.items():
                tr, va = list(split.train), list(split.validation)
                Xtr, Xva = X[tr], X[va]
                if rep == "engineered":
                    norm = fit_normalizer(Xtr)
                    Xtr, Xva = apply_normalizer(norm, Xtr), apply_normalizer(norm, Xva)
                model = fit_model(name, Xtr, y[tr], seed)
                pred = np.asarray(model.predict(Xva))
                cm = confusion(pred.tolist(), y[va].tolist(), 1)
                suite.rows.append(EvalRow(name, rep, split_name, f1(cm), accuracy(cm), cm))
    return suite


# --- deployable classifier ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectrumClassifier:
    """A fitted model plus the representation it expects."""
    model_name: str
    representation: str
    model: object
    normalizer: FeatureNormalizer | None = None

    def vectorize(self, spectra: Sequence[Spectrum1D]) -> np.ndarray:
        if self.representation == "raw":
            return raw_representation(spectra)
        X = engineered_representation(spectra)
        return apply_normalizer(self.normalizer, X) if self.normalizer else X

    def predict_vectors(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Labels (1 = Bad) and probability of the predicted label."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if isinstance(self.model, RandomForestModel):
            labels, frac = rf_predict(self.model, X)
            p_bad = frac
        elif isinstance(self.model, MlpModel):
            labels, p_bad = mlp_predict(self.model, X)
        else:
            labels = knn_predict(self.model, X)
            dist = cdist(X, self.model.X)
            nbrs = np.argsort(dist, axis=1, kind="stable")[:, :self.model.k]
            p_bad = self.model.y[nbrs].mean(axis=1)
        conf = np.where(labels == 1, p_bad, 1.0 - p_bad)
        return labels, conf

    def classify(self, spectrum: Spectrum1D) -> tuple[Quality, float]:
        labels, conf = self.predict_vectors(self.vectorize([spectrum]))
        return decode(labels)[0], float(conf[0])

    def to_json(self) -> dict:
        return {"model_name": self.model_name, "representation": self.representation,
                "model": self.model.to_json(),
                "normalizer": self.normalizer.to_json() if self.normalizer else None}

    @classmethod
    def from_json(cls, d: dict) -> "SpectrumClassifier":
        types = {"k-Neighbors": KnnModel, "RF": RandomForestModel, "MLP": MlpModel}
        if d["model_name"] not in types:
            raise ClassifierError(f"unknown model {d['model_name']!r}")
        norm = FeatureNormalizer.from_json(d["normalizer"]) if d.get("normalizer") else None
        return cls(d["model_name"], d["representation"],
                   types[d["model_name"]].from_json(d["model"]), norm)


def train_classifier(spectra: Sequence[Spectrum1D], model_name: str = "k-Neighbors",
                     representation: str = "engineered", seed: int = 0) -> SpectrumClassifier:
    y = encode([s.label for s in spectra])
    if representation == "raw":
        X = raw_representation(spectra)
        norm = None
    elif representation == "engineered":
        X = engineered_representation(spectra)
        norm = fit_normalizer(X)
        X = apply_normalizer(norm, X)
    else:
        raise ClassifierError(f"unknown representation {representation!r}")
    model = fit_model(model_name, X, y, seed)
    return SpectrumClassifier(model_name, representation, model, norm)
