"""Non-negative matrix factorization of a growing stack of spectra.

V (m spectra x n points) is approximated by W (m x p weights) times
H (p x n components) with Lee-Seung multiplicative updates, which keep
both factors non-negative and never increase ||V - WH||_F.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Spectrum1D
from .linalg import frobenius_norm

EPS = 1e-12


class NmfError(ValueError):
    pass


class GridMismatchError(NmfError):
    pass


@dataclass(frozen=True)
class NmfConfig:
    p: int
    max_iter: int = 500
    tol: float = 1e-6
    seed: int = 0
    window: tuple[int, int] | None = None
    meta_key: str = "temperature_C"

    def __post_init__(self):
        if self.p < 1:
            raise NmfError(f"component count must be >= 1, got {self.p}")
        if self.window is not None:
            lo, hi = (int(x) for x in self.window)
            if not 0 <= lo < hi:
                raise NmfError(f"empty or invalid window [{lo}, {hi})")
            object.__setattr__(self, "window", (lo, hi))


def nmf_window(config: NmfConfig, lo: int, hi: int, n: int | None = None) -> NmfConfig:
    """Restrict fitting to columns [lo, hi)."""
    if lo >= hi:
        raise NmfError(f"empty window [{lo}, {hi})")
    if lo < 0 or (n is not None and hi > n):
        raise NmfError(f"window [{lo}, {hi}) outside [0, {n}]")
    return replace(config, window=(lo, hi))


@dataclass(frozen=True, eq=False)
class NmfModel:
    W: np.ndarray
    H: np.ndarray
    V: np.ndarray               # windowed data the factors were fitted to
    config: NmfConfig
    objective_trace: tuple[float, ...] = ()
    meta_values: tuple[float | None, ...] = ()
    n_full: int | None = None   # grid length before windowing

    @property
    def p(self) -> int:
        return self.config.p

    @property
    def m(self) -> int:
        return self.V.shape[0]

    @property
    def n(self) -> int:
        return self.V.shape[1]

    @property
    def window(self):
        return self.config.window

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def objective(self) -> float:
        return objective(self.V, self.W, self.H)


def objective(V, W, H) -> float:
    return frobenius_norm(V - W @ H)


def _apply_window(V: np.ndarray, window) -> np.ndarray:
    if window is None:
        return V
    lo, hi = window
    if hi > V.shape[1]:
        raise NmfError(f"window [{lo}, {hi}) exceeds {V.shape[1]} columns")
    return V[:, lo:hi]


def _init_factors(V: np.ndarray, p: int, rng: np.random.Generator):
    m, n = V.shape
    scale = np.sqrt(V.mean() / p) if V.size else 0.0
    # 1 - U[0,1) lies in (0, 1], giving entries in (0, scale]
    W = scale * (1.0 - rng.random((m, p)))
    H = scale * (1.0 - rng.random((p, n)))
    return W, H


def _update(V, W, H):
    H = H * (W.T @ V) / np.maximum(W.T @ W @ H, EPS)
    W = W * (V @ H.T) / np.maximum(W @ (H @ H.T), EPS)
    return W, H


def _iterate(V, W, H, max_iter, tol, trace):
    trace.append(objective(V, W, H))
    for _ in range(max_iter):
        prev = trace[-1]
        if prev == 0.0:
            break
        W_new, H_new = _update(V, W, H)
        cur = objective(V, W_new, H_new)
        if cur > prev:
            # exact updates never ascend; this is roundoff at the optimum
            break
        W, H = W_new, H_new
        trace.append(cur)
        if (prev - cur) / prev < tol:
            break
    return W, H


def _check_nonneg(V: np.ndarray):
    if not np.all(np.isfinite(V)):
        raise NmfError("data contains non-finite values")
    if np.any(V < 0):
        raise NmfError("NMF requires non-negative data; found negative entries")


def nmf_fit(V, p: int, max_iter: int = 500, tol: float = 1e-6, seed: int = 0,
            window: tuple[int, int] | None = None, meta_values=None,
            meta_key: str = "temperature_C", restarts: int = 1) -> NmfModel:
    V = np.array(V, dtype=float, ndmin=2)
    _check_nonneg(V)
    config = NmfConfig(p=p, max_iter=max_iter, tol=tol, seed=seed, window=window,
                       meta_key=meta_key)
    return fit_config(V, config, meta_values, restarts)


def fit_config(V, config: NmfConfig, meta_values=None, restarts: int = 1) -> NmfModel:
    """Fit from ``restarts`` seeded random starts and keep the lowest objective.

    Successive starts draw from one generator, so ``restarts=1`` is the plain
    seeded fit.
    """
    V = np.array(V, dtype=float, ndmin=2)
    _check_nonneg(V)
    n_full = V.shape[1]
    Vw = _apply_window(V, config.window)
    m, n = Vw.shape
    if not 1 <= config.p <= min(m, n):
        raise NmfError(f"p={config.p} outside [1, min(m, n)={min(m, n)}]")
    if restarts < 1:
        raise NmfError(f"restarts must be >= 1, got {restarts}")
    rng = np.random.default_rng(config.seed)
    best = None
    for _ in range(restarts):
        W, H = _init_factors(Vw, config.p, rng)
        trace: list[float] = []
        W, H = _iterate(Vw, W, H, config.max_iter, config.tol, trace)
        if best is None or trace[-1] < best[2][-1]:
            best = (W, H, trace)
    W, H, trace = best
    if meta_values is None:
        meta_values = (None,) * m
    return NmfModel(W, H, Vw, config, tuple(trace), tuple(meta_values), n_full)


def nmf_update_step(model: NmfModel, V=None) -> NmfModel:
    """One multiplicative sweep (H then W)."""
    V = model.V if V is None else _apply_window(np.array(V, dtype=float, ndmin=2),
                                                model.window)
    if V.shape != (model.W.shape[0], model.H.shape[1]):
        raise NmfError(f"data shape {V.shape} inconsistent with factors")
    W, H = _update(V, model.W, model.H)
    trace = model.objective_trace + (objective(V, W, H),)
    return replace(model, W=W, H=H, V=V, objective_trace=trace)


def empty_model(config: NmfConfig, n_full: int) -> NmfModel:
    n = n_full
    if config.window is not None:
        lo, hi = config.window
        if hi > n_full:
            raise NmfError(f"window [{lo}, {hi}) exceeds grid of {n_full} points")
        n = hi - lo
    return NmfModel(np.zeros((0, config.p)), np.zeros((config.p, n)),
                    np.zeros((0, n)), config, (), (), n_full)


def nmf_tell(model: NmfModel, spectrum: Spectrum1D) -> NmfModel:
    """Append one spectrum and refit, warm-starting from the current factors."""
    row = np.asarray(spectrum.intensity, dtype=float)
    if model.n_full is not None and row.size != model.n_full:
        raise GridMismatchError(
            f"spectrum has {row.size} points but the model grid has {model.n_full}; "
            "resample the spectrum onto the model grid first")
    _check_nonneg(row[None, :])
    cfg = model.config
    win = _apply_window(row[None, :], cfg.window)[0]
    V = np.vstack([model.V, win])
    meta = model.meta_values + (spectrum.meta.get(cfg.meta_key),)
    m, n = V.shape
    trace: list[float] = []
    if model.m == 0 or m < cfg.p:
        # nothing to warm-start from yet
        rng = np.random.default_rng(cfg.seed)
        W, H = _init_factors(V, cfg.p, rng)
    else:
        W = np.vstack([model.W, model.W.mean(axis=0, keepdims=True)])
        H = model.H
        if not np.any(W[-1] > 0):
            W[-1] = np.sqrt(max(win.mean(), EPS) / cfg.p)
    W, H = _iterate(V, W, H, cfg.max_iter, cfg.tol, trace)
    return NmfModel(W, H, V, cfg, tuple(trace), meta, model.n_full or row.size)


def nmf_transform(model: NmfModel, row, n_iter: int = 500) -> np.ndarray:
    """Non-negative weights of a new spectrum against the fixed components."""
    x = _apply_window(np.array(row, dtype=float, ndmin=2), model.window)
    _check_nonneg(x)
    H = model.H
    w = np.full((x.shape[0], H.shape[0]), max(np.sqrt(x.mean() / H.shape[0]), EPS))
    HHt = H @ H.T
    for _ in range(n_iter):
        w = w * (x @ H.T) / np.maximum(w @ HHt, EPS)
    return w


@dataclass(frozen=True, eq=False)
class NmfReport:
    components: np.ndarray     # p x n
    weights: np.ndarray        # m x p, ordered by meta value when available
    meta_values: list          # matching weights rows
    rel_errors: np.ndarray     # per pattern
    residuals: np.ndarray      # m x n, V - WH
    window: tuple[int, int] | None
    order: np.ndarray = field(default=None)  # row permutation applied

    def to_json(self) -> dict:
        return {
            "components": self.components.tolist(),
            "weights": self.weights.tolist(),
            "meta_values": list(self.meta_values),
            "rel_errors": self.rel_errors.tolist(),
            "residuals": self.residuals.tolist(),
            "window": list(self.window) if self.window is not None else None,
        }


def nmf_report(model: NmfModel, V=None) -> NmfReport:
    if model.m == 0:
        raise NmfError("model has not been fitted to any data")
    V = model.V if V is None else _apply_window(np.array(V, dtype=float, ndmin=2),
                                                model.window)
    recon = model.W @ model.H
    residuals = V - recon
    norms = np.linalg.norm(V, axis=1)
    res_norms = np.linalg.norm(residuals, axis=1)
    rel = np.divide(res_norms, norms, out=np.zeros_like(res_norms), where=norms > 0)
    meta = list(model.meta_values)
    if meta and all(v is not None for v in meta):
        order = np.argsort(np.asarray(meta, dtype=float), kind="stable")
    else:
        order = np.arange(model.m)
    return NmfReport(
        components=model.H.copy(),
        weights=model.W[order].copy(),
        meta_values=[meta[i] if i < len(meta) else None for i in order],
        rel_errors=rel[order],
        residuals=residuals[order],
        window=model.window,
        order=order,
    )


def dominant_switches(weights: np.ndarray, components: np.ndarray) -> np.ndarray:
    """Row indices where the dominant end-member changes.

    Weights are rescaled by each component's peak height so that
    dominance compares contributions to the pattern, not raw coefficients.
    """
    scaled = weights * components.max(axis=1)
    dom = np.argmax(scaled, axis=1)
    return np.flatnonzero(dom[1:] != dom[:-1]) + 1


class NmfSession:
    """Single-writer wrapper around an evolving model; readers get snapshots."""

    def __init__(self, config: NmfConfig):
        self.config = config
        self._model: NmfModel | None = None
        self._lock = threading.Lock()

    def tell(self, spectrum: Spectrum1D) -> NmfModel:
        with self._lock:
            model = self._model or empty_model(self.config, len(spectrum))
            self._model = nmf_tell(model, spectrum)
            return self._model

    @property
    def model(self) -> NmfModel | None:
        return self._model

    def report(self) -> NmfReport:
        model = self._model
        if model is None:
            raise NmfError("no spectra told yet")
        return nmf_report(model)
