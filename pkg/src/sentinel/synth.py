"""Seeded synthetic stand-ins for beamline data, with ground truth.

Three generators:

* ``gen_ramp`` -- diffraction-like patterns over a temperature ramp built
  from Gaussian-peak phases mixed with a schedule that switches abruptly at
  a transition temperature.
* ``gen_xpcs`` -- six-channel time-series bundles, stationary when normal,
  with planted jumps, drifts or oscillations when anomalous.
* ``gen_xafs`` -- absorption-like spectra: good ones carry a sigmoid edge
  followed by damped oscillations; bad ones have no edge.

Every generator returns its ground truth next to the data.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from .core import CHANNELS, Quality, Spectrum1D, Status, TimeSeriesBundle


class SpecError(ValueError):
    pass


# --- temperature ramp ----------------------------------------------------------

@dataclass(frozen=True)
class Peak:
    center: float
    width: float
    height: float


def _default_phases() -> tuple[tuple[Peak, ...], ...]:
    low = (Peak(3.0, 0.08, 1.0), Peak(5.2, 0.10, 0.6), Peak(7.4, 0.12, 0.4))
    high = (Peak(3.6, 0.08, 1.0), Peak(4.4, 0.10, 0.7), Peak(8.1, 0.12, 0.35))
    amorphous = (Peak(5.8, 0.9, 0.25),)
    return low, high, amorphous


@dataclass(frozen=True)
class RampSpec:
    temperatures: Sequence[float] = tuple(np.linspace(27.0, 690.0, 50))
    grid: Sequence[float] = tuple(np.linspace(1.0, 10.0, 300))
    phases: tuple[tuple[Peak, ...], ...] = field(default_factory=_default_phases)
    t_c: float = 400.0
    noise: float = 0.01
    minor_weight: float = 0.3

    def __post_init__(self):
        temps = np.asarray(self.temperatures, dtype=float)
        if len(self.phases) < 2:
            raise SpecError("a ramp needs at least 2 phases")
        if not temps.min() < self.t_c < temps.max():
            raise SpecError(f"transition {self.t_c} outside the temperature grid")
        if np.any(np.diff(temps) <= 0):
            raise SpecError("temperatures must increase")
        if self.noise < 0 or self.minor_weight < 0:
            raise SpecError("noise and minor_weight must be non-negative")

    def weights(self) -> np.ndarray:
        """Ground-truth mixing weights, temperatures x phases."""
        temps = np.asarray(self.temperatures, dtype=float)
        below = temps < self.t_c
        w = np.zeros((temps.size, len(self.phases)))
        w[:, 0] = np.where(below, 1.0, 0.0)
        w[:, 1] = np.where(below, 0.0, 1.0)
        frac = (temps - temps[0]) / (temps[-1] - temps[0])
        for j in range(2, len(self.phases)):
            w[:, j] = self.minor_weight * frac
        return w

    def phase_patterns(self) -> np.ndarray:
        x = np.asarray(self.grid, dtype=float)
        out = np.zeros((len(self.phases), x.size))
        for j, peaks in enumerate(self.phases):
            for pk in peaks:
                out[j] += pk.height * np.exp(-0.5 * ((x - pk.center) / pk.width) ** 2)
        return out


def gen_ramp(spec: RampSpec = RampSpec(), seed: int = 0):
    """Patterns along the ramp and their true phase weights."""
    rng = np.random.default_rng(seed)
    w = spec.weights()
    clean = w @ spec.phase_patterns()
    sigma = spec.noise * clean.max()
    noisy = np.clip(clean + sigma * rng.standard_normal(clean.shape), 0.0, None)
    grid = np.asarray(spec.grid, dtype=float)
    spectra = [
        Spectrum1D(grid, row, {"temperature_C": float(t)})
        for t, row in zip(spec.temperatures, noisy)
    ]
    return spectra, w


def transition_index(spec: RampSpec) -> int:
    """Index of the first temperature at or above the transition."""
    return int(np.searchsorted(np.asarray(spec.temperatures), spec.t_c))


# --- XPCS-like time series ----------------------------------------------------

ANOMALY_KINDS = ("none", "jump", "drift", "oscillation")

# baseline level and relative noise per channel; position channels use
# absolute pixel noise
_BASELINES = {
    "total_intensity": (2.0e4, 0.01),
    "intensity_std": (6.0e2, 0.01),
    "com_x": (512.0, 0.3),
    "com_y": (480.0, 0.3),
    "com_x_std": (18.0, 0.01),
    "com_y_std": (18.0, 0.01),
}
_POSITION = {"com_x", "com_y"}


@dataclass(frozen=True)
class XpcsSpec:
    length_range: tuple[int, int] = (30, 3000)
    anomaly: str = "none"
    magnitude: float = 0.0
    channels: tuple[str, ...] = ("total_intensity",)

    def __post_init__(self):
        lo, hi = self.length_range
        if not 10 <= lo <= hi:
            raise SpecError(f"bad length range {self.length_range}")
        if self.anomaly not in ANOMALY_KINDS:
            raise SpecError(f"unknown anomaly kind {self.anomaly!r}")
        if self.anomaly != "none" and not self.magnitude > 0:
            raise SpecError("anomalous series need a positive magnitude")
        bad = set(self.channels) - set(CHANNELS)
        if bad:
            raise SpecError(f"unknown channels {sorted(bad)}")


def gen_xpcs(spec: XpcsSpec = XpcsSpec(), seed: int = 0, id: str = ""):
    """One bundle plus truth {kind, onset, length}."""
    rng = np.random.default_rng(seed)
    lo, hi = spec.length_range
    length = int(round(np.exp(rng.uniform(np.log(lo), np.log(hi)))))
    t = np.arange(length)
    channels: dict[str, np.ndarray] = {}
    sigmas: dict[str, float] = {}
    level_jitter = np.exp(rng.normal(0.0, 0.3))
    for name in CHANNELS:
        base, rel = _BASELINES[name]
        if name in _POSITION:
            level = base + rng.normal(0.0, 20.0)
            sigma = rel
        else:
            level = base * level_jitter if name == "total_intensity" else base
            sigma = rel * level
        # mild AR(1) correlation, rescaled to unit marginal variance
        e = rng.standard_normal(length)
        phi = 0.3
        x = lfilter([np.sqrt(1 - phi * phi)], [1.0, -phi], e,
                    zi=[phi * e[0]])[0]
        channels[name] = level + sigma * x
        sigmas[name] = sigma

    onset = None
    if spec.anomaly != "none":
        onset = int(rng.integers(max(1, length // 5), max(2, 4 * length // 5)))
        period = length / rng.uniform(2.0, 6.0)
        phase = rng.uniform(0, 2 * np.pi)
        for name in spec.channels:
            amp = spec.magnitude * sigmas[name]
            if spec.anomaly == "jump":
                delta = np.where(t >= onset, amp, 0.0)
            elif spec.anomaly == "drift":
                delta = amp * t / max(length - 1, 1)
            else:
                delta = amp * np.sin(2 * np.pi * t / period + phase)
            sign = rng.choice([-1.0, 1.0])
            channels[name] = channels[name] + sign * delta
    label = Status.NORMAL if spec.anomaly == "none" else Status.ANOMALOUS
    bundle = TimeSeriesBundle(channels, label, id)
    return bundle, {"kind": spec.anomaly, "onset": onset, "length": length}


@dataclass
class Benchmark:
    items: list
    truths: list[dict]
    holdout: list[int] = field(default_factory=list)

    @property
    def labels(self):
        return [it.label for it in self.items]


def xpcs_benchmark(seed: int = 2021, n_normal: int = 400, n_per_kind: int = 20,
                   magnitude: tuple[float, float] = (6.0, 12.0)) -> Benchmark:
    """Canonical anomaly benchmark: 400 normal + 20 each jump/drift/oscillation."""
    rng = np.random.default_rng(seed)
    specs = [XpcsSpec()] * n_normal
    for kind in ("jump", "drift", "oscillation"):
        for _ in range(n_per_kind):
            n_ch = int(rng.integers(1, 3))
            chans = tuple(rng.choice(CHANNELS, size=n_ch, replace=False).tolist())
            specs.append(XpcsSpec(anomaly=kind, magnitude=float(rng.uniform(*magnitude)),
                                  channels=chans))
    order = rng.permutation(len(specs))
    seeds = rng.integers(0, 2**31, size=len(specs))
    items, truths = [], []
    for i, j in enumerate(order):
        bundle, truth = gen_xpcs(specs[j], int(seeds[i]), id=f"xpcs-{i:04d}")
        truth["channels"] = list(specs[j].channels) if specs[j].anomaly != "none" else []
        truth["magnitude"] = specs[j].magnitude
        items.append(bundle)
        truths.append(truth)
    return Benchmark(items, truths)


# --- XAFS-like spectra --------------------------------------------------------

BAD_KINDS = ("white-noise", "flat", "drifting-background")


@dataclass(frozen=True)
class XafsSpec:
    quality: Quality = Quality.GOOD
    edge_position: float = 0.3
    edge_sharpness: float = 0.01     # sigmoid width as a fraction of the range
    osc_amplitude: float = 0.08
    osc_decay: float = 3.0           # per unit fraction of range
    osc_frequency: float = 40.0      # radians per unit fraction
    noise: float = 0.01
    bad_kind: str = "white-noise"
    n_points: int = 400
    energy_range: tuple[float, float] = (8800.0, 9800.0)

    def __post_init__(self):
        object.__setattr__(self, "quality", Quality(self.quality))
        if not 0.1 < self.edge_position < 0.9:
            raise SpecError(f"edge position {self.edge_position} outside (0.1, 0.9)")
        if self.bad_kind not in BAD_KINDS:
            raise SpecError(f"unknown bad kind {self.bad_kind!r}")
        if self.n_points < 10 or self.noise < 0 or self.edge_sharpness <= 0:
            raise SpecError("invalid spectrum spec")


def gen_xafs(spec: XafsSpec = XafsSpec(), seed: int = 0):
    """One spectrum plus truth {quality, edge_position, bad_kind}."""
    rng = np.random.default_rng(seed)
    u = np.linspace(0.0, 1.0, spec.n_points)
    grid = np.linspace(*spec.energy_range, spec.n_points)
    scale = np.exp(rng.normal(0.0, 0.4))
    offset = rng.uniform(-0.2, 0.2)
    noise = spec.noise * rng.standard_normal(u.size)
    if spec.quality is Quality.GOOD:
        x = (u - spec.edge_position) / spec.edge_sharpness
        edge = 0.5 * (1.0 + np.tanh(0.5 * x))
        past = np.clip(u - spec.edge_position, 0.0, None)
        osc = (spec.osc_amplitude * np.exp(-spec.osc_decay * past)
               * np.sin(spec.osc_frequency * past) * edge)
        pre = rng.uniform(-0.1, 0.1) * u
        mu = offset + pre + edge + osc + noise
        truth = {"quality": "Good", "edge_position": spec.edge_position, "bad_kind": None}
    else:
        if spec.bad_kind == "white-noise":
            mu = offset + rng.uniform(0.05, 0.5) * rng.standard_normal(u.size)
        elif spec.bad_kind == "flat":
            mu = offset + rng.uniform(-0.05, 0.05) * u + noise
        else:
            c = rng.uniform(-0.8, 0.8, size=3)
            mu = offset + c[0] * u + c[1] * u**2 + c[2] * u**3 + 3 * noise
        truth = {"quality": "Bad", "edge_position": None, "bad_kind": spec.bad_kind}
    meta = {"edge_position": spec.edge_position} if spec.quality is Quality.GOOD else {}
    return Spectrum1D(grid, scale * mu, meta, spec.quality), truth


def xafs_benchmark(seed: int = 2021, n_good: int = 500, n_bad: int = 211,
                   n_holdout: int = 101,
                   train_edges: tuple[float, float] = (0.15, 0.45),
                   holdout_edges: tuple[float, float] = (0.55, 0.85)) -> Benchmark:
    """Canonical classification benchmark (711 spectra by default).

    The last ``n_holdout`` good spectra put their edge in a position range
    disjoint from the others and are reported as the holdout group.
    """
    if n_holdout > n_good:
        raise SpecError("holdout group larger than the good class")
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(n_good):
        edges = holdout_edges if i >= n_good - n_holdout else train_edges
        specs.append(XafsSpec(
            Quality.GOOD,
            edge_position=float(rng.uniform(*edges)),
            edge_sharpness=float(rng.uniform(0.004, 0.02)),
            osc_amplitude=float(rng.uniform(0.03, 0.12)),
            osc_decay=float(rng.uniform(1.0, 5.0)),
            osc_frequency=float(rng.uniform(25.0, 60.0)),
            noise=float(rng.uniform(0.002, 0.02)),
        ))
    for i in range(n_bad):
        specs.append(XafsSpec(Quality.BAD, bad_kind=BAD_KINDS[i % len(BAD_KINDS)],
                              noise=float(rng.uniform(0.005, 0.05))))
    holdout_set = set(range(n_good - n_holdout, n_good))
    order = rng.permutation(len(specs))
    seeds = rng.integers(0, 2**31, size=len(specs))
    items, truths, holdout = [], [], []
    for i, j in enumerate(order):
        s, truth = gen_xafs(specs[j], int(seeds[i]))
        items.append(s)
        truths.append(truth)
        if j in holdout_set:
            holdout.append(i)
    return Benchmark(items, truths, holdout)
