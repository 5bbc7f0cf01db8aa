"""Tell-report-ask agents wrapping the three pipelines.

``tell`` feeds one measurement, ``report`` returns a snapshot of what the
agent currently believes, and ``ask`` returns what the experiment should do
next.  Writers are serialized with a lock; report and ask only read
immutable snapshots, so they are safe from any thread.
"""
from __future__ import annotations

import enum
import itertools
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any

import numpy as np

from .core import Quality, Spectrum1D, Status, TimeSeriesBundle
from .features import xpcs_features
from .nmf import NmfConfig, NmfModel, empty_model, nmf_report, nmf_tell

REPORT_SCHEMA_VERSION = "report/v1"

# glyph codes published with reports; rendering is left to the sink
GLYPHS = {
    "good": "white_check_mark",
    "bad": "x",
    "normal": "large_green_circle",
    "anomalous": "rotating_light",
    "monitoring": "bar_chart",
    "warning": "warning",
}


class AgentError(RuntimeError):
    pass


class NoDataError(AgentError):
    pass


class Action(str, enum.Enum):
    CONTINUE = "Continue"
    PAUSE = "Pause"
    ALERT = "Alert"


@dataclass(frozen=True)
class Directive:
    action: Action
    reason: str = ""

    def __post_init__(self):
        object.__setattr__(self, "action", Action(self.action))
        if self.action is not Action.CONTINUE and not self.reason:
            raise ValueError(f"{self.action.value} directive needs a reason")

    def to_json(self) -> dict:
        return {"action": self.action.value, "reason": self.reason}


@dataclass(frozen=True)
class Report:
    agent_id: str
    kind: str
    payload: dict
    status: str
    sequence_number: int
    timestamp: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat())
    schema_version: str = REPORT_SCHEMA_VERSION

    def to_json(self) -> dict:
        return {"schema_version": self.schema_version, "agent_id": self.agent_id,
                "kind": self.kind, "status": self.status,
                "sequence_number": self.sequence_number, "timestamp": self.timestamp,
                "payload": self.payload}

    def summary(self) -> str:
        p = self.payload
        if self.kind == "anomaly":
            return (f"{p.get('id') or 'measurement'}: {p['label']} "
                    f"(score {p['score']:.3g}, threshold {p['threshold']:.3g})")
        if self.kind == "classification":
            return f"spectrum {p['label']} (confidence {p['confidence']:.2f})"
        return f"NMF on {len(p['weights'])} patterns, {len(p['components'])} components"


_ids = itertools.count(1)


class Agent:
    kind = "base"
    datum_type: type = object

    def __init__(self, agent_id: str | None = None):
        self.agent_id = agent_id or f"{self.kind}-{next(_ids)}"
        self._lock = threading.Lock()
        self._seq = 0
        self.n_told = 0
        self._state: Any = None   # immutable snapshot, replaced on every tell

    def tell(self, datum, label=None) -> int:
        """Feed one measurement; returns the number of measurements seen."""
        if not isinstance(datum, self.datum_type):
            raise TypeError(
                f"{type(self).__name__} expects {self.datum_type.__name__}, "
                f"got {type(datum).__name__}")
        with self._lock:
            self._state = self._update(self._state, datum, label)
            self.n_told += 1
            return self.n_told

    def report(self) -> Report:
        state = self._state
        if state is None:
            raise NoDataError(f"agent {self.agent_id} has not been told anything")
        payload, status = self._payload(state)
        with self._lock:
            self._seq += 1
            seq = self._seq
        return Report(self.agent_id, self.kind, payload, status, seq)

    def ask(self) -> Directive:
        state = self._state
        if state is None:
            return Directive(Action.CONTINUE)
        return self._decide(state)

    # subclasses
    def _update(self, state, datum, label):
        raise NotImplementedError

    def _payload(self, state) -> tuple[dict, str]:
        raise NotImplementedError

    def _decide(self, state) -> Directive:
        return Directive(Action.CONTINUE)


class NmfAgent(Agent):
    """Refits the decomposition on every new pattern; never asks to stop."""
    kind = "nmf"
    datum_type = Spectrum1D

    def __init__(self, config: NmfConfig, agent_id: str | None = None):
        super().__init__(agent_id)
        self.config = config

    @property
    def model(self) -> NmfModel | None:
        return self._state

    def _update(self, state, datum, label):
        model = state if state is not None else empty_model(self.config, len(datum))
        return nmf_tell(model, datum)

    def _payload(self, state):
        payload = nmf_report(state).to_json()
        payload["glyph"] = GLYPHS["monitoring"]
        return payload, "ok"


@dataclass(frozen=True)
class _AnomalyState:
    id: str
    score: float
    label: Status
    flags: tuple[str, ...]
    streak: tuple[str, ...]   # ids of the current run of consecutive alarms


class AnomalyAgent(Agent):
    """Scores each bundle with a pre-trained pipeline.

    Any alarm asks for an Alert; ``pause_after`` consecutive alarms ask for a
    Pause.
    """
    kind = "anomaly"
    datum_type = TimeSeriesBundle

    def __init__(self, pipeline, pause_after: int = 3, agent_id: str | None = None):
        super().__init__(agent_id)
        if pause_after < 1:
            raise ValueError("pause_after must be >= 1")
        self.pipeline = pipeline
        self.pause_after = pause_after

    def _update(self, state, datum, label):
        fv = xpcs_features(datum)
        score = float(self.pipeline.score_features(fv.values)[0])
        status = Status.ANOMALOUS if score > self.pipeline.threshold else Status.NORMAL
        prev = state.streak if state is not None else ()
        streak = prev + (datum.id,) if status is Status.ANOMALOUS else ()
        return _AnomalyState(datum.id, score, status, tuple(sorted(fv.flags)), streak)

    def _payload(self, state):
        alarm = state.label is Status.ANOMALOUS
        return ({"id": state.id, "score": state.score,
                 "threshold": float(self.pipeline.threshold),
                 "label": state.label.value, "feature_flags": list(state.flags),
                 "glyph": GLYPHS["anomalous" if alarm else "normal"]},
                "alarm" if alarm else "ok")

    def _decide(self, state):
        if len(state.streak) >= self.pause_after:
            return Directive(Action.PAUSE,
                             f"{len(state.streak)} consecutive anomalous measurements: "
                             + ", ".join(state.streak))
        if state.label is Status.ANOMALOUS:
            return Directive(Action.ALERT, f"anomalous measurement {state.id} "
                                           f"(score {state.score:.3g})")
        return Directive(Action.CONTINUE)


@dataclass(frozen=True)
class _ClassState:
    label: Quality
    confidence: float
    meta: dict


class ClassifierAgent(Agent):
    """Labels each spectrum Good/Bad with a pre-trained classifier."""
    kind = "classification"
    datum_type = Spectrum1D

    def __init__(self, classifier, agent_id: str | None = None):
        super().__init__(agent_id)
        self.classifier = classifier

    def _update(self, state, datum, label):
        quality, conf = self.classifier.classify(datum)
        return _ClassState(quality, conf, dict(datum.meta))

    def _payload(self, state):
        bad = state.label is Quality.BAD
        return ({"label": state.label.value, "confidence": state.confidence,
                 "emoji_code": GLYPHS["bad" if bad else "good"],
                 "glyph": GLYPHS["bad" if bad else "good"]},
                "alarm" if bad else "ok")

    def _decide(self, state):
        if state.label is Quality.BAD:
            return Directive(Action.ALERT,
                             f"bad spectrum (confidence {state.confidence:.2f})")
        return Directive(Action.CONTINUE)


def make_agent(kind: str, body, **kwargs) -> Agent:
    """Build an agent around a loaded pipeline body."""
    if kind == "nmf":
        return NmfAgent(body, **kwargs)
    if kind == "anomaly":
        return AnomalyAgent(body, **kwargs)
    if kind == "classification":
        return ClassifierAgent(body, **kwargs)
    raise AgentError(f"unknown agent kind {kind!r}")


def json_safe(obj):
    """Convert numpy scalars/arrays inside a payload to plain Python."""
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
