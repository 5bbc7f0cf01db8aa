"""Checksummed JSON model artifacts for offline train-then-deploy use."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from ..anomaly import AnomalyPipeline
from ..classify import SpectrumClassifier
from ..features import XAFS_SCHEMA_VERSION, XPCS_SCHEMA_VERSION
from ..nmf import NmfConfig, NmfModel

ARTIFACT_SCHEMA_VERSION = 1
KINDS = ("nmf", "anomaly", "classification")
_FEATURE_SCHEMAS = {"nmf": "raw-pattern", "anomaly": XPCS_SCHEMA_VERSION,
                    "classification": XAFS_SCHEMA_VERSION}


class ArtifactError(ValueError):
    pass


class ArtifactIntegrityError(ArtifactError):
    pass


class ArtifactVersionError(ArtifactError):
    """The artifact was written by an incompatible schema version and needs migration."""


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False,
                      ensure_ascii=True)


def _checksum(envelope: dict) -> str:
    content = {k: v for k, v in envelope.items() if k != "checksum_sha256"}
    return hashlib.sha256(canonical_json(content).encode("ascii")).hexdigest()


# --- model bodies -----------------------------------------------------------------------

def nmf_to_json(model: NmfModel) -> dict:
    cfg = model.config
    return {
        "config": {"p": cfg.p, "max_iter": cfg.max_iter, "tol": cfg.tol, "seed": cfg.seed,
                   "window": list(cfg.window) if cfg.window else None,
                   "meta_key": cfg.meta_key},
        "W": model.W.tolist(), "H": model.H.tolist(), "V": model.V.tolist(),
        "objective_trace": list(model.objective_trace),
        "meta_values": list(model.meta_values), "n_full": model.n_full,
    }


def nmf_from_json(d: dict) -> NmfModel:
    c = d["config"]
    cfg = NmfConfig(int(c["p"]), int(c["max_iter"]), float(c["tol"]), int(c["seed"]),
                    tuple(c["window"]) if c.get("window") else None, c["meta_key"])
    p = cfg.p
    V = np.array(d["V"], dtype=float).reshape(-1, len(d["H"][0]) if d["H"] else 0)
    return NmfModel(np.array(d["W"], dtype=float).reshape(-1, p),
                    np.array(d["H"], dtype=float).reshape(p, -1), V, cfg,
                    tuple(d["objective_trace"]), tuple(d["meta_values"]), d.get("n_full"))


def body_to_json(kind: str, body) -> dict:
    if kind == "nmf":
        return nmf_to_json(body)
    if kind in ("anomaly", "classification"):
        return body.to_json()
    raise ArtifactError(f"unknown artifact kind {kind!r}")


def body_from_json(kind: str, d: dict):
    if kind == "nmf":
        return nmf_from_json(d)
    if kind == "anomaly":
        return AnomalyPipeline.from_json(d)
    if kind == "classification":
        return SpectrumClassifier.from_json(d)
    raise ArtifactError(f"unknown artifact kind {kind!r}")


def kind_of(body) -> str:
    if isinstance(body, NmfModel):
        return "nmf"
    if isinstance(body, AnomalyPipeline):
        return "anomaly"
    if isinstance(body, SpectrumClassifier):
        return "classification"
    raise ArtifactError(f"cannot persist {type(body).__name__}")


# --- envelope ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelArtifact:
    kind: str
    body: Any
    feature_schema: str = ""
    created: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    schema_version: int = ARTIFACT_SCHEMA_VERSION

    @classmethod
    def wrap(cls, body) -> "ModelArtifact":
        kind = kind_of(body)
        return cls(kind, body, _FEATURE_SCHEMAS[kind])

    def envelope(self) -> dict:
        env = {"schema_version": self.schema_version, "kind": self.kind,
               "created": self.created, "feature_schema": self.feature_schema,
               "body": body_to_json(self.kind, self.body)}
        env["checksum_sha256"] = _checksum(env)
        return env

    def dumps(self) -> str:
        return canonical_json(self.envelope())


def save_model(artifact: ModelArtifact | Any, path: str | Path) -> Path:
    if not isinstance(artifact, ModelArtifact):
        artifact = ModelArtifact.wrap(artifact)
    path = Path(path)
    text = artifact.dumps()
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text + "\n", encoding="ascii")
    tmp.replace(path)
    return path


def _reject_constant(name: str):
    raise ValueError(f"non-finite number {name}")


def _finite_float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"non-finite number {text}")
    return value


def loads_model(text: str) -> ModelArtifact:
    try:
        env = json.loads(text, parse_constant=_reject_constant, parse_float=_finite_float)
    except json.JSONDecodeError as exc:
        raise ArtifactIntegrityError(f"artifact is not valid JSON: {exc.msg}") from None
    except ValueError as exc:
        raise ArtifactIntegrityError(f"artifact holds {exc}") from None
    if not isinstance(env, dict):
        raise ArtifactIntegrityError("artifact must be a JSON object")
    version = env.get("schema_version")
    if version != ARTIFACT_SCHEMA_VERSION:
        raise ArtifactVersionError(
            f"artifact schema version {version!r} is not supported by this release "
            f"(expects {ARTIFACT_SCHEMA_VERSION}); migrate or retrain the model")
    missing = {"kind", "created", "feature_schema", "checksum_sha256", "body"} - env.keys()
    if missing:
        raise ArtifactIntegrityError(f"artifact lacks fields {sorted(missing)}")
    if env["checksum_sha256"] != _checksum(env):
        raise ArtifactIntegrityError("artifact checksum mismatch; file is corrupt or edited")
    if canonical_json(env) != text.strip():
        raise ArtifactIntegrityError("artifact is not in canonical form")
    kind = env["kind"]
    if kind not in KINDS:
        raise ArtifactError(f"unknown artifact kind {kind!r}")
    if env["feature_schema"] != _FEATURE_SCHEMAS[kind]:
        raise ArtifactVersionError(
            f"artifact uses feature schema {env['feature_schema']!r}; "
            f"this release computes {_FEATURE_SCHEMAS[kind]!r}")
    try:
        body = body_from_json(kind, env["body"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"cannot rebuild {kind} model: {exc}") from None
    return ModelArtifact(kind, body, env["feature_schema"], env["created"], version)


def load_model(path: str | Path) -> ModelArtifact:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ArtifactError(f"cannot read artifact {path}: {exc.strerror}") from None
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError:
        raise ArtifactIntegrityError("artifact contains non-ASCII bytes") from None
    return loads_model(text)
