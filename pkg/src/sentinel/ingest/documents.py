"""Start/event/stop document streams grouped into per-run measurement records."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from ..core import DataError, Spectrum1D, TimeSeriesBundle, from_record

DOC_TYPES = ("start", "event", "stop")


class DocumentProtocolError(ValueError):
    """Base for framing violations; carries the offending run and seq."""

    def __init__(self, message: str, run_id: str | None = None, seq: int | None = None):
        super().__init__(message)
        self.run_id = run_id
        self.seq = seq


class MalformedDocumentError(DocumentProtocolError):
    pass


class UnknownDocTypeError(DocumentProtocolError):
    pass


class EventBeforeStartError(DocumentProtocolError):
    pass


class StopBeforeStartError(DocumentProtocolError):
    pass


class DuplicateStartError(DocumentProtocolError):
    pass


class DocumentAfterStopError(DocumentProtocolError):
    pass


class DuplicateSeqError(DocumentProtocolError):
    pass


class OutOfOrderSeqError(DocumentProtocolError):
    pass


@dataclass(frozen=True)
class Document:
    doc_type: str
    run_id: str
    seq: int
    time: float
    body: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def parse(cls, raw) -> "Document":
        if isinstance(raw, (str, bytes)):
            try:
                raw = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise MalformedDocumentError(f"invalid JSON: {exc.msg}") from None
        if not isinstance(raw, Mapping):
            raise MalformedDocumentError("document must be a JSON object")
        run_id, seq = raw.get("run_id"), raw.get("seq")
        doc_type = raw.get("doc_type")
        if doc_type not in DOC_TYPES:
            raise UnknownDocTypeError(f"unknown doc_type {doc_type!r}", run_id, seq)
        if not isinstance(run_id, str) or not run_id:
            raise MalformedDocumentError("document lacks a run_id", None, seq)
        if isinstance(seq, bool) or not isinstance(seq, int):
            raise MalformedDocumentError(f"seq must be an integer, got {seq!r}", run_id)
        body = raw.get("body", {})
        if not isinstance(body, Mapping):
            raise MalformedDocumentError("body must be an object", run_id, seq)
        time = raw.get("time", 0.0)
        if isinstance(time, bool) or not isinstance(time, (int, float)):
            raise MalformedDocumentError("time must be a number", run_id, seq)
        return cls(doc_type, run_id, seq, float(time), dict(body))

    def to_json(self) -> dict:
        return {"doc_type": self.doc_type, "run_id": self.run_id, "seq": self.seq,
                "time": self.time, "body": dict(self.body)}


@dataclass(frozen=True)
class MeasurementRecord:
    run_id: str
    seq: int
    record: Spectrum1D | TimeSeriesBundle


@dataclass(frozen=True)
class RunComplete:
    run_id: str
    exit_status: str
    n_events: int
    plan: Mapping[str, Any]


@dataclass(frozen=True)
class StreamWarning:
    kind: str           # "seq-gap" | "incomplete-run"
    run_id: str
    message: str
    seq: int | None = None


@dataclass
class _RunState:
    plan: Mapping[str, Any]
    last_seq: int
    n_events: int = 0
    stopped: bool = False


class DocumentStream:
    """Iterates measurement records and run completions from a document feed.

    Framing violations raise immediately. Sequence gaps and runs still open
    at the end of the feed are collected in ``warnings``.
    """

    def __init__(self, source: Iterable):
        self._source = source
        self.warnings: list[StreamWarning] = []
        self.runs: dict[str, _RunState] = {}

    def __iter__(self) -> Iterator[MeasurementRecord | RunComplete]:
        for raw in self._source:
            if isinstance(raw, (str, bytes)) and not raw.strip():
                continue
            doc = raw if isinstance(raw, Document) else Document.parse(raw)
            out = self._accept(doc)
            if out is not None:
                yield out
        for run_id, st in self.runs.items():
            if not st.stopped:
                self.warnings.append(StreamWarning(
                    "incomplete-run", run_id,
                    f"run {run_id} ended without a stop document "
                    f"after {st.n_events} events"))

    def _accept(self, doc: Document):
        st = self.runs.get(doc.run_id)
        if doc.doc_type == "start":
            if st is not None:
                raise DuplicateStartError(
                    f"second start for run {doc.run_id} at seq {doc.seq}",
                    doc.run_id, doc.seq)
            self.runs[doc.run_id] = _RunState(dict(doc.body), doc.seq)
            return None
        if st is None:
            cls = EventBeforeStartError if doc.doc_type == "event" else StopBeforeStartError
            raise cls(f"{doc.doc_type} at seq {doc.seq} for run {doc.run_id} "
                      "arrived before its start document", doc.run_id, doc.seq)
        if st.stopped:
            raise DocumentAfterStopError(
                f"{doc.doc_type} at seq {doc.seq} after run {doc.run_id} stopped",
                doc.run_id, doc.seq)
        if doc.seq == st.last_seq:
            raise DuplicateSeqError(f"duplicate seq {doc.seq} in run {doc.run_id}",
                                    doc.run_id, doc.seq)
        if doc.seq < st.last_seq:
            raise OutOfOrderSeqError(
                f"seq {doc.seq} after {st.last_seq} in run {doc.run_id}",
                doc.run_id, doc.seq)
        if doc.seq > st.last_seq + 1:
            self.warnings.append(StreamWarning(
                "seq-gap", doc.run_id,
                f"seq jumped from {st.last_seq} to {doc.seq} in run {doc.run_id}",
                doc.seq))
        st.last_seq = doc.seq
        if doc.doc_type == "stop":
            st.stopped = True
            return RunComplete(doc.run_id, str(doc.body.get("exit_status", "unknown")),
                               st.n_events, st.plan)
        try:
            record = from_record(doc.body)
        except DataError as exc:
            raise MalformedDocumentError(
                f"event seq {doc.seq} in run {doc.run_id}: {exc}", doc.run_id,
                doc.seq) from None
        st.n_events += 1
        return MeasurementRecord(doc.run_id, doc.seq, record)


def read_document_stream(source) -> DocumentStream:
    """Accepts an iterable of lines/dicts/Documents or a path to a JSON Lines file."""
    if isinstance(source, (str, Path)) and Path(source).exists():
        with open(source, encoding="utf-8") as fh:
            return DocumentStream(fh.readlines())
    return DocumentStream(source)


def group_by_run(stream: DocumentStream) -> dict[str, list[MeasurementRecord]]:
    groups: dict[str, list[MeasurementRecord]] = {}
    for item in stream:
        if isinstance(item, MeasurementRecord):
            groups.setdefault(item.run_id, []).append(item)
    return groups
