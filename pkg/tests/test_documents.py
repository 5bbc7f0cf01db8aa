import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sentinel.core import Spectrum1D, to_record
from sentinel.ingest import (DocumentProtocolError, DocumentStream, MeasurementRecord,
                             RunComplete, group_by_run, read_document_stream)
from sentinel.ingest.documents import (DocumentAfterStopError, DuplicateSeqError,
                                       DuplicateStartError, EventBeforeStartError,
                                       MalformedDocumentError, OutOfOrderSeqError,
                                       StopBeforeStartError, UnknownDocTypeError)


def spectrum(i):
    return Spectrum1D(np.linspace(0, 1, 8), np.arange(8.0) + i, meta={"index": float(i)})


def run_docs(run_id, n_events, start_seq=1):
    docs = [{"doc_type": "start", "run_id": run_id, "seq": start_seq, "body": {"plan": "scan"}}]
    for k in range(n_events):
        docs.append({"doc_type": "event", "run_id": run_id, "seq": start_seq + 1 + k,
                     "time": float(k), "body": to_record(spectrum(k))})
    docs.append({"doc_type": "stop", "run_id": run_id, "seq": start_seq + 1 + n_events,
                 "body": {"exit_status": "success"}})
    return docs


def test_simple_run():
    stream = DocumentStream(run_docs("r1", 3))
    out = list(stream)
    recs = [o for o in out if isinstance(o, MeasurementRecord)]
    assert len(recs) == 3
    assert [r.record.meta["index"] for r in recs] == [0, 1, 2]
    assert isinstance(out[-1], RunComplete)
    assert out[-1].n_events == 3 and out[-1].exit_status == "success"
    assert stream.warnings == []


def test_seq_gap_warns():
    docs = run_docs("r1", 3)
    del docs[2]
    stream = DocumentStream(docs)
    assert sum(isinstance(o, MeasurementRecord) for o in stream) == 2
    assert [w.kind for w in stream.warnings] == ["seq-gap"]
    assert stream.warnings[0].seq == 4


def test_incomplete_run_warns():
    stream = DocumentStream(run_docs("r1", 2)[:-1])
    list(stream)
    assert [w.kind for w in stream.warnings] == ["incomplete-run"]


def test_interleaved_runs():
    a, b = run_docs("a", 4), run_docs("b", 2, start_seq=10)
    mixed = []
    for i in range(max(len(a), len(b))):
        mixed += a[i:i + 1] + b[i:i + 1]
    groups = group_by_run(DocumentStream(mixed))
    assert [r.record.meta["index"] for r in groups["a"]] == [0, 1, 2, 3]
    assert [r.record.meta["index"] for r in groups["b"]] == [0, 1]


def test_jsonl_file(tmp_path):
    path = tmp_path / "docs.jsonl"
    path.write_text("\n".join(json.dumps(d) for d in run_docs("r", 2)) + "\n\n")
    assert len(group_by_run(read_document_stream(path))["r"]) == 2


@pytest.mark.parametrize("mutate, error", [
    (lambda d: d[1:], EventBeforeStartError),
    (lambda d: [d[0], d[-1], d[1]], DocumentAfterStopError),
    (lambda d: [d[0], d[1], d[1]], DuplicateSeqError),
    (lambda d: [d[0], d[2], d[1]], OutOfOrderSeqError),
    (lambda d: [d[0], d[0]], DuplicateStartError),
    (lambda d: [d[-1]], StopBeforeStartError),
    (lambda d: [dict(d[0], doc_type="descriptor")], UnknownDocTypeError),
    (lambda d: [dict(d[0], seq="1")], MalformedDocumentError),
    (lambda d: [d[0], dict(d[1], body={"kind": "nope"})], MalformedDocumentError),
    (lambda d: ["{not json"], MalformedDocumentError),
])
def test_framing_errors(mutate, error):
    with pytest.raises(error) as info:
        list(DocumentStream(mutate(run_docs("r", 2))))
    assert isinstance(info.value, DocumentProtocolError)


@settings(max_examples=200, deadline=None)
@given(st.permutations(range(5)))
def test_permutations_succeed_or_raise_named(perm):
    docs = run_docs("r", 3)
    shuffled = [docs[i] for i in perm]
    try:
        out = list(DocumentStream(shuffled))
    except DocumentProtocolError:
        assert list(perm) != sorted(perm)
        return
    assert list(perm) == sorted(perm)
    assert sum(isinstance(o, MeasurementRecord) for o in out) == 3


json_values = st.recursive(
    st.none() | st.booleans() | st.integers() | st.floats(allow_nan=False) | st.text(max_size=5),
    lambda inner: st.lists(inner, max_size=3) | st.dictionaries(st.text(max_size=5), inner,
                                                                 max_size=3),
    max_leaves=8)


@settings(max_examples=300, deadline=None)
@given(st.one_of(
    json_values,
    st.text(max_size=30),
    st.fixed_dictionaries({"doc_type": st.sampled_from(["start", "event", "stop", "x"]),
                           "run_id": json_values, "seq": json_values},
                          optional={"body": json_values, "time": json_values})))
def test_malformed_documents_raise_named_errors(raw):
    try:
        list(DocumentStream([raw]))
    except DocumentProtocolError:
        pass
