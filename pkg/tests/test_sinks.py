import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
import requests

from sentinel.ingest import (ArchiveSink, MemorySink, RetryPolicy, WebhookSink,
                             slack_body, webhook_notify)

REPORT = {"kind": "anomaly", "status": "alarm", "sequence_number": 1,
          "payload": {"score": 3.5, "glyph": "rotating_light"}, "summary": "x: Anomalous"}
FAST = RetryPolicy(base_delay=0.001, max_delay=0.004)


class Stub:
    """Scripted endpoint: returns the given statuses in turn, then 200."""

    def __init__(self, statuses=(), gate: threading.Event | None = None):
        self.statuses = list(statuses)
        self.calls: list[tuple[str, bytes]] = []
        self.gate = gate

    def __call__(self, url, body, timeout):
        if self.gate is not None:
            self.gate.wait(5)
        self.calls.append((url, body))
        status = self.statuses.pop(0) if self.statuses else 200
        if isinstance(status, Exception):
            raise status
        return status


def wait_in_flight(sink):
    while not sink._in_flight:
        time.sleep(0.001)


def test_policy_delays():
    p = RetryPolicy()
    assert [p.delay(k) for k in range(8)] == [0.5, 1, 2, 4, 8, 16, 30, 30]


def test_healthy_endpoint():
    post = Stub()
    r = webhook_notify("http://hook", REPORT, post=post, sleep=lambda s: None)
    assert r.delivered and r.attempts == 1
    assert len(post.calls) == 1
    assert json.loads(post.calls[0][1]) == REPORT


def test_fail_twice_then_succeed():
    slept = []
    post = Stub([500, requests.ConnectionError("refused")])
    r = webhook_notify("http://hook", REPORT, post=post, sleep=slept.append)
    assert r.delivered and r.attempts == 3
    assert slept == r.delays == [0.5, 1.0]


def test_exhausted_goes_to_dead_letter(tmp_path, caplog):
    dead = tmp_path / "dead.jsonl"
    post = Stub([503] * 8)
    r = webhook_notify("http://hook", REPORT, dead_letter=dead, post=post,
                       sleep=lambda s: None)
    assert not r.delivered and r.attempts == 8 and len(r.delays) == 7
    assert json.loads(dead.read_text()) == REPORT
    assert "failed after 8 attempts" in caplog.text


def test_non_2xx_is_failure():
    r = webhook_notify("http://hook", REPORT, RetryPolicy(max_attempts=2),
                       post=Stub([302, 404]), sleep=lambda s: None)
    assert not r.delivered and r.status == 404


def test_slack_format():
    post = Stub()
    webhook_notify("http://hook", REPORT, slack_format=True, post=post)
    assert json.loads(post.calls[0][1]) == {"text": ":rotating_light: x: Anomalous"}
    assert slack_body({"kind": "classification", "payload": {"emoji_code": "x"}})["text"] \
        .startswith(":x:")


def test_sink_delivers_in_order(tmp_path):
    post = Stub()
    sink = WebhookSink("http://hook", tmp_path / "dead", post=post, policy=FAST)
    for i in range(20):
        sink.emit({"i": i})
    assert sink.flush(5)
    sink.close(1)
    assert [json.loads(b)["i"] for _, b in post.calls] == list(range(20))
    assert all(r.delivered for r in sink.results)
    assert not (tmp_path / "dead").exists()


def test_overflow_drops_oldest(tmp_path, caplog):
    gate = threading.Event()
    post = Stub(gate=gate)
    dead = tmp_path / "dead"
    sink = WebhookSink("http://hook", dead, post=post, capacity=3, policy=FAST)
    sink.emit({"i": 0})
    wait_in_flight(sink)
    for i in range(1, 6):
        sink.emit({"i": i})
    assert sink.dropped == 2
    assert [json.loads(line)["i"] for line in dead.read_text().splitlines()] == [1, 2]
    assert "dropping oldest" in caplog.text
    gate.set()
    sink.close(5)
    assert [json.loads(b)["i"] for _, b in post.calls] == [0, 3, 4, 5]


def test_priority_jumps_queue(tmp_path):
    gate = threading.Event()
    post = Stub(gate=gate)
    sink = WebhookSink("http://hook", tmp_path / "dead", post=post, policy=FAST)
    sink.emit({"i": 0})
    wait_in_flight(sink)
    sink.emit({"i": 1})
    sink.emit({"i": 2})
    sink.emit({"directive": "Pause"}, priority=True)
    gate.set()
    sink.close(5)
    assert [json.loads(b) for _, b in post.calls][1] == {"directive": "Pause"}


def test_close_deadline_dead_letters_leftovers(tmp_path):
    dead = tmp_path / "dead"
    post = Stub([500] * 100)
    sink = WebhookSink("http://hook", dead, post=post,
                       policy=RetryPolicy(base_delay=10, max_delay=10))
    for i in range(3):
        sink.emit({"i": i})
    sink.close(0.2)
    assert sorted(json.loads(l)["i"] for l in dead.read_text().splitlines()) == [0, 1, 2]
    sink.emit({"i": 9})
    assert json.loads(dead.read_text().splitlines()[-1]) == {"i": 9}


def test_memory_and_archive(tmp_path):
    m = MemorySink()
    m.emit({"a": 1})
    m.emit({"b": 2}, priority=True)
    assert m.messages == [{"a": 1}, {"b": 2}] and m.priority == [{"b": 2}]
    a = ArchiveSink(tmp_path / "arch.jsonl")
    a.emit({"a": 1})
    a.emit({"b": 2})
    assert [json.loads(l) for l in (tmp_path / "arch.jsonl").read_text().splitlines()] == \
        [{"a": 1}, {"b": 2}]


def test_requires_url(tmp_path):
    with pytest.raises(ValueError):
        WebhookSink("", tmp_path / "dead")
    with pytest.raises(ValueError):
        webhook_notify("", REPORT)


@pytest.fixture
def flaky_server():
    received = []

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            body = self.rfile.read(int(self.headers["Content-Length"]))
            received.append(body)
            self.send_response(500 if len(received) <= 2 else 200)
            self.end_headers()

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/hook", received
    server.shutdown()
    server.server_close()


def test_real_http_retry(flaky_server, tmp_path):
    url, received = flaky_server
    sink = WebhookSink(url, tmp_path / "dead", policy=FAST, timeout=2)
    sink.emit(REPORT)
    sink.close(10)
    assert len(received) == 3
    assert json.loads(received[-1]) == REPORT
    assert sink.results[0].delivered and sink.results[0].attempts == 3
