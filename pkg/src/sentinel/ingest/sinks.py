"""Report sinks: in-memory, JSON Lines archive, and an at-least-once webhook."""
from __future__ import annotations

import collections
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import requests

log = logging.getLogger(__name__)


class Sink:
    def emit(self, message: dict, priority: bool = False) -> None:
        raise NotImplementedError

    def close(self, deadline: float | None = None) -> None:
        pass


class MemorySink(Sink):
    def __init__(self):
        self.messages: list[dict] = []
        self.priority: list[dict] = []
        self._lock = threading.Lock()

    def emit(self, message, priority=False):
        with self._lock:
            self.messages.append(message)
            if priority:
                self.priority.append(message)


class ArchiveSink(Sink):
    """Appends every message as one JSON line."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def emit(self, message, priority=False):
        line = json.dumps(message, allow_nan=False)
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")


# --- webhook -----------------------------------------------------------------------

@dataclass(frozen=True)
class RetryPolicy:
    base_delay: float = 0.5
    factor: float = 2.0
    max_delay: float = 30.0
    max_attempts: int = 8

    def delay(self, attempt: int) -> float:
        """Wait after the given failed attempt (0-based)."""
        return min(self.base_delay * self.factor ** attempt, self.max_delay)


@dataclass
class DeliveryResult:
    delivered: bool
    attempts: int
    status: int | None = None
    delays: list[float] = field(default_factory=list)
    error: str | None = None


def _post(url: str, body: bytes, timeout: float) -> int:
    resp = requests.post(url, data=body, timeout=timeout,
                         headers={"Content-Type": "application/json"})
    return resp.status_code


def slack_body(report: dict) -> dict:
    """Wrap a report as {"text": "<glyph> <summary>"}."""
    payload = report.get("payload") or {}
    glyph = (report.get("glyph") or payload.get("glyph") or payload.get("emoji_code")
             or "information_source")
    summary = report.get("summary") or f"{report.get('kind', 'report')} {report.get('status', '')}"
    return {"text": f":{glyph}: {summary}".strip()}


def encode_body(report: dict, slack_format: bool = False) -> bytes:
    msg = slack_body(report) if slack_format else report
    return json.dumps(msg, allow_nan=False).encode("utf-8")


def webhook_notify(endpoint: str, report: dict, policy: RetryPolicy = RetryPolicy(),
                   dead_letter: str | Path | None = None, slack_format: bool = False,
                   timeout: float = 5.0, post: Callable[[str, bytes, float], int] = _post,
                   sleep: Callable[[float], object] = time.sleep) -> DeliveryResult:
    """POST a report, retrying with exponential backoff until a 2xx arrives.

    After ``policy.max_attempts`` failures the body goes to the dead-letter file.
    ``sleep`` may return True to abandon the retries early (used on shutdown).
    """
    if not endpoint:
        raise ValueError("no webhook endpoint configured")
    body = encode_body(report, slack_format)
    result = DeliveryResult(False, 0)
    for attempt in range(policy.max_attempts):
        result.attempts += 1
        try:
            status = post(endpoint, body, timeout)
            result.status = status
            if 200 <= status < 300:
                result.delivered = True
                return result
            result.error = f"HTTP {status}"
        except requests.RequestException as exc:
            result.status = None
            result.error = f"{type(exc).__name__}: {exc}"
        if attempt + 1 < policy.max_attempts:
            wait = policy.delay(attempt)
            result.delays.append(wait)
            if sleep(wait):
                break
    log.warning("webhook delivery to %s failed after %d attempts: %s",
                endpoint, result.attempts, result.error)
    if dead_letter is not None:
        write_dead_letter(dead_letter, body)
    return result


def write_dead_letter(path: str | Path, body: bytes) -> None:
    with open(path, "ab") as fh:
        fh.write(body + b"\n")


class WebhookSink(Sink):
    """Queues messages and delivers them from a background thread so slow
    endpoints never block ingestion.

    The queue holds at most ``capacity`` messages; on overflow the oldest is
    dropped, logged and written to the dead-letter file.
    """

    def __init__(self, url: str, dead_letter: str | Path, *, slack_format: bool = False,
                 capacity: int = 1000, policy: RetryPolicy = RetryPolicy(),
                 timeout: float = 5.0, post: Callable[[str, bytes, float], int] = _post):
        if not url:
            raise ValueError("webhook sink needs a URL")
        self.url = url
        self.dead_letter = Path(dead_letter)
        self.slack_format = slack_format
        self.capacity = capacity
        self.policy = policy
        self.timeout = timeout
        self._post = post
        self._queue: collections.deque = collections.deque()
        self._cond = threading.Condition()
        self._closing = threading.Event()
        self._abort = threading.Event()
        self.results: list[DeliveryResult] = []
        self.dropped = 0
        self._in_flight = 0
        self._worker = threading.Thread(target=self._run, name="webhook-sink", daemon=True)
        self._worker.start()

    def emit(self, message, priority=False):
        with self._cond:
            if self._closing.is_set():
                write_dead_letter(self.dead_letter, encode_body(message, self.slack_format))
                return
            if len(self._queue) >= self.capacity:
                old = self._queue.pop() if priority else self._queue.popleft()
                self.dropped += 1
                log.warning("webhook queue full (%d); dropping oldest message", self.capacity)
                write_dead_letter(self.dead_letter, encode_body(old, self.slack_format))
            if priority:
                self._queue.appendleft(message)
            else:
                self._queue.append(message)
            self._cond.notify()

    @property
    def pending(self) -> int:
        with self._cond:
            return len(self._queue) + self._in_flight

    def _sleep(self, seconds: float) -> bool:
        return self._abort.wait(seconds)

    def _run(self):
        while True:
            with self._cond:
                while not self._queue and not self._closing.is_set():
                    self._cond.wait()
                if not self._queue:
                    return
                message = self._queue.popleft()
                self._in_flight = 1
            if self._abort.is_set():
                write_dead_letter(self.dead_letter, encode_body(message, self.slack_format))
                result = DeliveryResult(False, 0, error="aborted at shutdown")
            else:
                result = webhook_notify(self.url, message, self.policy, self.dead_letter,
                                        self.slack_format, self.timeout, self._post,
                                        self._sleep)
            with self._cond:
                self.results.append(result)
                self._in_flight = 0
                self._cond.notify_all()

    def flush(self, timeout: float | None = None) -> bool:
        """Wait until the queue is empty; True if it drained in time."""
        end = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while self._queue or self._in_flight:
                remaining = None if end is None else end - time.monotonic()
                if remaining is not None and remaining <= 0:
                    return False
                self._cond.wait(remaining)
        return True

    def close(self, deadline: float | None = 10.0):
        """Drain for up to ``deadline`` seconds, then dead-letter the rest."""
        drained = self.flush(deadline)
        with self._cond:
            self._closing.set()
            if not drained:
                self._abort.set()
            leftovers = list(self._queue)
            self._queue.clear()
            self._cond.notify_all()
        for message in leftovers:
            write_dead_letter(self.dead_letter, encode_body(message, self.slack_format))
        self._worker.join(timeout=max(self.timeout, 1.0) + 1.0)
