"""Polling directory watcher that feeds new files to an agent.

Each file is debounced until its size is stable, parsed, told to the agent,
reported to every sink, and followed by an ask.  Files that fail anywhere in
that chain are quarantined and the loop moves on.
"""
from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..agent import GLYPHS, Action, Agent, json_safe
from ..core import DataError, Spectrum1D, from_record
from .documents import DocumentProtocolError, MeasurementRecord, read_document_stream
from .sinks import Sink

log = logging.getLogger(__name__)

QUARANTINE_NAME = ".sentinel-quarantine.jsonl"


class WatchError(RuntimeError):
    pass


@dataclass(frozen=True)
class WatchConfig:
    directory: Path
    pattern: str = "*"
    poll_interval: float = 0.5
    debounce_polls: int = 2
    max_backoff: float = 30.0

    def __post_init__(self):
        object.__setattr__(self, "directory", Path(self.directory))
        if not self.poll_interval > 0:
            raise ValueError("poll interval must be > 0")
        if self.debounce_polls < 1:
            raise ValueError("debounce window must be at least one poll")


@dataclass
class QuarantineEntry:
    path: str
    error: str


@dataclass
class WatchStats:
    files_seen: int = 0
    reports_sent: int = 0
    alarms: int = 0
    quarantined: int = 0

    def summary(self) -> str:
        return (f"files seen {self.files_seen} / reports sent {self.reports_sent} / "
                f"alarms {self.alarms} / quarantined {self.quarantined}")


def parse_two_column(text: str, source: str = "") -> Spectrum1D:
    """Ordinate/intensity columns separated by whitespace or commas; '#' starts a comment."""
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise DataError(f"{source}:{lineno}: expected 2 columns, got {len(parts)}")
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise DataError(f"{source}:{lineno}: non-numeric value") from None
    if not rows:
        raise DataError(f"{source}: no data rows")
    arr = np.array(rows)
    return Spectrum1D(arr[:, 0], arr[:, 1])


def parse_file(path: Path) -> list:
    """Measurements in a file: core JSON records, a document stream, or two columns."""
    text = path.read_text(encoding="utf-8")
    if path.suffix not in (".json", ".jsonl"):
        return [parse_two_column(text, path.name)]
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DataError(f"{path.name}: empty file")
    try:
        docs = [json.loads(ln) for ln in lines]
    except json.JSONDecodeError:
        # a single pretty-printed JSON object
        try:
            docs = [json.loads(text)]
        except json.JSONDecodeError as exc:
            raise DataError(f"{path.name}: invalid JSON ({exc.msg})") from None
    if all(isinstance(d, dict) and "doc_type" in d for d in docs):
        stream = read_document_stream(docs)
        items = [r.record for r in stream if isinstance(r, MeasurementRecord)]
        for w in stream.warnings:
            log.warning("%s: %s", path.name, w.message)
    else:
        items = [from_record(d) for d in docs]
    if not items:
        raise DataError(f"{path.name}: no measurements")
    return items


class Watcher:
    """Single-writer loop feeding one agent from one directory."""

    def __init__(self, config: WatchConfig, agent: Agent, sinks: Sequence[Sink] = (),
                 quarantine_path: str | Path | None = None):
        self.config = config
        self.agent = agent
        self.sinks = list(sinks)
        self.quarantine_path = (Path(quarantine_path) if quarantine_path is not None
                                else config.directory / QUARANTINE_NAME)
        self.quarantine: list[QuarantineEntry] = []
        self.stats = WatchStats()
        self.processed: list[Path] = []
        self._seen: dict[Path, tuple[int, int]] = {}   # path -> (size, stable polls)
        self._done: set[Path] = set()
        self._missing = False
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    # --- dispatch -------------------------------------------------------------------

    def _emit(self, message: dict, priority: bool = False):
        for sink in self.sinks:
            try:
                sink.emit(message, priority)
            except Exception:   # a broken sink must not stop ingestion
                log.exception("sink %r failed", sink)

    def _warn(self, text: str):
        log.warning(text)
        self._emit({"type": "warning", "agent_id": self.agent.agent_id,
                    "glyph": GLYPHS["warning"], "summary": text}, priority=True)

    def _quarantine(self, path: Path, error: str):
        entry = QuarantineEntry(str(path), error)
        self.quarantine.append(entry)
        self.stats.quarantined += 1
        log.warning("quarantined %s: %s", path.name, error)
        try:
            with open(self.quarantine_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"path": entry.path, "error": entry.error}) + "\n")
        except OSError as exc:
            log.error("cannot write quarantine sidecar: %s", exc)

    def process_file(self, path: Path):
        self.stats.files_seen += 1
        try:
            items = parse_file(path)
            for item in items:
                self.agent.tell(item)
            report = self.agent.report()
        except (OSError, UnicodeDecodeError, DataError, DocumentProtocolError,
                TypeError, ValueError, ArithmeticError) as exc:
            self._quarantine(path, f"{type(exc).__name__}: {exc}")
            return
        message = json_safe(report.to_json())
        message["type"] = "report"
        message["source"] = path.name
        message["summary"] = report.summary()
        self._emit(message)
        self.stats.reports_sent += 1
        if report.status == "alarm":
            self.stats.alarms += 1
        directive = self.agent.ask()
        if directive.action is not Action.CONTINUE:
            self._emit({"type": "directive", "agent_id": self.agent.agent_id,
                        "source": path.name, "action": directive.action.value,
                        "reason": directive.reason,
                        "glyph": GLYPHS["warning"],
                        "summary": f"{directive.action.value}: {directive.reason}"},
                       priority=True)

    # --- polling --------------------------------------------------------------------

    def _candidates(self) -> list[Path]:
        return [p for p in self.config.directory.glob(self.config.pattern)
                if p.is_file() and p.name != self.quarantine_path.name
                and p not in self._done]

    def poll_once(self) -> int:
        """Scan once and process every file whose size has settled.

        Returns the number of files processed, or -1 if the directory is missing.
        """
        if not self.config.directory.is_dir():
            if not self._missing:
                self._missing = True
                self._warn(f"watched directory {self.config.directory} is missing")
            return -1
        if self._missing:
            self._missing = False
            log.info("watched directory %s is back", self.config.directory)
        ready = []
        for path in self._candidates():
            try:
                st = path.stat()
            except OSError:
                continue
            size, stable = self._seen.get(path, (-1, 0))
            stable = stable + 1 if st.st_size == size else 0
            self._seen[path] = (st.st_size, stable)
            if stable >= self.config.debounce_polls:
                ready.append((st.st_mtime_ns, path.name, path))
        ready.sort()
        for _, _, path in ready:
            self._done.add(path)
            self._seen.pop(path, None)
            self.process_file(path)
            self.processed.append(path)
        return len(ready)

    def run(self, max_polls: int | None = None):
        """Blocking loop; backs off exponentially while the directory is missing."""
        delay = self.config.poll_interval
        polls = 0
        while not self._stop.is_set():
            n = self.poll_once()
            polls += 1
            if max_polls is not None and polls >= max_polls:
                break
            if n < 0:
                delay = min(delay * 2, self.config.max_backoff)
            else:
                delay = self.config.poll_interval
            self._stop.wait(delay)

    def start(self) -> "Watcher":
        if self._thread is not None:
            raise WatchError("watcher already started")
        if not self.config.directory.is_dir():
            raise WatchError(f"directory {self.config.directory} does not exist")
        self._thread = threading.Thread(target=self.run, name="watcher", daemon=True)
        self._thread.start()
        return self

    def stop(self, timeout: float | None = None):
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout)


def watch(config: WatchConfig, agent: Agent, sinks: Sequence[Sink] = ()) -> Watcher:
    """Start a background watcher and return its handle."""
    return Watcher(config, agent, sinks).start()
