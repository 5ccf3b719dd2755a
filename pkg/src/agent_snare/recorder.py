"""Append-only JSON-lines event log.

One event per line, fixed key order (v, session_id, ts_ms, kind, peer,
payload, injection_id, stage), absent optionals omitted. The file is the
single source of truth for offline re-detection, so encoding must round-trip
bit-exactly, including hostile payloads.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .model import EventKind, SessionEvent, Stage, validate_event

SCHEMA_VERSION = 1


class RecorderError(Exception):
    """Fatal log health problem (write or rotation failure)."""


def encode_event(e: SessionEvent) -> str:
    obj: dict = {
        "v": SCHEMA_VERSION,
        "session_id": e.session_id,
        "ts_ms": e.ts_ms,
        "kind": e.kind.value,
        "peer": e.peer,
        "payload": e.payload,
    }
    if e.injection_id is not None:
        obj["injection_id"] = e.injection_id
    if e.stage is not None:
        obj["stage"] = e.stage.value
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def decode_event(line: str) -> SessionEvent:
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("log line is not a JSON object")
    if obj.get("v") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version: {obj.get('v')!r}")
    try:
        kind = EventKind(obj["kind"])
    except (KeyError, ValueError):
        raise ValueError(f"unknown event kind: {obj.get('kind')!r}") from None
    stage = None
    if "stage" in obj:
        stage = Stage(obj["stage"])
    event = SessionEvent(
        session_id=obj["session_id"],
        ts_ms=obj["ts_ms"],
        kind=kind,
        peer=obj["peer"],
        payload=obj["payload"],
        injection_id=obj.get("injection_id"),
        stage=stage,
    )
    errors = validate_event(event)
    if errors:
        raise ValueError("; ".join(errors))
    return event


class EventLog:
    """Durable event sink; append is safe under concurrent callers."""

    def __init__(self, path: str, max_bytes: Optional[int] = None):
        self.path = path
        self.max_bytes = max_bytes
        self._lock = threading.Lock()
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        self._fh = open(path, "a", encoding="utf-8")

    def append(self, e: SessionEvent) -> None:
        errors = validate_event(e)
        if errors:
            raise ValueError("invalid event: " + "; ".join(errors))
        line = encode_event(e) + "\n"
        with self._lock:
            try:
                self._fh.write(line)
                self._fh.flush()
            except OSError as exc:
                raise RecorderError(f"log append failed: {exc}") from exc
            if self.max_bytes is not None and self._fh.tell() > self.max_bytes:
                self._rotate_locked()

    def rotate(self) -> Optional[str]:
        """Force a rotation; returns the rotated-out path, if any."""
        with self._lock:
            if not os.path.exists(self.path) or os.path.getsize(self.path) == 0:
                return None
            return self._rotate_locked()

    def _rotate_locked(self) -> str:
        self._fh.close()
        suffix = time.strftime("%Y%m%d%H%M%S", time.gmtime())
        rotated = f"{self.path}.{suffix}"
        counter = 0
        while os.path.exists(rotated):
            counter += 1
            rotated = f"{self.path}.{suffix}.{counter}"
        try:
            os.rename(self.path, rotated)
        except OSError as exc:
            raise RecorderError(f"log rotation failed: {exc}") from exc
        self._fh = open(self.path, "a", encoding="utf-8")
        return rotated

    def close(self) -> None:
        with self._lock:
            self._fh.close()


@dataclass
class ReadResult:
    """Decoded log content: events grouped per session, plus skip diagnostics."""

    sessions: Dict[str, List[SessionEvent]] = field(default_factory=dict)
    skipped: List[Tuple[int, str]] = field(default_factory=list)

    @property
    def skip_count(self) -> int:
        return len(self.skipped)

    def all_events(self) -> List[SessionEvent]:
        out: List[SessionEvent] = []
        for events in self.sessions.values():
            out.extend(events)
        return out


def read_all(path: str) -> ReadResult:
    """Decode a log file; malformed lines are reported and skipped, never fatal."""
    result = ReadResult()
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                event = decode_event(line)
            except (ValueError, KeyError, TypeError) as exc:
                result.skipped.append((lineno, str(exc)))
                continue
            result.sessions.setdefault(event.session_id, []).append(event)
    return result
