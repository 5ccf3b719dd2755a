"""Shared domain types and the canonical session event vocabulary.

Everything here is an immutable value object; instances can be handed
between session handler threads without locking.
"""

from __future__ import annotations

import re
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple


class EventKind(str, Enum):
    CONNECT = "connect"
    AUTH_ATTEMPT = "auth_attempt"
    INPUT = "input"
    OUTPUT = "output"
    INJECTION_EMITTED = "injection_emitted"
    DISCONNECT = "disconnect"


class Stage(str, Enum):
    HIJACK = "hijack"
    STEAL = "steal"


class ActorLabel(str, Enum):
    TRADITIONAL_BOT = "traditional_bot"
    POTENTIAL_AI_AGENT = "potential_ai_agent"
    CONFIRMED_AI_AGENT = "confirmed_ai_agent"
    LIKELY_HUMAN = "likely_human"


def new_session_id() -> str:
    """Fresh 128-bit session identifier, printed as 32 hex chars."""
    return uuid.uuid4().hex


_SESSION_ID_RE = re.compile(r"^[0-9a-f]{32}$")


def is_session_id(value: str) -> bool:
    return bool(_SESSION_ID_RE.match(value))


@dataclass(frozen=True)
class SessionEvent:
    """One timestamped wire-level occurrence within a session."""

    session_id: str
    ts_ms: int
    kind: EventKind
    peer: str
    payload: str = ""
    injection_id: Optional[str] = None
    stage: Optional[Stage] = None


def validate_event(e: SessionEvent) -> list[str]:
    """Return a list of invariant violations; empty means the event is valid."""
    errors: list[str] = []
    if not isinstance(e.session_id, str) or not _SESSION_ID_RE.match(e.session_id):
        errors.append("session_id must be 32 lowercase hex chars")
    if not isinstance(e.ts_ms, int) or isinstance(e.ts_ms, bool) or e.ts_ms < 0:
        errors.append("ts_ms must be a non-negative integer")
    if not isinstance(e.kind, EventKind):
        errors.append("kind must be a valid EventKind")
    if e.payload is None:
        errors.append("payload must not be null")
    if e.kind == EventKind.INJECTION_EMITTED:
        if e.injection_id is None:
            errors.append("injection_emitted requires injection_id")
        if e.stage is None:
            errors.append("injection_emitted requires stage")
    else:
        if e.injection_id is not None:
            errors.append("injection_id only on injection_emitted")
        if e.stage is not None:
            errors.append("stage only on injection_emitted")
    return errors


def sanitize_payload(raw: bytes) -> str:
    """Decode hostile wire bytes into log-safe text.

    Valid UTF-8 passes through; newline and tab are kept literal; all other
    control bytes and invalid sequences become C-style \\xNN escapes so a
    payload can never corrupt the one-line log format.
    """
    out: list[str] = []
    i = 0
    n = len(raw)
    while i < n:
        b = raw[i]
        if b < 0x80:
            if b in (0x09, 0x0A) or 0x20 <= b < 0x7F:
                out.append(chr(b))
            else:
                out.append(f"\\x{b:02x}")
            i += 1
            continue
        decoded = None
        for width in (2, 3, 4):
            chunk = raw[i : i + width]
            if len(chunk) < width:
                continue
            try:
                decoded = chunk.decode("utf-8")
            except UnicodeDecodeError:
                continue
            i += width
            break
        if decoded is not None:
            out.append(decoded)
        else:
            out.append(f"\\x{b:02x}")
            i += 1
    return "".join(out)


@dataclass(frozen=True)
class Verdict:
    """Finalized classification of one session with its supporting evidence."""

    session_id: str
    injection_passed: bool
    steal_response_flagged: bool
    timing_passed: bool
    median_latency_ms: Optional[int]
    label: ActorLabel
    evidence: Tuple[str, ...] = ()


_HOSTNAME_RE = re.compile(r"^[A-Za-z0-9]([A-Za-z0-9-]{0,61}[A-Za-z0-9])?$")


@dataclass(frozen=True)
class HoneypotPersonality:
    """Static deception profile: what machine the honeypot pretends to be."""

    hostname: str
    ssh_version_banner: str
    default_users: Tuple[Tuple[str, str], ...]
    filesystem_seed: str
    command_outputs: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.ssh_version_banner.startswith("SSH-2.0-"):
            raise ValueError("ssh_version_banner must begin with 'SSH-2.0-'")
        if not _HOSTNAME_RE.match(self.hostname):
            raise ValueError(f"invalid hostname: {self.hostname!r}")
