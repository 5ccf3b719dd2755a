"""Network front-end: accepts connections, authenticates permissively,
presents the injected banner, and pumps the per-session line loop.

Two transports share one session loop: `ssh` speaks real SSH-2 (see
sshwire.py), `plain_tcp_test` is a raw line protocol with a one-line AUTH
handshake so the whole detection stack is testable without cryptography.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from . import injection, shell
from .detector import DetectorConfig, encode_verdict, replay_session
from .injection import StageMachine, TemplateStore
from .model import (
    EventKind,
    SessionEvent,
    Stage,
    Verdict,
    new_session_id,
    sanitize_payload,
)
from .recorder import EventLog

log = logging.getLogger("agent_snare.service")

MAX_AUTH_ATTEMPTS = 5


@dataclass
class ListenerConfig:
    bind_address: str = "0.0.0.0:2222"
    transport_mode: str = "plain_tcp_test"  # or "ssh"
    ssh_version_banner: str = ""  # empty: use the personality's banner
    max_sessions: int = 1024
    session_idle_timeout_s: int = 300
    auth_policy: str = "accept_all"  # or "credential_list"
    credentials: Tuple[Tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if self.max_sessions < 1:
            raise ValueError("max_sessions must be >= 1")
        if self.session_idle_timeout_s < 1:
            raise ValueError("session_idle_timeout_s must be >= 1")
        if self.transport_mode not in ("ssh", "plain_tcp_test"):
            raise ValueError(f"unknown transport_mode {self.transport_mode!r}")
        if self.auth_policy not in ("accept_all", "credential_list"):
            raise ValueError(f"unknown auth_policy {self.auth_policy!r}")

    @property
    def host_port(self) -> Tuple[str, int]:
        host, _, port = self.bind_address.rpartition(":")
        return host or "0.0.0.0", int(port)


def authenticate(policy: str, credentials: Tuple[Tuple[str, str], ...],
                 username: str, password: str) -> bool:
    if policy == "accept_all":
        return True
    return (username, password) in credentials


class SocketLineChannel:
    """Line-oriented view of a TCP socket with idle timeout and length cap."""

    def __init__(self, conn: socket.socket, idle_timeout_s: int,
                 max_line: int = shell.MAX_LINE_BYTES):
        self.conn = conn
        self.max_line = max_line
        self._buf = b""
        self._eof = False
        conn.settimeout(idle_timeout_s)

    def sendall(self, data: bytes) -> None:
        self.conn.sendall(data)

    def readline(self) -> Optional[bytes]:
        """Next line without its terminator; None on EOF.

        Lines longer than max_line are truncated and the overflow up to the
        next terminator is discarded. Raises TimeoutError when idle too long.
        """
        while True:
            idx = self._buf.find(b"\n")
            if idx >= 0:
                line, self._buf = self._buf[:idx], self._buf[idx + 1:]
                return line.rstrip(b"\r")[: self.max_line]
            if len(self._buf) > self.max_line:
                line, self._buf = self._buf[: self.max_line], b""
                # drop the remainder of the oversized line
                self._discard_until_newline()
                return line
            if self._eof:
                if self._buf:
                    line, self._buf = self._buf, b""
                    return line[: self.max_line]
                return None
            try:
                chunk = self.conn.recv(65536)
            except socket.timeout:
                raise TimeoutError("session idle timeout")
            if not chunk:
                self._eof = True
                continue
            self._buf += chunk

    def _discard_until_newline(self) -> None:
        while not self._eof:
            idx = self._buf.find(b"\n")
            if idx >= 0:
                self._buf = self._buf[idx + 1:]
                return
            self._buf = b""
            try:
                chunk = self.conn.recv(65536)
            except socket.timeout:
                raise TimeoutError("session idle timeout")
            if not chunk:
                self._eof = True
                return
            self._buf = chunk

    def close(self) -> None:
        try:
            self.conn.close()
        except OSError:
            pass


class _Session:
    """Mutable per-connection record; owned by one handler thread."""

    def __init__(self, session_id: str, peer: str):
        self.session_id = session_id
        self.peer = peer
        self.events: List[SessionEvent] = []
        self.last_ts = 0


class HoneypotService:
    def __init__(self, config: ListenerConfig, recorder: EventLog,
                 personality=None, filesystem=None,
                 templates: Optional[TemplateStore] = None,
                 detector_cfg: Optional[DetectorConfig] = None,
                 verdict_path: Optional[str] = None):
        self.config = config
        self.recorder = recorder
        self.personality = personality or shell.default_personality()
        self.filesystem = filesystem or shell.default_filesystem()
        self.templates = templates if templates is not None else injection.default_templates()
        self.detector_cfg = detector_cfg or DetectorConfig()
        self.verdict_path = verdict_path
        self.verdicts: Dict[str, Verdict] = {}

        self._listener: Optional[socket.socket] = None
        self._accept_thread: Optional[threading.Thread] = None
        self._stop = threading.Event()
        self._active = 0
        self._lock = threading.Lock()
        self._verdict_lock = threading.Lock()
        self._ssh_host_key = None

    # -- lifecycle ---------------------------------------------------------

    @property
    def port(self) -> int:
        assert self._listener is not None
        return self._listener.getsockname()[1]

    def start(self) -> None:
        host, port = self.config.host_port
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.bind((host, port))
        except OSError as exc:
            sock.close()
            raise RuntimeError(f"cannot bind {host}:{port}: {exc}") from exc
        sock.listen(64)
        sock.settimeout(0.5)
        self._listener = sock
        if self.config.transport_mode == "ssh":
            from . import sshwire
            self._ssh_host_key = sshwire.generate_host_key()
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        log.info("listening on %s:%d (%s mode)", host, self.port, self.config.transport_mode)

    def serve_forever(self) -> None:
        if self._listener is None:
            self.start()
        try:
            while not self._stop.is_set():
                time.sleep(0.2)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def stop(self) -> None:
        self._stop.set()
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=5)
        if self._listener is not None:
            self._listener.close()

    def _accept_loop(self) -> None:
        assert self._listener is not None
        while not self._stop.is_set():
            try:
                conn, addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            with self._lock:
                if self._active >= self.config.max_sessions:
                    conn.close()  # refused at accept: no events recorded
                    continue
                self._active += 1
            thread = threading.Thread(
                target=self._handle_connection, args=(conn, addr), daemon=True
            )
            thread.start()

    def _handle_connection(self, conn: socket.socket, addr) -> None:
        try:
            if self.config.transport_mode == "ssh":
                from . import sshwire
                sshwire.handle_ssh_connection(self, conn, addr)
            else:
                self._handle_plain(conn, addr)
        except Exception:
            log.exception("session handler failed for %s", addr)
        finally:
            try:
                conn.close()
            except OSError:
                pass
            with self._lock:
                self._active -= 1

    # -- event plumbing ----------------------------------------------------

    def _now_ms(self, session: _Session) -> int:
        ts = int(time.time() * 1000)
        if ts < session.last_ts:
            ts = session.last_ts
        session.last_ts = ts
        return ts

    def record(self, session: _Session, kind: EventKind, payload: str = "",
               injection_id: Optional[str] = None,
               stage: Optional[Stage] = None) -> SessionEvent:
        event = SessionEvent(
            session_id=session.session_id,
            ts_ms=self._now_ms(session),
            kind=kind,
            peer=session.peer,
            payload=payload,
            injection_id=injection_id,
            stage=stage,
        )
        session.events.append(event)
        self.recorder.append(event)
        return event

    def finalize(self, session: _Session) -> Verdict:
        verdict = replay_session(
            session.session_id, session.events, self.templates, self.detector_cfg
        )
        with self._verdict_lock:
            self.verdicts[session.session_id] = verdict
            if self.verdict_path:
                with open(self.verdict_path, "a", encoding="utf-8") as fh:
                    fh.write(encode_verdict(verdict) + "\n")
        return verdict

    # -- plain transport ---------------------------------------------------

    def _handle_plain(self, conn: socket.socket, addr) -> None:
        peer = f"{addr[0]}:{addr[1]}"
        session = _Session(new_session_id(), peer)
        channel = SocketLineChannel(conn, self.config.session_idle_timeout_s)
        self.record(session, EventKind.CONNECT)
        try:
            username = self._plain_auth(session, channel)
            if username is None:
                self.record(session, EventKind.DISCONNECT, "auth failed")
                return
            self.run_session(session, channel, username)
        except TimeoutError:
            self.record(session, EventKind.DISCONNECT, "timeout")
        except OSError:
            self.record(session, EventKind.DISCONNECT, "transport error")
        finally:
            if not session.events or session.events[-1].kind != EventKind.DISCONNECT:
                self.record(session, EventKind.DISCONNECT)
            self.finalize(session)
            channel.close()

    def _plain_auth(self, session: _Session, channel: SocketLineChannel) -> Optional[str]:
        for _ in range(MAX_AUTH_ATTEMPTS):
            raw = channel.readline()
            if raw is None:
                return None
            text = sanitize_payload(raw)
            parts = text.split(" ", 2)
            if len(parts) == 3 and parts[0] == "AUTH":
                username, password = parts[1], parts[2]
            else:
                username, password = text, ""
            ok = self.record_auth(session, username, password)
            if ok:
                channel.sendall(b"OK\n")
                return username
            channel.sendall(b"NO\n")
        return None

    def record_auth(self, session: _Session, username: str, password: str) -> bool:
        """Apply the auth policy and record the attempt either way."""
        ok = authenticate(self.config.auth_policy, self.config.credentials,
                          username, password)
        self.record(
            session, EventKind.AUTH_ATTEMPT,
            f"user={username} password={password} result={'accepted' if ok else 'rejected'}",
        )
        return ok

    # -- shared session loop ----------------------------------------------

    def _prompt(self, state: shell.ShellState) -> str:
        cwd = state.cwd
        for user, home in state.personality.default_users:
            if user == state.username and cwd.startswith(home):
                cwd = "~" + cwd[len(home):]
                break
        mark = "#" if state.username == "root" else "$"
        return f"{state.username}@{state.personality.hostname}:{cwd}{mark} "

    def _send_output(self, session: _Session, channel, text: str,
                     emitted: Optional[injection.InjectionTemplate],
                     machine: StageMachine) -> None:
        channel.sendall(text.encode("utf-8", errors="replace"))
        self.record(session, EventKind.OUTPUT, text)
        if emitted is not None:
            self.record(
                session, EventKind.INJECTION_EMITTED,
                emitted.render(machine.nonce),
                injection_id=emitted.id, stage=Stage(emitted.stage),
            )

    def run_session(self, session: _Session, channel, username: str) -> None:
        """Interactive line loop over an authenticated channel."""
        state = shell.initial_state(self.personality, self.filesystem, username)
        machine = StageMachine()

        banner = injection.render_banner(
            self.personality, machine, self.templates, session.last_ts
        )
        emitted = None
        if machine.hijack_template_id is not None:
            emitted = self.templates.by_id(machine.hijack_template_id)
        self._send_output(session, channel, banner + self._prompt(state), emitted, machine)

        while True:
            raw = channel.readline()
            if raw is None:
                self.record(session, EventKind.DISCONNECT)
                return
            line = sanitize_payload(raw)
            self.record(session, EventKind.INPUT, line)

            if not line.strip():
                # prompt re-display only; no emulator call
                self._send_output(session, channel, self._prompt(state), None, machine)
                continue

            result, state = shell.execute(state, line)
            text, template = injection.splice(result, machine, self.templates,
                                              session.last_ts)
            if result.terminate:
                self._send_output(session, channel, "logout\n", template, machine)
                self.record(session, EventKind.DISCONNECT, "client exit")
                return
            self._send_output(session, channel, text + self._prompt(state),
                              template, machine)
            if template is None:
                # an input cannot be a response to an injection emitted after it
                self._match_input(machine, line)

    def run_exec(self, session: _Session, channel, username: str, command: str) -> None:
        """Non-interactive exec request: one command, injected output, done."""
        state = shell.initial_state(self.personality, self.filesystem, username)
        machine = StageMachine()
        line = sanitize_payload(command.encode("utf-8", errors="replace"))
        self.record(session, EventKind.INPUT, line)
        result, state = shell.execute(state, line)
        text, template = injection.splice(result, machine, self.templates,
                                          session.last_ts)
        self._send_output(session, channel, text, template, machine)
        if template is None:
            self._match_input(machine, line)

    def _match_input(self, machine: StageMachine, line: str) -> None:
        if machine.state == "hijack_emitted" and machine.hijack_template_id:
            template = self.templates.by_id(machine.hijack_template_id)
            if template is not None:
                mr = injection.match_hijack(machine, template, line)
                if mr.matched:
                    machine.advance("hijack_passed")
                    machine.matched_excerpt = mr.matched_text
        elif machine.state == "steal_emitted":
            mr = injection.flag_steal_response(line)
            if mr.matched:
                machine.advance("steal_flagged")
