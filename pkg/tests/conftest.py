import socket
import time

import pytest

from agent_snare.detector import DetectorConfig
from agent_snare.recorder import EventLog
from agent_snare.service import HoneypotService, ListenerConfig


class PlainClient:
    """Minimal scripted client for the plain test protocol."""

    def __init__(self, port, host="127.0.0.1", timeout=10.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self._buf = b""

    def send_line(self, text):
        if isinstance(text, str):
            text = text.encode("utf-8")
        self.sock.sendall(text + b"\n")

    def send_raw(self, data: bytes):
        self.sock.sendall(data)

    def read_line(self, timeout=5.0):
        deadline = time.monotonic() + timeout
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            self.sock.settimeout(remaining)
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                return None
            if not chunk:
                return None
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line.decode("utf-8", errors="replace")

    def drain(self, quiet=0.15):
        data = self._buf
        self._buf = b""
        while True:
            self.sock.settimeout(quiet)
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                break
            except OSError:
                break
            if not chunk:
                break
            data += chunk
        return data.decode("utf-8", errors="replace")

    def auth(self, user="root", password="123456"):
        self.send_line(f"AUTH {user} {password}")
        return self.read_line()

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


@pytest.fixture
def make_service(tmp_path):
    """Factory for an in-process honeypot on an ephemeral port."""
    services = []

    def factory(**overrides):
        config = ListenerConfig(
            bind_address="127.0.0.1:0",
            transport_mode=overrides.pop("transport_mode", "plain_tcp_test"),
            max_sessions=overrides.pop("max_sessions", 16),
            session_idle_timeout_s=overrides.pop("session_idle_timeout_s", 30),
            auth_policy=overrides.pop("auth_policy", "accept_all"),
            credentials=overrides.pop("credentials", ()),
        )
        n = len(services)
        service = HoneypotService(
            config,
            EventLog(str(tmp_path / f"events{n}.jsonl")),
            detector_cfg=overrides.pop("detector_cfg", DetectorConfig()),
            verdict_path=str(tmp_path / f"verdicts{n}.jsonl"),
            **overrides,
        )
        service.start()
        services.append(service)
        return service

    yield factory
    for service in services:
        service.stop()
        service.recorder.close()


def wait_for(predicate, timeout=8.0, interval=0.05):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(interval)
    return False
