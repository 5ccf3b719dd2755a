"""Minimal SSH-2 server transport.

Speaks just enough of the protocol for real SSH clients to reach the fake
shell: curve25519-sha256 key exchange, an ssh-ed25519 host key, aes128-ctr
with hmac-sha2-256, password/none authentication, and one session channel
per connection (shell or exec). Anything fancier (rekeying, extra channels,
SFTP, agent/X11 forwarding) is refused or ignored.

Requires the `cryptography` package; the plain_tcp_test transport covers
every feature without it.
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
import os
import socket
import struct
from typing import Optional, Tuple

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from . import shell
from .model import EventKind, new_session_id, sanitize_payload

# message numbers (RFC 4253 / 4252 / 4254)
MSG_DISCONNECT = 1
MSG_IGNORE = 2
MSG_UNIMPLEMENTED = 3
MSG_DEBUG = 4
MSG_SERVICE_REQUEST = 5
MSG_SERVICE_ACCEPT = 6
MSG_KEXINIT = 20
MSG_NEWKEYS = 21
MSG_KEX_ECDH_INIT = 30
MSG_KEX_ECDH_REPLY = 31
MSG_USERAUTH_REQUEST = 50
MSG_USERAUTH_FAILURE = 51
MSG_USERAUTH_SUCCESS = 52
MSG_GLOBAL_REQUEST = 80
MSG_REQUEST_FAILURE = 82
MSG_CHANNEL_OPEN = 90
MSG_CHANNEL_OPEN_CONFIRMATION = 91
MSG_CHANNEL_OPEN_FAILURE = 92
MSG_CHANNEL_WINDOW_ADJUST = 93
MSG_CHANNEL_DATA = 94
MSG_CHANNEL_EOF = 96
MSG_CHANNEL_CLOSE = 97
MSG_CHANNEL_REQUEST = 98
MSG_CHANNEL_SUCCESS = 99
MSG_CHANNEL_FAILURE = 100

KEX_ALGO = b"curve25519-sha256,curve25519-sha256@libssh.org"
HOSTKEY_ALGO = b"ssh-ed25519"
CIPHER_ALGO = b"aes128-ctr"
MAC_ALGO = b"hmac-sha2-256"

LOCAL_WINDOW = 1 << 21
MAX_PACKET = 32768


class SshProtocolError(Exception):
    pass


def generate_host_key() -> Ed25519PrivateKey:
    return Ed25519PrivateKey.generate()


# -- wire primitives --------------------------------------------------------


def _string(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


def _mpint(n: int) -> bytes:
    if n == 0:
        return _string(b"")
    raw = n.to_bytes((n.bit_length() + 7) // 8, "big")
    if raw[0] & 0x80:
        raw = b"\x00" + raw
    return _string(raw)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def bytes(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise SshProtocolError("short packet")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def byte(self) -> int:
        return self.bytes(1)[0]

    def boolean(self) -> bool:
        return self.byte() != 0

    def uint32(self) -> int:
        return struct.unpack(">I", self.bytes(4))[0]

    def string(self) -> bytes:
        return self.bytes(self.uint32())


# -- transport --------------------------------------------------------------


class SshTransport:
    """One server-side SSH-2 connection over a TCP socket."""

    def __init__(self, conn: socket.socket, host_key: Ed25519PrivateKey,
                 version_banner: str, idle_timeout_s: int):
        self.conn = conn
        self.host_key = host_key
        self.server_version = version_banner.encode("ascii", "replace")
        conn.settimeout(idle_timeout_s)
        self._rbuf = b""
        self._seq_in = 0
        self._seq_out = 0
        self._encryptor = None
        self._decryptor = None
        self._mac_out: Optional[bytes] = None
        self._mac_in: Optional[bytes] = None
        self.session_id_hash: Optional[bytes] = None

    # raw socket helpers

    def _recv_exact(self, n: int) -> bytes:
        while len(self._rbuf) < n:
            try:
                chunk = self.conn.recv(65536)
            except socket.timeout:
                raise TimeoutError("session idle timeout")
            if not chunk:
                raise SshProtocolError("connection closed")
            self._rbuf += chunk
        out, self._rbuf = self._rbuf[:n], self._rbuf[n:]
        return out

    def _recv_line(self) -> bytes:
        while b"\n" not in self._rbuf:
            if len(self._rbuf) > 4096:
                raise SshProtocolError("oversized identification line")
            try:
                chunk = self.conn.recv(4096)
            except socket.timeout:
                raise TimeoutError("session idle timeout")
            if not chunk:
                raise SshProtocolError("connection closed during version exchange")
            self._rbuf += chunk
        line, self._rbuf = self._rbuf.split(b"\n", 1)
        return line.rstrip(b"\r")

    # packet layer

    def read_packet(self) -> bytes:
        if self._decryptor is None:
            header = self._recv_exact(4)
            length = struct.unpack(">I", header)[0]
            if not 5 <= length <= 256 * 1024:
                raise SshProtocolError("bad packet length")
            body = self._recv_exact(length)
            plain = header + body
        else:
            first = self._decryptor.update(self._recv_exact(16))
            length = struct.unpack(">I", first[:4])[0]
            if not 5 <= length <= 256 * 1024 or (length + 4) % 16 != 0:
                raise SshProtocolError("bad encrypted packet length")
            rest = self._decryptor.update(self._recv_exact(length + 4 - 16))
            plain = first + rest
            mac = self._recv_exact(32)
            expected = hmac_mod.new(
                self._mac_in, struct.pack(">I", self._seq_in) + plain, hashlib.sha256
            ).digest()
            if not hmac_mod.compare_digest(mac, expected):
                raise SshProtocolError("MAC verification failed")
        self._seq_in = (self._seq_in + 1) & 0xFFFFFFFF
        padding = plain[4]
        return plain[5 : len(plain) - padding]

    def write_packet(self, payload: bytes) -> None:
        block = 16 if self._encryptor is not None else 8
        padding = block - ((len(payload) + 5) % block)
        if padding < 4:
            padding += block
        plain = (
            struct.pack(">IB", len(payload) + padding + 1, padding)
            + payload
            + os.urandom(padding)
        )
        if self._encryptor is None:
            self.conn.sendall(plain)
        else:
            mac = hmac_mod.new(
                self._mac_out, struct.pack(">I", self._seq_out) + plain, hashlib.sha256
            ).digest()
            self.conn.sendall(self._encryptor.update(plain) + mac)
        self._seq_out = (self._seq_out + 1) & 0xFFFFFFFF

    # handshake

    def handshake(self) -> None:
        self.conn.sendall(self.server_version + b"\r\n")
        while True:
            line = self._recv_line()
            if line.startswith(b"SSH-"):
                client_version = line
                break
        if not (client_version.startswith(b"SSH-2.0") or client_version.startswith(b"SSH-1.99")):
            raise SshProtocolError(f"unsupported client version {client_version!r}")

        server_kexinit = self._build_kexinit()
        self.write_packet(server_kexinit)
        client_kexinit = self.read_packet()
        if client_kexinit[0] != MSG_KEXINIT:
            raise SshProtocolError("expected KEXINIT")
        self._check_kexinit(client_kexinit)

        packet = self.read_packet()
        if packet[0] != MSG_KEX_ECDH_INIT:
            raise SshProtocolError("expected KEX_ECDH_INIT")
        q_client = _Reader(packet[1:]).string()

        eph = X25519PrivateKey.generate()
        q_server = eph.public_key().public_bytes_raw()
        secret = eph.exchange(X25519PublicKey.from_public_bytes(q_client))
        k = int.from_bytes(secret, "big")

        pub_raw = self.host_key.public_key().public_bytes_raw()
        host_blob = _string(b"ssh-ed25519") + _string(pub_raw)

        h = hashlib.sha256(
            _string(client_version)
            + _string(self.server_version)
            + _string(client_kexinit)
            + _string(server_kexinit)
            + _string(host_blob)
            + _string(q_client)
            + _string(q_server)
            + _mpint(k)
        ).digest()
        self.session_id_hash = h
        signature = _string(b"ssh-ed25519") + _string(self.host_key.sign(h))

        self.write_packet(
            bytes([MSG_KEX_ECDH_REPLY])
            + _string(host_blob)
            + _string(q_server)
            + _string(signature)
        )
        self.write_packet(bytes([MSG_NEWKEYS]))
        packet = self.read_packet()
        if packet[0] != MSG_NEWKEYS:
            raise SshProtocolError("expected NEWKEYS")
        self._activate_keys(k, h)

    def _build_kexinit(self) -> bytes:
        lists = [
            KEX_ALGO, HOSTKEY_ALGO,
            CIPHER_ALGO, CIPHER_ALGO,
            MAC_ALGO, MAC_ALGO,
            b"none", b"none",
            b"", b"",
        ]
        return (
            bytes([MSG_KEXINIT])
            + os.urandom(16)
            + b"".join(_string(l) for l in lists)
            + b"\x00"
            + struct.pack(">I", 0)
        )

    def _check_kexinit(self, payload: bytes) -> None:
        r = _Reader(payload[1:])
        r.bytes(16)
        offered = [r.string().split(b",") for _ in range(10)]
        checks = [
            (offered[0], KEX_ALGO.split(b","), "kex"),
            (offered[1], [HOSTKEY_ALGO], "host key"),
            (offered[2], [CIPHER_ALGO], "cipher c2s"),
            (offered[3], [CIPHER_ALGO], "cipher s2c"),
            (offered[4], [MAC_ALGO], "mac c2s"),
            (offered[5], [MAC_ALGO], "mac s2c"),
        ]
        for client_list, ours, what in checks:
            if not any(algo in ours for algo in client_list):
                raise SshProtocolError(f"no common {what} algorithm")

    def _activate_keys(self, k: int, h: bytes) -> None:
        def derive(tag: bytes, size: int) -> bytes:
            out = hashlib.sha256(_mpint(k) + h + tag + self.session_id_hash).digest()
            while len(out) < size:
                out += hashlib.sha256(_mpint(k) + h + out).digest()
            return out[:size]

        iv_c2s = derive(b"A", 16)
        iv_s2c = derive(b"B", 16)
        key_c2s = derive(b"C", 16)
        key_s2c = derive(b"D", 16)
        self._mac_in = derive(b"E", 32)
        self._mac_out = derive(b"F", 32)
        self._decryptor = Cipher(
            algorithms.AES(key_c2s), modes.CTR(iv_c2s)
        ).decryptor()
        self._encryptor = Cipher(
            algorithms.AES(key_s2c), modes.CTR(iv_s2c)
        ).encryptor()

    def disconnect(self, reason: str = "bye") -> None:
        try:
            self.write_packet(
                bytes([MSG_DISCONNECT]) + struct.pack(">I", 11)
                + _string(reason.encode()) + _string(b"")
            )
        except OSError:
            pass


# -- channel adapter used by the shared session loop ------------------------


class SshChannel:
    """Presents the session channel as the line-oriented interface that
    HoneypotService.run_session expects."""

    def __init__(self, transport: SshTransport, channel_id: int,
                 peer_window: int, peer_max_packet: int,
                 max_line: int = shell.MAX_LINE_BYTES):
        self.transport = transport
        self.channel_id = channel_id
        self.peer_window = peer_window
        self.peer_max_packet = max(1024, min(peer_max_packet, MAX_PACKET))
        self.max_line = max_line
        self._buf = b""
        self._eof = False
        self._recv_since_adjust = 0

    def sendall(self, data: bytes) -> None:
        # interactive SSH clients expect CRLF line endings
        data = data.replace(b"\n", b"\r\n")
        for i in range(0, len(data), self.peer_max_packet):
            chunk = data[i : i + self.peer_max_packet]
            self.transport.write_packet(
                bytes([MSG_CHANNEL_DATA])
                + struct.pack(">I", self.channel_id)
                + _string(chunk)
            )

    def readline(self) -> Optional[bytes]:
        while True:
            idx = self._buf.find(b"\n")
            if idx < 0:
                idx = self._buf.find(b"\r")
            if idx >= 0:
                line, rest = self._buf[:idx], self._buf[idx + 1:]
                if rest[:1] == b"\n" and self._buf[idx:idx + 1] == b"\r":
                    rest = rest[1:]
                self._buf = rest
                return line[: self.max_line]
            if len(self._buf) > self.max_line:
                line, self._buf = self._buf[: self.max_line], b""
                return line
            if self._eof:
                if self._buf:
                    line, self._buf = self._buf, b""
                    return line[: self.max_line]
                return None
            if not self._pump():
                self._eof = True

    def _pump(self) -> bool:
        """Process one incoming packet; False when the peer is done."""
        try:
            payload = self.transport.read_packet()
        except SshProtocolError:
            return False
        msg = payload[0]
        if msg == MSG_CHANNEL_DATA:
            r = _Reader(payload[1:])
            r.uint32()
            data = r.string()
            self._buf += data
            self._recv_since_adjust += len(data)
            if self._recv_since_adjust > LOCAL_WINDOW // 2:
                self.transport.write_packet(
                    bytes([MSG_CHANNEL_WINDOW_ADJUST])
                    + struct.pack(">II", self.channel_id, self._recv_since_adjust)
                )
                self._recv_since_adjust = 0
            return True
        if msg == MSG_CHANNEL_WINDOW_ADJUST:
            r = _Reader(payload[1:])
            r.uint32()
            self.peer_window += r.uint32()
            return True
        if msg in (MSG_CHANNEL_EOF, MSG_CHANNEL_CLOSE, MSG_DISCONNECT):
            return False
        if msg in (MSG_IGNORE, MSG_DEBUG, MSG_UNIMPLEMENTED):
            return True
        if msg == MSG_CHANNEL_REQUEST:
            self._answer_channel_request(payload)
            return True
        if msg == MSG_GLOBAL_REQUEST:
            r = _Reader(payload[1:])
            r.string()
            if r.boolean():
                self.transport.write_packet(bytes([MSG_REQUEST_FAILURE]))
            return True
        if msg == MSG_CHANNEL_OPEN:
            _refuse_extra_channel(self.transport, payload)
            return True
        return True  # ignore anything else mid-session

    def _answer_channel_request(self, payload: bytes) -> None:
        r = _Reader(payload[1:])
        r.uint32()
        r.string()
        if r.boolean():
            self.transport.write_packet(
                bytes([MSG_CHANNEL_FAILURE]) + struct.pack(">I", self.channel_id)
            )

    def finish(self, exit_code: int = 0) -> None:
        try:
            self.transport.write_packet(
                bytes([MSG_CHANNEL_REQUEST]) + struct.pack(">I", self.channel_id)
                + _string(b"exit-status") + b"\x00" + struct.pack(">I", exit_code)
            )
            self.transport.write_packet(
                bytes([MSG_CHANNEL_EOF]) + struct.pack(">I", self.channel_id)
            )
            self.transport.write_packet(
                bytes([MSG_CHANNEL_CLOSE]) + struct.pack(">I", self.channel_id)
            )
        except OSError:
            return
        # let the client finish its side of the close handshake
        self.transport.conn.settimeout(2.0)
        try:
            while True:
                payload = self.transport.read_packet()
                if payload[0] in (MSG_CHANNEL_CLOSE, MSG_DISCONNECT):
                    return
        except (SshProtocolError, TimeoutError, OSError):
            return


def _refuse_extra_channel(transport: SshTransport, payload: bytes) -> None:
    # one shell channel per connection; extra channel requests are rejected
    r = _Reader(payload[1:])
    r.string()
    sender = r.uint32()
    transport.write_packet(
        bytes([MSG_CHANNEL_OPEN_FAILURE]) + struct.pack(">II", sender, 1)
        + _string(b"only one session channel is available") + _string(b"")
    )


# -- connection driver -------------------------------------------------------


def handle_ssh_connection(service, conn: socket.socket, addr) -> None:
    """Full lifecycle of one SSH connection against the honeypot service."""
    from .service import _Session  # local import to avoid a cycle

    peer = f"{addr[0]}:{addr[1]}"
    session = _Session(new_session_id(), peer)
    banner = service.config.ssh_version_banner or service.personality.ssh_version_banner
    transport = SshTransport(conn, service._ssh_host_key, banner,
                             service.config.session_idle_timeout_s)
    service.record(session, EventKind.CONNECT)
    try:
        transport.handshake()
        username = _userauth(service, session, transport)
        if username is None:
            transport.disconnect("too many authentication failures")
            service.record(session, EventKind.DISCONNECT, "auth failed")
            return
        _session_channel(service, session, transport, username)
    except TimeoutError:
        service.record(session, EventKind.DISCONNECT, "timeout")
    except (SshProtocolError, OSError, ValueError) as exc:
        service.record(session, EventKind.DISCONNECT, f"protocol error: {exc}")
    finally:
        if not session.events or session.events[-1].kind != EventKind.DISCONNECT:
            service.record(session, EventKind.DISCONNECT)
        service.finalize(session)


def _userauth(service, session, transport: SshTransport) -> Optional[str]:
    failures = 0
    while failures < 6:
        payload = transport.read_packet()
        msg = payload[0]
        if msg == MSG_SERVICE_REQUEST:
            name = _Reader(payload[1:]).string()
            if name != b"ssh-userauth":
                raise SshProtocolError(f"unexpected service {name!r}")
            transport.write_packet(bytes([MSG_SERVICE_ACCEPT]) + _string(name))
            continue
        if msg in (MSG_IGNORE, MSG_DEBUG):
            continue
        if msg != MSG_USERAUTH_REQUEST:
            raise SshProtocolError(f"unexpected message {msg} during auth")
        r = _Reader(payload[1:])
        username = sanitize_payload(r.string())
        r.string()  # service, always ssh-connection
        method = r.string()
        if method == b"password":
            r.boolean()
            password = sanitize_payload(r.string())
            if service.record_auth(session, username, password):
                transport.write_packet(bytes([MSG_USERAUTH_SUCCESS]))
                return username
        elif method == b"none":
            if service.record_auth(session, username, ""):
                transport.write_packet(bytes([MSG_USERAUTH_SUCCESS]))
                return username
        failures += 1
        transport.write_packet(
            bytes([MSG_USERAUTH_FAILURE]) + _string(b"password") + b"\x00"
        )
    return None


def _session_channel(service, session, transport: SshTransport, username: str) -> None:
    channel: Optional[SshChannel] = None
    while channel is None:
        payload = transport.read_packet()
        msg = payload[0]
        if msg in (MSG_IGNORE, MSG_DEBUG):
            continue
        if msg == MSG_GLOBAL_REQUEST:
            r = _Reader(payload[1:])
            r.string()
            if r.boolean():
                transport.write_packet(bytes([MSG_REQUEST_FAILURE]))
            continue
        if msg != MSG_CHANNEL_OPEN:
            raise SshProtocolError(f"unexpected message {msg} before channel open")
        r = _Reader(payload[1:])
        kind = r.string()
        sender = r.uint32()
        window = r.uint32()
        max_packet = r.uint32()
        if kind != b"session":
            transport.write_packet(
                bytes([MSG_CHANNEL_OPEN_FAILURE]) + struct.pack(">II", sender, 3)
                + _string(b"unknown channel type") + _string(b"")
            )
            continue
        transport.write_packet(
            bytes([MSG_CHANNEL_OPEN_CONFIRMATION])
            + struct.pack(">IIII", sender, sender, LOCAL_WINDOW, MAX_PACKET)
        )
        channel = SshChannel(transport, sender, window, max_packet)

    # wait for shell or exec before entering the loop
    while True:
        payload = transport.read_packet()
        msg = payload[0]
        if msg in (MSG_IGNORE, MSG_DEBUG):
            continue
        if msg == MSG_CHANNEL_DATA:
            r = _Reader(payload[1:])
            r.uint32()
            channel._buf += r.string()
            continue
        if msg in (MSG_CHANNEL_EOF, MSG_CHANNEL_CLOSE):
            service.record(session, EventKind.DISCONNECT, "channel closed")
            return
        if msg != MSG_CHANNEL_REQUEST:
            continue
        r = _Reader(payload[1:])
        r.uint32()
        request = r.string()
        want_reply = r.boolean()
        if request in (b"pty-req", b"env", b"shell", b"exec"):
            if want_reply:
                transport.write_packet(
                    bytes([MSG_CHANNEL_SUCCESS]) + struct.pack(">I", channel.channel_id)
                )
            if request == b"shell":
                service.run_session(session, channel, username)
                channel.finish(0)
                return
            if request == b"exec":
                command = r.string().decode("utf-8", errors="replace")
                service.run_exec(session, channel, username, command)
                channel.finish(0)
                service.record(session, EventKind.DISCONNECT, "exec complete")
                return
        elif want_reply:
            transport.write_packet(
                bytes([MSG_CHANNEL_FAILURE]) + struct.pack(">I", channel.channel_id)
            )
