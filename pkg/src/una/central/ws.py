"""Single-port transport front end: NDJSON over TCP, WebSocket, and static files.

The service listens on one port.  A connection whose first bytes look like
an HTTP GET is either upgraded to a WebSocket (path ``/ws``) or served a
static file from the configured directory; anything else is treated as a
raw newline-delimited JSON client.  Both live transports expose the same
line-oriented interface, so the protocol layer never cares which one a
client arrived on.
"""

from __future__ import annotations

import base64
import hashlib
import socket
import struct
from pathlib import Path
from typing import Optional

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
MAX_HEAD = 32768
MAX_FRAME = 1 << 24

CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".map": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}


class TcpLineTransport:
    """One JSON message per ``\\n``-terminated line over a plain socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._reader = sock.makefile("rb")

    def send_line(self, line: str) -> None:
        self.sock.sendall(line.encode("utf-8") + b"\n")

    def recv_line(self) -> Optional[str]:
        raw = self._reader.readline()
        if not raw:
            return None
        return raw.decode("utf-8", errors="replace").rstrip("\r\n")

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class WebSocketTransport:
    """One JSON message per text frame. Server side, RFC 6455 subset."""

    def __init__(self, sock: socket.socket, leftover: bytes = b""):
        self.sock = sock
        self._buf = bytearray(leftover)

    # -- byte plumbing

    def _fill(self, n: int) -> bool:
        while len(self._buf) < n:
            chunk = self.sock.recv(65536)
            if not chunk:
                return False
            self._buf.extend(chunk)
        return True

    def _take(self, n: int) -> bytes:
        out = bytes(self._buf[:n])
        del self._buf[:n]
        return out

    # -- frames

    def _send_frame(self, opcode: int, payload: bytes) -> None:
        head = bytearray([0x80 | opcode])
        n = len(payload)
        if n < 126:
            head.append(n)
        elif n < 65536:
            head.append(126)
            head.extend(struct.pack(">H", n))
        else:
            head.append(127)
            head.extend(struct.pack(">Q", n))
        self.sock.sendall(bytes(head) + payload)

    def _read_frame(self) -> Optional[tuple[int, bytes]]:
        if not self._fill(2):
            return None
        b0, b1 = self._take(2)
        opcode = b0 & 0x0F
        masked = bool(b1 & 0x80)
        length = b1 & 0x7F
        if length == 126:
            if not self._fill(2):
                return None
            length = struct.unpack(">H", self._take(2))[0]
        elif length == 127:
            if not self._fill(8):
                return None
            length = struct.unpack(">Q", self._take(8))[0]
        if length > MAX_FRAME:
            raise ValueError(f"frame too large: {length}")
        key = b""
        if masked:
            if not self._fill(4):
                return None
            key = self._take(4)
        if not self._fill(length):
            return None
        payload = self._take(length)
        if masked:
            payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
        return opcode, payload

    # -- line interface

    def send_line(self, line: str) -> None:
        self._send_frame(0x1, line.encode("utf-8"))

    def recv_line(self) -> Optional[str]:
        message = bytearray()
        while True:
            frame = self._read_frame()
            if frame is None:
                return None
            opcode, payload = frame
            if opcode == 0x8:  # close
                try:
                    self._send_frame(0x8, payload[:2])
                except OSError:
                    pass
                return None
            if opcode == 0x9:  # ping
                self._send_frame(0xA, payload)
                continue
            if opcode == 0xA:  # pong
                continue
            message.extend(payload)
            if opcode in (0x0, 0x1, 0x2):
                # deliver on FIN; continuation frames accumulate above
                return message.decode("utf-8", errors="replace")

    def close(self) -> None:
        try:
            self._send_frame(0x8, b"")
        except OSError:
            pass
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def _read_head(sock: socket.socket) -> tuple[bytes, bytes]:
    """Read up to the blank line ending the HTTP head; returns (head, rest)."""
    data = bytearray()
    while b"\r\n\r\n" not in data:
        if len(data) > MAX_HEAD:
            raise ValueError("request head too large")
        chunk = sock.recv(4096)
        if not chunk:
            break
        data.extend(chunk)
    head, _, rest = bytes(data).partition(b"\r\n\r\n")
    return head, rest


def _parse_head(head: bytes) -> tuple[str, str, dict[str, str]]:
    lines = head.decode("latin-1").split("\r\n")
    parts = lines[0].split(" ")
    method, path = (parts[0], parts[1]) if len(parts) >= 2 else ("", "/")
    headers: dict[str, str] = {}
    for line in lines[1:]:
        name, sep, value = line.partition(":")
        if sep:
            headers[name.strip().lower()] = value.strip()
    return method, path, headers


def _accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + WS_GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def _serve_static(sock: socket.socket, path: str, static_dir: Optional[Path]) -> None:
    if path in ("", "/"):
        path = "/index.html"
    rel = path.lstrip("/").split("?", 1)[0]
    body, status, ctype = b"not found", "404 Not Found", "text/plain"
    if static_dir is not None and ".." not in rel.split("/"):
        candidate = static_dir / rel
        if candidate.is_file():
            body = candidate.read_bytes()
            status = "200 OK"
            ctype = CONTENT_TYPES.get(candidate.suffix, "application/octet-stream")
    response = (
        f"HTTP/1.1 {status}\r\n"
        f"Content-Type: {ctype}\r\n"
        f"Content-Length: {len(body)}\r\n"
        f"Connection: close\r\n\r\n"
    ).encode("ascii") + body
    try:
        sock.sendall(response)
    finally:
        sock.close()


def accept_transport(sock: socket.socket, static_dir: Optional[Path] = None,
                     sniff_timeout: float = 0.25):
    """Classify a fresh connection.

    Returns a line transport for protocol clients (raw TCP or WebSocket at
    /ws), or None when the connection was an HTTP request served and closed
    here.  HTTP clients send their request immediately, so a connection
    with nothing to say within the sniff window is a raw protocol client
    waiting for the server handshake.
    """
    sock.settimeout(sniff_timeout)
    try:
        preamble = sock.recv(4, socket.MSG_PEEK)
    except TimeoutError:
        preamble = b""
    finally:
        sock.settimeout(None)
    if preamble[:4] not in (b"GET ", b"HEAD"):
        return TcpLineTransport(sock)
    head, rest = _read_head(sock)
    method, path, headers = _parse_head(head)
    upgrading = (headers.get("upgrade", "").lower() == "websocket"
                 and "sec-websocket-key" in headers)
    if upgrading and path.split("?", 1)[0] == "/ws":
        accept = _accept_key(headers["sec-websocket-key"])
        sock.sendall((
            "HTTP/1.1 101 Switching Protocols\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Accept: {accept}\r\n\r\n"
        ).encode("ascii"))
        return WebSocketTransport(sock, leftover=rest)
    _serve_static(sock, path, static_dir)
    return None
