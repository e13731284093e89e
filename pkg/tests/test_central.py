"""Wire protocol, service behavior, and the placement benchmark."""

import base64
import csv
import hashlib
import json
import socket
import struct
import threading
import time

import pytest

from una.arena import NoiseConfig
from una.central.benchmark import run_placement_benchmark, write_cdf_csv
from una.central.protocol import (
    PROTOCOL_VERSION, ProtocolError, WireMessage, handshake_line,
    is_version_line, parse_line,
)
from una.central.service import CentralService, audit_network_separation
from una.geometry import Pose2D
from una.mesh import LinkModel, MeshNetwork


# ---------------------------------------------------------------- protocol


def test_message_roundtrip():
    msg = WireMessage(kind="MANUAL_CMD", id=7,
                      payload={"drone": "d1", "goal": [0.1, 0.2]},
                      sender="ui")
    back = parse_line(msg.to_json())
    assert back == msg


def test_parse_rejects_garbage():
    for line, fragment in [
        ("not json", "not valid JSON"),
        ("[1, 2]", "JSON object"),
        ('{"kind": "WARP", "id": 1}', "unknown kind"),
        ('{"kind": "ACK"}', "id must be an integer"),
        ('{"kind": "ACK", "id": true}', "id must be an integer"),
        ('{"kind": "ACK", "id": 1, "payload": 5}', "payload must be"),
    ]:
        with pytest.raises(ProtocolError, match=fragment):
            parse_line(line)


def test_version_line_detection():
    assert is_version_line(handshake_line()) == PROTOCOL_VERSION
    assert is_version_line('{"version": "una/99"}') == "una/99"
    assert is_version_line('{"kind": "ACK", "id": 1}') is None
    assert is_version_line("junk") is None


# ---------------------------------------------------------------- service


class Client:
    """Blocking line client for tests."""

    def __init__(self, port: int):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=10)
        self.reader = self.sock.makefile("r", encoding="utf-8")
        self.handshake = json.loads(self.reader.readline())

    def send(self, obj) -> None:
        line = obj if isinstance(obj, str) else json.dumps(obj)
        self.sock.sendall(line.encode("utf-8") + b"\n")

    def recv(self) -> dict:
        line = self.reader.readline()
        if not line:
            raise EOFError
        return json.loads(line)

    def recv_kind(self, kind: str, limit: int = 200) -> dict:
        for _ in range(limit):
            msg = self.recv()
            if msg["kind"] == kind:
                return msg
        raise AssertionError(f"no {kind} within {limit} messages")

    def close(self):
        self.sock.close()


@pytest.fixture()
def service():
    svc = CentralService(port=0)
    yield svc
    svc.stop()


def test_handshake_is_first_line(service):
    client = Client(service.port)
    assert client.handshake == {"version": PROTOCOL_VERSION}
    client.close()


def test_silent_client_receives_stream(service):
    client = Client(service.port)
    deadline = time.time() + 5
    while service.client_count() == 0 and time.time() < deadline:
        time.sleep(0.01)
    for i in range(5):
        service.publish_state({"tick": i})
    got = [client.recv() for _ in range(5)]
    assert [m["payload"]["tick"] for m in got] == [0, 1, 2, 3, 4]
    assert all(m["kind"] == "STATE_UPDATE" for m in got)
    ids = [m["id"] for m in got]
    assert ids == sorted(ids) and len(set(ids)) == 5
    client.close()


def test_malformed_line_faults_but_keeps_connection(service):
    client = Client(service.port)
    client.send("{broken")
    fault = client.recv_kind("FAULT")
    assert "JSON" in fault["payload"]["reason"]
    client.send({"kind": "EMERGENCY_STOP", "id": 1})
    deadline = time.time() + 5
    while not service.drain_events():
        assert time.time() < deadline, "event never arrived after fault"
        time.sleep(0.01)
    client.close()


def test_version_mismatch_refused(service):
    client = Client(service.port)
    client.send({"version": "una/2"})
    fault = client.recv_kind("FAULT")
    assert "una/2" in fault["payload"]["reason"]
    assert client.reader.readline() == ""  # connection closed
    client.close()


def test_client_ids_must_increase(service):
    client = Client(service.port)
    client.send({"kind": "EMERGENCY_STOP", "id": 5})
    client.send({"kind": "EMERGENCY_STOP", "id": 5})
    fault = client.recv_kind("FAULT")
    assert "not greater" in fault["payload"]["reason"]
    deadline = time.time() + 5
    events = []
    while len(events) < 1 and time.time() < deadline:
        events += service.drain_events()
        time.sleep(0.01)
    assert len(events) == 1, "duplicate id must not become an event"
    client.close()


def test_clients_do_not_send_state_updates(service):
    client = Client(service.port)
    client.send({"kind": "STATE_UPDATE", "id": 1, "payload": {}})
    fault = client.recv_kind("FAULT")
    assert "STATE_UPDATE" in fault["payload"]["reason"]
    client.close()


def test_events_carry_client_for_replies(service):
    client = Client(service.port)
    client.send({"kind": "FRAME_REQUEST", "id": 3})
    deadline = time.time() + 5
    events = []
    while not events and time.time() < deadline:
        events = service.drain_events()
        time.sleep(0.01)
    event = events[0]
    assert event.message.kind == "FRAME_REQUEST"
    service.reply_ack(event.client, {"for": event.message.id, "ok": True})
    ack = client.recv_kind("ACK")
    assert ack["payload"] == {"for": 3, "ok": True}
    service.reply_fault(event.client, 4, "nope")
    fault = client.recv_kind("FAULT")
    assert fault["payload"] == {"for": 4, "reason": "nope"}
    client.close()


def test_broadcast_fault_reaches_every_client(service):
    a, b = Client(service.port), Client(service.port)
    deadline = time.time() + 5
    while service.client_count() < 2 and time.time() < deadline:
        time.sleep(0.01)
    service.broadcast_fault("d1", "lost_tracking")
    for client in (a, b):
        fault = client.recv_kind("FAULT")
        assert fault["payload"] == {"drone": "d1", "fault": "lost_tracking"}
        client.close()


def test_ids_are_per_connection(service):
    a, b = Client(service.port), Client(service.port)
    deadline = time.time() + 5
    while service.client_count() < 2 and time.time() < deadline:
        time.sleep(0.01)
    service.publish_state({"tick": 0})
    ida = a.recv_kind("STATE_UPDATE")["id"]
    idb = b.recv_kind("STATE_UPDATE")["id"]
    assert ida == idb == 1  # each connection counts from its own stream
    a.close()
    b.close()


# ---------------------------------------------------------------- websocket


class WsConn:
    """Socket plus whatever frame bytes arrived glued to the 101 response."""

    def __init__(self, sock: socket.socket, pending: bytes):
        self._sock = sock
        self._pending = pending

    def recv(self, n: int) -> bytes:
        if self._pending:
            out, self._pending = self._pending[:n], self._pending[n:]
            return out
        return self._sock.recv(n)

    def sendall(self, data: bytes) -> None:
        self._sock.sendall(data)

    def close(self) -> None:
        self._sock.close()


def ws_handshake(port: int, path: str = "/ws") -> WsConn:
    sock = socket.create_connection(("127.0.0.1", port), timeout=10)
    key = base64.b64encode(b"0123456789abcdef").decode()
    sock.sendall((
        f"GET {path} HTTP/1.1\r\nHost: x\r\nUpgrade: websocket\r\n"
        f"Connection: Upgrade\r\nSec-WebSocket-Key: {key}\r\n"
        f"Sec-WebSocket-Version: 13\r\n\r\n").encode())
    head = b""
    while b"\r\n\r\n" not in head:
        head += sock.recv(4096)
    head, leftover = head.split(b"\r\n\r\n", 1)
    assert b"101" in head.split(b"\r\n", 1)[0]
    expected = base64.b64encode(hashlib.sha1(
        (key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11").encode()).digest())
    assert expected in head
    return WsConn(sock, leftover)


def ws_send_text(sock: WsConn, text: str) -> None:
    payload = text.encode()
    mask = b"\x11\x22\x33\x44"
    masked = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    length = len(payload)
    if length < 126:
        head = struct.pack(">BB", 0x81, 0x80 | length)
    else:
        head = struct.pack(">BBH", 0x81, 0x80 | 126, length)
    sock.sendall(head + mask + masked)


def ws_recv_text(sock: WsConn) -> str:
    def read(n):
        buf = b""
        while len(buf) < n:
            chunk = sock.recv(n - len(buf))
            if not chunk:
                raise EOFError
            buf += chunk
        return buf

    b0, b1 = read(2)
    length = b1 & 0x7F
    if length == 126:
        length = struct.unpack(">H", read(2))[0]
    elif length == 127:
        length = struct.unpack(">Q", read(8))[0]
    assert b0 & 0x0F == 0x1
    return read(length).decode()


def test_websocket_carries_the_same_protocol(service):
    sock = ws_handshake(service.port)
    hello = json.loads(ws_recv_text(sock))
    assert hello == {"version": PROTOCOL_VERSION}
    ws_send_text(sock, json.dumps({"kind": "EMERGENCY_STOP", "id": 1}))
    deadline = time.time() + 5
    events = []
    while not events and time.time() < deadline:
        events = service.drain_events()
        time.sleep(0.01)
    assert events[0].message.kind == "EMERGENCY_STOP"
    service.publish_state({"tick": 9})
    while True:
        msg = json.loads(ws_recv_text(sock))
        if msg["kind"] == "STATE_UPDATE":
            assert msg["payload"]["tick"] == 9
            break
    sock.close()


def test_static_files_served(tmp_path):
    (tmp_path / "index.html").write_text("<h1>panel</h1>")
    svc = CentralService(port=0, static_dir=tmp_path)
    try:
        sock = socket.create_connection(("127.0.0.1", svc.port), timeout=10)
        sock.sendall(b"GET / HTTP/1.1\r\nHost: x\r\n\r\n")
        data = b""
        while True:
            chunk = sock.recv(4096)
            if not chunk:
                break
            data += chunk
        assert b"200 OK" in data and b"<h1>panel</h1>" in data
        sock2 = socket.create_connection(("127.0.0.1", svc.port), timeout=10)
        sock2.sendall(b"GET /missing.js HTTP/1.1\r\nHost: x\r\n\r\n")
        data2 = b""
        while True:
            chunk = sock2.recv(4096)
            if not chunk:
                break
            data2 += chunk
        assert b"404" in data2
    finally:
        svc.stop()


def test_path_traversal_blocked(tmp_path):
    (tmp_path / "index.html").write_text("ok")
    svc = CentralService(port=0, static_dir=tmp_path)
    try:
        sock = socket.create_connection(("127.0.0.1", svc.port), timeout=10)
        sock.sendall(b"GET /../secrets HTTP/1.1\r\nHost: x\r\n\r\n")
        data = b""
        while True:
            chunk = sock.recv(4096)
            if not chunk:
                break
            data += chunk
        assert b"404" in data
    finally:
        svc.stop()


# ---------------------------------------------------------------- benchmark


def test_benchmark_record_complete_and_deterministic():
    a = run_placement_benchmark(trials=3, noise=NoiseConfig.zero(), seed=11)
    b = run_placement_benchmark(trials=3, noise=NoiseConfig.zero(), seed=11)
    assert a == b
    assert [t.trial for t in a.trials] == [0, 1, 2]
    assert all(t.error_m is not None and t.error_m >= 0 for t in a.trials)
    assert len(a.config_digest) == 12


def test_benchmark_zero_noise_error_bound():
    record = run_placement_benchmark(trials=2, noise=NoiseConfig.zero(),
                                     seed=5)
    pixel = 1.25 / 250
    for t in record.trials:
        assert not t.timed_out
        assert t.error_m <= 0.05 + pixel


def test_benchmark_timeouts_counted_but_excluded():
    record = run_placement_benchmark(trials=2, noise=NoiseConfig.zero(),
                                     seed=2, budget_ticks=10)
    assert all(t.timed_out for t in record.trials)
    assert record.errors() == []
    assert len(record.trials) == 2


def test_cdf_csv_layout(tmp_path):
    record = run_placement_benchmark(trials=3, noise=NoiseConfig.zero(),
                                     seed=11)
    path = tmp_path / "cdf.csv"
    write_cdf_csv(record, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["trial", "error_m"]
    trial_rows = rows[1:4]
    assert [r[0] for r in trial_rows] == ["0", "1", "2"]
    assert rows[4] == ["cdf_x", "cdf_y"]
    cdf_rows = [(float(x), float(y)) for x, y in rows[5:]]
    assert cdf_rows[-1][1] == 1.0
    assert all(a[0] <= b[0] and a[1] < b[1]
               for a, b in zip(cdf_rows, cdf_rows[1:]))


def test_cdf_goal_override():
    goal = Pose2D(0.3, 0.4, 1.0)
    record = run_placement_benchmark(trials=1, noise=NoiseConfig.zero(),
                                     seed=0, goal=goal)
    assert record.goal == (0.3, 0.4, 1.0)


# ---------------------------------------------------------------- audit


def test_network_separation_clean_run(service):
    mesh = MeshNetwork(["a", "b"], link=LinkModel(),
                       positions={"a": (0.0, 0.0), "b": (0.5, 0.0)})
    mesh.send_data("a", "b", "hello")
    for _ in range(10):
        mesh.tick()
    client = Client(service.port)
    client.send({"kind": "EMERGENCY_STOP", "id": 1})
    deadline = time.time() + 5
    while not service.drain_events() and time.time() < deadline:
        time.sleep(0.01)
    service.publish_state({"tick": 0})
    assert audit_network_separation(mesh, service) == []
    client.close()


def test_network_separation_flags_contamination(service):
    mesh = MeshNetwork(["a", "b"], link=LinkModel(),
                       positions={"a": (0.0, 0.0), "b": (0.5, 0.0)})
    # a control-plane message smuggled into the mesh must be caught
    mesh.send_data("a", "b", WireMessage(kind="MANUAL_CMD", id=1))
    for _ in range(10):
        mesh.tick()
    problems = audit_network_separation(mesh, service)
    assert any("WireMessage" in p for p in problems)
