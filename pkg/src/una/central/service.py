"""Central control service: the star network every drone client hangs off.

Any number of clients (admin UI, external optimizer plugins, test probes)
connect on one TCP port.  Each gets the version handshake, then a
STATE_UPDATE stream at the vision rate, and may send requests back.  All
world-affecting messages funnel into one ordered event queue that the
simulation loop drains at the start of each tick, so concurrent clients
can never interleave half-applied changes.

Malformed lines earn a FAULT reply and the connection stays open; only a
version mismatch gets a connection refused.
"""

from __future__ import annotations

import queue
import socket
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .protocol import (
    KINDS, PROTOCOL_VERSION, REQUEST_KINDS, ProtocolError, WireMessage,
    handshake_line, is_version_line, parse_line,
)
from .ws import accept_transport

AODV_KINDS = frozenset({"RREQ", "RREP", "RERR", "DATA", "HELLO"})


@dataclass
class Event:
    """One validated request, queued for the simulation tick."""

    client: "ClientConnection"
    message: WireMessage


class ClientConnection:
    def __init__(self, transport, name: str):
        self.transport = transport
        self.name = name
        self.outbox: queue.Queue = queue.Queue(maxsize=256)
        self.alive = True
        self.writer: Optional[threading.Thread] = None
        self._id_lock = threading.Lock()
        self._next_id = 0
        self.last_inbound_id: Optional[int] = None

    def send(self, kind: str, payload: Optional[dict] = None) -> None:
        with self._id_lock:
            self._next_id += 1
            msg = WireMessage(kind=kind, id=self._next_id, payload=payload,
                              sender="central")
        self.send_raw(msg.to_json())

    def send_raw(self, line: str) -> None:
        if not self.alive:
            return
        try:
            self.outbox.put_nowait(line)
        except queue.Full:
            # a stalled reader loses the stream rather than stalling the sim
            self.alive = False


class CentralService:
    """Threaded line-protocol server around a single inbound event queue."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 static_dir: Optional[Path] = None):
        self.host = host
        self.static_dir = static_dir
        self._events: queue.Queue = queue.Queue()
        self._clients: list[ClientConnection] = []
        self._clients_lock = threading.Lock()
        self._threads: list[threading.Thread] = []
        self._closing = False
        self.kinds_sent: set[str] = set()
        self.kinds_received: set[str] = set()
        self._listener = socket.create_server((host, port))
        self.port = self._listener.getsockname()[1]
        accept = threading.Thread(target=self._accept_loop,
                                  name="central-accept", daemon=True)
        accept.start()
        self._threads.append(accept)

    # ------------------------------------------------------------ lifecycle

    def _accept_loop(self) -> None:
        counter = 0
        while not self._closing:
            try:
                sock, addr = self._listener.accept()
            except OSError:
                return
            counter += 1
            worker = threading.Thread(
                target=self._serve_connection, args=(sock, f"client-{counter}"),
                name=f"central-conn-{counter}", daemon=True)
            worker.start()
            self._threads.append(worker)

    def _serve_connection(self, sock: socket.socket, name: str) -> None:
        try:
            transport = accept_transport(sock, self.static_dir)
        except (OSError, ValueError):
            sock.close()
            return
        if transport is None:  # plain HTTP request, already served
            return
        client = ClientConnection(transport, name)
        writer = threading.Thread(target=self._writer_loop, args=(client,),
                                  name=f"{name}-writer", daemon=True)
        client.writer = writer
        writer.start()
        client.send_raw(handshake_line())
        with self._clients_lock:
            self._clients.append(client)
        try:
            self._reader_loop(client)
        finally:
            self._drop(client)

    def _writer_loop(self, client: ClientConnection) -> None:
        while True:
            line = client.outbox.get()
            if line is None:
                return
            try:
                client.transport.send_line(line)
            except OSError:
                client.alive = False
                return

    def _reader_loop(self, client: ClientConnection) -> None:
        first = True
        while client.alive:
            try:
                line = client.transport.recv_line()
            except (OSError, ValueError):
                return
            if line is None:
                return
            if not line.strip():
                continue
            if first:
                first = False
                version = is_version_line(line)
                if version is not None:
                    if version != PROTOCOL_VERSION:
                        client.send("FAULT", {
                            "reason": f"unsupported protocol version "
                                      f"{version!r}; this server speaks "
                                      f"{PROTOCOL_VERSION}"})
                        return
                    continue
            self._handle_line(client, line)

    def _handle_line(self, client: ClientConnection, line: str) -> None:
        try:
            message = parse_line(line)
        except ProtocolError as exc:
            client.send("FAULT", {"reason": str(exc)})
            return
        self.kinds_received.add(message.kind)
        last = client.last_inbound_id
        if last is not None and message.id <= last:
            client.send("FAULT", {
                "for": message.id,
                "reason": f"message id {message.id} not greater than {last}"})
            return
        client.last_inbound_id = message.id
        if message.kind == "ACK":
            return
        if message.kind not in REQUEST_KINDS:
            client.send("FAULT", {
                "for": message.id,
                "reason": f"clients do not send {message.kind}"})
            return
        self._events.put(Event(client=client, message=message))

    def _drop(self, client: ClientConnection) -> None:
        with self._clients_lock:
            if client in self._clients:
                self._clients.remove(client)
        # let the writer flush anything already queued (e.g. a refusal
        # FAULT) before the socket goes away
        try:
            client.outbox.put_nowait(None)
        except queue.Full:
            pass  # writer is wedged; closing the socket below unblocks it
        if client.writer is not None and client.writer is not threading.current_thread():
            client.writer.join(timeout=2.0)
        client.alive = False
        try:
            client.transport.close()
        except OSError:
            pass

    def stop(self) -> None:
        self._closing = True
        try:
            self._listener.close()
        except OSError:
            pass
        with self._clients_lock:
            clients = list(self._clients)
        for client in clients:
            self._drop(client)

    # ------------------------------------------------------------ sim-facing

    def drain_events(self) -> list[Event]:
        events = []
        while True:
            try:
                events.append(self._events.get_nowait())
            except queue.Empty:
                return events

    def _send(self, client: ClientConnection, kind: str,
              payload: Optional[dict]) -> None:
        self.kinds_sent.add(kind)
        client.send(kind, payload)

    def publish_state(self, payload: dict) -> None:
        with self._clients_lock:
            clients = list(self._clients)
        for client in clients:
            self._send(client, "STATE_UPDATE", payload)

    def reply_ack(self, client: ClientConnection, payload: dict) -> None:
        self._send(client, "ACK", payload)

    def reply_fault(self, client: ClientConnection, ref: Optional[int],
                    reason: str) -> None:
        self._send(client, "FAULT", {"for": ref, "reason": reason})

    def broadcast_fault(self, drone: str, fault: str) -> None:
        with self._clients_lock:
            clients = list(self._clients)
        for client in clients:
            self._send(client, "FAULT", {"drone": drone, "fault": fault})

    def client_count(self) -> int:
        with self._clients_lock:
            return len(self._clients)


def audit_network_separation(mesh, service: CentralService) -> list[str]:
    """Check that mesh traffic and control traffic never mix.

    Returns a list of violations; empty means the separation held.
    """
    problems = []
    for row in mesh.trace:
        kind = row[1]
        if kind not in AODV_KINDS:
            problems.append(f"mesh trace carries non-AODV kind {kind!r}")
    for _, _, packet in mesh.delivered:
        if isinstance(packet.payload, WireMessage):
            problems.append("mesh delivered a control-plane WireMessage")
    for kind in service.kinds_sent | service.kinds_received:
        if kind in AODV_KINDS:
            problems.append(f"control connection carried AODV kind {kind!r}")
        elif kind not in KINDS:
            problems.append(f"control connection carried unknown kind {kind!r}")
    return problems
