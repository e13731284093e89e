"""Lossy ad-hoc mesh with AODV routing.

Simulates the drone-to-drone coordination network: unit-disk connectivity,
per-delivery random loss, fixed per-hop latency, and an AODV subset for
routing (RREQ/RREP/RERR, sequence numbers, broadcast-id dedup, route
lifetimes, optional hello beacons).  No gratuitous RREP, no local repair.

The network only advances when the simulation calls `deliver` and
`tick_maintenance` (or the `tick` convenience wrapper), so runs are
deterministic for a fixed seed and scripted mobility.

Link breaks are detected at transmission time: unicasting to a node that
has moved out of range fails deterministically, invalidates the routes
through it, and triggers an RERR.  Random losses are silent; in-flight
packets whose receiver leaves range before the latency elapses are
likewise dropped without detection.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Optional

import numpy as np


class PacketKind(enum.Enum):
    RREQ = "RREQ"
    RREP = "RREP"
    RERR = "RERR"
    DATA = "DATA"
    HELLO = "HELLO"


@dataclass(frozen=True)
class LinkModel:
    """Physical layer: disc range, Bernoulli loss, fixed latency."""

    range_m: float = 1.0
    loss_probability: float = 0.0
    latency_ticks: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ValueError("loss_probability must be in [0,1]")
        if self.range_m <= 0 or self.latency_ticks < 1:
            raise ValueError("need positive range and latency >= 1")


@dataclass(frozen=True)
class AodvConfig:
    route_lifetime: int = 600
    rreq_timeout: int = 30
    rreq_retries: int = 2
    hello_interval: int = 0  # 0 disables hello beacons
    hello_miss_limit: int = 3


@dataclass
class RouteEntry:
    destination: str
    next_hop: str
    hop_count: int
    dest_sequence: int
    lifetime: int


@dataclass(frozen=True)
class AodvPacket:
    kind: PacketKind
    originator: str
    destination: str
    broadcast_id: int = 0
    hop_count: int = 0
    orig_seq: int = 0
    dest_seq: int = 0
    payload: Any = None
    data_id: int = 0
    unreachable: tuple[tuple[str, int], ...] = ()


class DeliveryStatus(enum.Enum):
    PENDING = "pending"
    DELIVERED = "delivered"
    UNREACHABLE = "unreachable"


@dataclass
class DataHandle:
    """Outcome of one send_data call, updated as the network runs."""

    data_id: int
    source: str
    destination: str
    status: DeliveryStatus = DeliveryStatus.PENDING
    sent_tick: int = 0
    delivered_tick: Optional[int] = None


@dataclass
class DiscoveryHandle:
    source: str
    destination: str
    status: DeliveryStatus = DeliveryStatus.PENDING
    route: Optional[RouteEntry] = None


@dataclass
class _Pending:
    deadline: int
    timeout: int
    attempts: int = 1
    waiters: list = field(default_factory=list)
    buffer: list = field(default_factory=list)  # (DataHandle, payload)


class _Node:
    def __init__(self, node_id: str):
        self.id = node_id
        self.seq = 0
        self.broadcast_id = 0
        self.seen: set[tuple[str, int]] = set()
        self.routes: dict[str, RouteEntry] = {}
        self.pending: dict[str, _Pending] = {}
        self.last_heard: dict[str, int] = {}


@dataclass
class _InFlight:
    due: int
    sender: str
    receiver: Optional[str]  # None = broadcast
    packet: AodvPacket


class MeshNetwork:
    """All mesh nodes plus the shared medium, stepped tick by tick."""

    def __init__(self, nodes: Iterable[str], link: LinkModel = LinkModel(),
                 aodv: AodvConfig = AodvConfig(),
                 positions: Optional[dict[str, tuple[float, float]]] = None):
        self.link = link
        self.aodv = aodv
        self.now = 0
        self._nodes = {n: _Node(n) for n in nodes}
        self.positions: dict[str, tuple[float, float]] = dict(positions or {})
        self._rng = np.random.default_rng(link.seed)
        self._flight: list[_InFlight] = []
        self._handles: dict[int, DataHandle] = {}
        self._next_data_id = 1
        self.trace: list[tuple[int, str, str, str, int, int]] = []
        self.delivered: list[tuple[int, str, AodvPacket]] = []

    # ------------------------------------------------------------ topology

    def set_positions(self, positions: dict[str, tuple[float, float]]) -> None:
        self.positions.update(positions)

    def in_range(self, a: str, b: str) -> bool:
        pa, pb = self.positions.get(a), self.positions.get(b)
        if pa is None or pb is None:
            return False
        return math.hypot(pa[0] - pb[0], pa[1] - pb[1]) <= self.link.range_m

    def node_ids(self) -> list[str]:
        return sorted(self._nodes)

    def sequence_of(self, node: str) -> int:
        return self._nodes[node].seq

    def route_table(self, node: str) -> dict[str, RouteEntry]:
        return {d: replace(r) for d, r in self._nodes[node].routes.items()}

    # ------------------------------------------------------------ sending

    def send_data(self, source: str, dest: str, payload: Any) -> DataHandle:
        """Queue a payload for dest; discovery runs on demand."""
        handle = DataHandle(data_id=self._next_data_id, source=source,
                            destination=dest, sent_tick=self.now)
        self._next_data_id += 1
        self._handles[handle.data_id] = handle
        if source == dest:
            handle.status = DeliveryStatus.DELIVERED
            handle.delivered_tick = self.now
            return handle
        node = self._nodes[source]
        route = self._valid_route(node, dest)
        if route is not None:
            self._forward_data(node, handle, payload, route)
        else:
            self._enqueue_discovery(node, dest).buffer.append((handle, payload))
        return handle

    def route_discover(self, source: str, dest: str) -> DiscoveryHandle:
        """Start (or join) a route discovery; resolves as the net runs."""
        node = self._nodes[source]
        handle = DiscoveryHandle(source=source, destination=dest)
        route = self._valid_route(node, dest)
        if route is not None:
            handle.status = DeliveryStatus.DELIVERED
            handle.route = replace(route)
            return handle
        self._enqueue_discovery(node, dest).waiters.append(handle)
        return handle

    def _enqueue_discovery(self, node: _Node, dest: str) -> _Pending:
        pending = node.pending.get(dest)
        if pending is None:
            pending = _Pending(deadline=self.now + self.aodv.rreq_timeout,
                               timeout=self.aodv.rreq_timeout)
            node.pending[dest] = pending
            self._flood_rreq(node, dest)
        return pending

    def _flood_rreq(self, node: _Node, dest: str) -> None:
        node.seq += 1
        node.broadcast_id += 1
        node.seen.add((node.id, node.broadcast_id))
        known = node.routes.get(dest)
        packet = AodvPacket(kind=PacketKind.RREQ, originator=node.id,
                            destination=dest, broadcast_id=node.broadcast_id,
                            hop_count=0, orig_seq=node.seq,
                            dest_seq=known.dest_sequence if known else 0)
        self._transmit(node.id, None, packet)

    # ------------------------------------------------------------ stepping

    def tick(self) -> list[tuple[str, AodvPacket]]:
        """Deliver due packets, run per-node maintenance, advance time."""
        arrived = self.deliver()
        for node_id in self.node_ids():
            self.tick_maintenance(node_id)
        self.now += 1
        return arrived

    def deliver(self) -> list[tuple[str, AodvPacket]]:
        """Hand due in-flight packets to in-range receivers."""
        due = [f for f in self._flight if f.due <= self.now]
        self._flight = [f for f in self._flight if f.due > self.now]
        arrived = []
        for flight in due:
            if flight.receiver is None:
                receivers = [n for n in self.node_ids()
                             if n != flight.sender and self.in_range(flight.sender, n)]
            else:
                receivers = [flight.receiver] if self.in_range(
                    flight.sender, flight.receiver) else []
                if not receivers:
                    self._trace(flight, flight.receiver, dropped=True)
            for receiver in receivers:
                lost = self._rng.random() < self.link.loss_probability
                self._trace(flight, receiver, dropped=lost)
                if lost:
                    continue
                arrived.append((receiver, flight.packet))
                self._receive(self._nodes[receiver], flight.sender, flight.packet)
        return arrived

    def tick_maintenance(self, node_id: str) -> None:
        """Expire routes, retry or fail discoveries, emit hellos."""
        node = self._nodes[node_id]
        for dest in list(node.routes):
            entry = node.routes[dest]
            entry.lifetime -= 1
            if entry.lifetime <= 0:
                del node.routes[dest]
        for dest in list(node.pending):
            pending = node.pending[dest]
            if self._valid_route(node, dest) is not None:
                continue  # resolved by an RREP this tick
            if self.now < pending.deadline:
                continue
            if pending.attempts <= self.aodv.rreq_retries:
                pending.attempts += 1
                pending.timeout *= 2
                pending.deadline = self.now + pending.timeout
                self._flood_rreq(node, dest)
            else:
                self._fail_pending(node, dest)
        if self.aodv.hello_interval > 0:
            if self.now % self.aodv.hello_interval == 0:
                self._transmit(node.id, None,
                               AodvPacket(kind=PacketKind.HELLO,
                                          originator=node.id, destination="*",
                                          orig_seq=node.seq))
            horizon = self.aodv.hello_interval * self.aodv.hello_miss_limit
            for neighbor in list(node.last_heard):
                if self.now - node.last_heard[neighbor] > horizon:
                    del node.last_heard[neighbor]
                    self._break_routes_via(node, neighbor)

    def _fail_pending(self, node: _Node, dest: str) -> None:
        pending = node.pending.pop(dest)
        for waiter in pending.waiters:
            waiter.status = DeliveryStatus.UNREACHABLE
        for handle, _ in pending.buffer:
            handle.status = DeliveryStatus.UNREACHABLE

    # ------------------------------------------------------------ receive

    def _receive(self, node: _Node, sender: str, packet: AodvPacket) -> None:
        node.last_heard[sender] = self.now
        kind = packet.kind
        if kind is PacketKind.RREQ:
            self._on_rreq(node, sender, packet)
        elif kind is PacketKind.RREP:
            self._on_rrep(node, sender, packet)
        elif kind is PacketKind.RERR:
            self._on_rerr(node, sender, packet)
        elif kind is PacketKind.DATA:
            self._on_data(node, sender, packet)
        # HELLO only refreshes last_heard

    def _on_rreq(self, node: _Node, sender: str, packet: AodvPacket) -> None:
        key = (packet.originator, packet.broadcast_id)
        if key in node.seen:
            return
        node.seen.add(key)
        self._install(node, packet.originator, sender,
                      packet.hop_count + 1, packet.orig_seq)
        if node.id == packet.destination:
            node.seq = max(node.seq, packet.dest_seq)
            reply = AodvPacket(kind=PacketKind.RREP, originator=packet.originator,
                               destination=node.id, hop_count=0,
                               dest_seq=node.seq)
            self._unicast_on_reverse(node, reply)
            return
        shortcut = self._valid_route(node, packet.destination)
        if shortcut is not None and shortcut.dest_sequence >= packet.dest_seq:
            reply = AodvPacket(kind=PacketKind.RREP, originator=packet.originator,
                               destination=packet.destination,
                               hop_count=shortcut.hop_count,
                               dest_seq=shortcut.dest_sequence)
            self._unicast_on_reverse(node, reply)
            return
        self._transmit(node.id, None, replace(packet, hop_count=packet.hop_count + 1))

    def _on_rrep(self, node: _Node, sender: str, packet: AodvPacket) -> None:
        self._install(node, packet.destination, sender,
                      packet.hop_count + 1, packet.dest_seq)
        if node.id == packet.originator:
            self._resolve_pending(node, packet.destination)
            return
        self._unicast_on_reverse(node, replace(packet, hop_count=packet.hop_count + 1))

    def _unicast_on_reverse(self, node: _Node, reply: AodvPacket) -> None:
        reverse = self._valid_route(node, reply.originator)
        if reverse is None:
            return  # reverse path evaporated; the flood retry will rebuild it
        if not self._transmit(node.id, reverse.next_hop, reply):
            self._break_routes_via(node, reverse.next_hop)

    def _resolve_pending(self, node: _Node, dest: str) -> None:
        pending = node.pending.pop(dest, None)
        if pending is None:
            return
        route = self._valid_route(node, dest)
        for waiter in pending.waiters:
            waiter.status = DeliveryStatus.DELIVERED
            waiter.route = replace(route)
        for handle, payload in pending.buffer:
            self._forward_data(node, handle, payload, route)

    def _on_rerr(self, node: _Node, sender: str, packet: AodvPacket) -> None:
        invalidated = []
        for dest, seq in packet.unreachable:
            entry = node.routes.get(dest)
            if entry is not None and entry.next_hop == sender:
                del node.routes[dest]
                invalidated.append((dest, seq))
        if invalidated:
            self._transmit(node.id, None,
                           AodvPacket(kind=PacketKind.RERR, originator=node.id,
                                      destination="*",
                                      unreachable=tuple(invalidated)))

    def _on_data(self, node: _Node, sender: str, packet: AodvPacket) -> None:
        if node.id == packet.destination:
            self.delivered.append((self.now, node.id, packet))
            handle = self._handles.get(packet.data_id)
            if handle is not None:
                handle.status = DeliveryStatus.DELIVERED
                handle.delivered_tick = self.now
            return
        route = self._valid_route(node, packet.destination)
        if route is None:
            self._announce_broken(node, [(packet.destination, packet.dest_seq + 1)])
            self._mark_unreachable(packet.data_id)
            return
        route.lifetime = self.aodv.route_lifetime
        if not self._transmit(node.id, route.next_hop, packet):
            self._break_routes_via(node, route.next_hop)
            self._mark_unreachable(packet.data_id)

    # ------------------------------------------------------------ routes

    def _valid_route(self, node: _Node, dest: str) -> Optional[RouteEntry]:
        entry = node.routes.get(dest)
        if entry is None or entry.lifetime <= 0:
            return None
        return entry

    def _install(self, node: _Node, dest: str, next_hop: str,
                 hop_count: int, seq: int) -> None:
        if dest == node.id:
            return
        node.routes[dest] = RouteEntry(destination=dest, next_hop=next_hop,
                                       hop_count=hop_count, dest_sequence=seq,
                                       lifetime=self.aodv.route_lifetime)

    def _forward_data(self, node: _Node, handle: DataHandle, payload: Any,
                      route: RouteEntry) -> None:
        packet = AodvPacket(kind=PacketKind.DATA, originator=node.id,
                            destination=handle.destination, payload=payload,
                            data_id=handle.data_id,
                            dest_seq=route.dest_sequence)
        route.lifetime = self.aodv.route_lifetime
        if not self._transmit(node.id, route.next_hop, packet):
            self._break_routes_via(node, route.next_hop)
            handle.status = DeliveryStatus.UNREACHABLE

    def _mark_unreachable(self, data_id: int) -> None:
        handle = self._handles.get(data_id)
        if handle is not None and handle.status is DeliveryStatus.PENDING:
            handle.status = DeliveryStatus.UNREACHABLE

    def _break_routes_via(self, node: _Node, next_hop: str) -> None:
        lost = []
        for dest in list(node.routes):
            entry = node.routes[dest]
            if entry.next_hop == next_hop or dest == next_hop:
                del node.routes[dest]
                lost.append((dest, entry.dest_sequence + 1))
        self._announce_broken(node, lost)

    def _announce_broken(self, node: _Node,
                         lost: list[tuple[str, int]]) -> None:
        if not lost:
            return
        self._transmit(node.id, None,
                       AodvPacket(kind=PacketKind.RERR, originator=node.id,
                                  destination="*", unreachable=tuple(lost)))

    # ------------------------------------------------------------ medium

    def _transmit(self, sender: str, receiver: Optional[str],
                  packet: AodvPacket) -> bool:
        """Put a packet on the air; False when a unicast link is broken."""
        if receiver is not None and not self.in_range(sender, receiver):
            self.trace.append((self.now, packet.kind.value, sender, receiver,
                               packet.hop_count, 1))
            return False
        self._flight.append(_InFlight(due=self.now + self.link.latency_ticks,
                                      sender=sender, receiver=receiver,
                                      packet=packet))
        return True

    def _trace(self, flight: _InFlight, receiver: str, dropped: bool) -> None:
        self.trace.append((self.now, flight.packet.kind.value, flight.sender,
                           receiver, flight.packet.hop_count, int(dropped)))

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["tick", "kind", "src", "dst", "hops", "dropped"])
            writer.writerows(self.trace)
