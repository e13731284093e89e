"""Reference optimizer plugins.

These run as ordinary network clients: they read the STATE_UPDATE stream,
compute objectives from the reported drone and target positions, and send
SET_OBJECTIVES back.  The greedy plugin reproduces the internal central
solver exactly, which makes it the conformance probe for the plugin API;
the echo plugin assigns every drone its current pose.
"""

from __future__ import annotations

import json
import socket
from typing import Optional

from ..coverage import CameraModel, CoverageInstance, GridSpec, solve_central
from ..geometry import Pose2D
from ..central.protocol import PROTOCOL_VERSION, WireMessage, parse_line


def _instance_from_state(state: dict,
                         grid: Optional[GridSpec] = None) -> Optional[CoverageInstance]:
    drones = []
    for entry in state.get("drones", []):
        fix = entry.get("fix")
        if fix is None:
            continue
        drones.append((entry["id"],
                       Pose2D(fix[0], fix[1], entry.get("compass", 0.0))))
    if not drones:
        return None
    cam = state.get("camera", {})
    arena = state.get("arena", {})
    return CoverageInstance(
        targets=tuple(tuple(t) for t in state.get("targets", [])),
        drones=tuple(sorted(drones)),
        camera=CameraModel(fov=cam.get("fov", CameraModel().fov),
                           r_min=cam.get("r_min", CameraModel().r_min),
                           r_max=cam.get("r_max", CameraModel().r_max)),
        bounds=(arena.get("width", 1.25), arena.get("height", 2.1)),
        grid=grid or GridSpec(),
    )


class GreedyPlugin:
    """Greedy coverage over the wire; mirrors the internal central solver."""

    def __init__(self, grid: Optional[GridSpec] = None):
        self.grid = grid
        self._last_targets: Optional[tuple] = None

    def objectives_for(self, state: dict) -> Optional[dict]:
        """SET_OBJECTIVES payload for one STATE_UPDATE, or None to stay quiet."""
        targets = tuple(tuple(t) for t in state.get("targets", []))
        if targets == self._last_targets or not targets:
            return None
        instance = _instance_from_state(state, self.grid)
        if instance is None:
            return None
        self._last_targets = targets
        directive = solve_central(instance)
        return {"objectives": [
            {"drone": drone, "goal": [pose.x, pose.y, pose.yaw]}
            for drone, pose in directive.assignments]}


class EchoPlugin:
    """Assigns every drone its current fix; controllers finish immediately."""

    def __init__(self):
        self._sent = False

    def objectives_for(self, state: dict) -> Optional[dict]:
        if self._sent:
            return None
        objectives = []
        for entry in state.get("drones", []):
            fix = entry.get("fix")
            if fix is None:
                continue
            objectives.append({"drone": entry["id"],
                               "goal": [fix[0], fix[1],
                                        entry.get("compass", 0.0)]})
        if not objectives:
            return None
        self._sent = True
        return {"objectives": objectives}


def run_plugin(plugin, host: str = "127.0.0.1", port: int = 8470,
               max_updates: Optional[int] = None) -> int:
    """Connect, negotiate the version, and answer the state stream.

    Returns the number of SET_OBJECTIVES messages sent.  ``max_updates``
    bounds how many STATE_UPDATEs are consumed (None runs until the server
    closes the connection).
    """
    sent = 0
    seen = 0
    with socket.create_connection((host, port)) as sock:
        reader = sock.makefile("r", encoding="utf-8")
        sock.sendall((json.dumps({"version": PROTOCOL_VERSION}) + "\n")
                     .encode("utf-8"))
        next_id = 0
        for line in reader:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "kind" not in obj:  # server handshake line
                continue
            message = parse_line(line)
            if message.kind != "STATE_UPDATE":
                continue
            seen += 1
            payload = plugin.objectives_for(message.payload or {})
            if payload is not None:
                next_id += 1
                out = WireMessage(kind="SET_OBJECTIVES", id=next_id,
                                  payload=payload, sender="plugin")
                sock.sendall((out.to_json() + "\n").encode("utf-8"))
                sent += 1
            if max_updates is not None and seen >= max_updates:
                break
    return sent
