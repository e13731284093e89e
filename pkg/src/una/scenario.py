"""Scenario files: schema, parsing, and validation.

A scenario is a JSON document describing one experiment: the arena, the
drone roster, target scripts, optimizer and control modes, mesh parameters,
and a stop condition.  Validation failures carry the line number of the
offending key so the CLI can print compiler-style diagnostics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional

from .arena import ArenaConfig, DroneState, FlightPhase, NoiseConfig, Target
from .control import ControlMode
from .coverage import CameraModel, GridSpec, OptimizerMode
from .geometry import Pose2D
from .mesh import AodvConfig, LinkModel


@dataclass(frozen=True)
class Diagnostic:
    path: str
    line: int
    message: str

    def format(self, filename: str) -> str:
        return f"{filename}:{self.line}: {self.message} (at {self.path})"


class ScenarioError(ValueError):
    """Validation failure with one diagnostic per problem."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(d.message for d in diagnostics))

    def format(self, filename: str) -> str:
        return "\n".join(d.format(filename) for d in self.diagnostics)


def index_lines(text: str) -> dict[str, int]:
    """Map JSON paths (dotted keys, [i] for arrays) to 1-based lines.

    A shallow tokenizer that only needs to be right about structure: it
    tracks strings, object keys, and array element counts.  Used purely
    for diagnostics; the values themselves come from json.loads.
    """
    index: dict[str, int] = {}
    stack: list[dict] = []  # frames: {kind, key/index, path}
    line = 1
    pending_key: Optional[str] = None
    pending_line = 1
    i, n = 0, len(text)

    def current_path() -> str:
        return stack[-1]["path"] if stack else ""

    def child_path() -> str:
        if not stack:
            return ""
        frame = stack[-1]
        if frame["kind"] == "obj":
            base = frame["path"]
            return f"{base}.{frame['key']}" if base else str(frame["key"])
        return f"{frame['path']}[{frame['index']}]"

    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            i += 1
            continue
        if ch == '"':
            start_line = line
            j = i + 1
            buf = []
            while j < n:
                c = text[j]
                if c == "\\":
                    j += 2
                    buf.append(text[j - 1])
                    continue
                if c == '"':
                    break
                if c == "\n":
                    line += 1
                buf.append(c)
                j += 1
            literal = "".join(buf)
            # a string followed by ':' is a key
            k = j + 1
            while k < n and text[k] in " \t\r\n":
                k += 1
            if k < n and text[k] == ":" and stack and stack[-1]["kind"] == "obj":
                stack[-1]["key"] = literal
                base = stack[-1]["path"]
                path = f"{base}.{literal}" if base else literal
                index.setdefault(path, start_line)
            else:
                _mark_element(index, stack, start_line)
            i = j + 1
            continue
        if ch == "{":
            _mark_element(index, stack, line)
            stack.append({"kind": "obj", "key": None, "path": child_path()})
            i += 1
            continue
        if ch == "[":
            _mark_element(index, stack, line)
            stack.append({"kind": "arr", "index": 0, "path": child_path()})
            i += 1
            continue
        if ch in "}]":
            if stack:
                stack.pop()
            i += 1
            continue
        if ch == ",":
            if stack and stack[-1]["kind"] == "arr":
                stack[-1]["index"] += 1
            i += 1
            continue
        if ch not in " \t\r:":
            _mark_element(index, stack, line)
            # skip the rest of the literal (number/true/false/null)
            while i < n and text[i] not in ",}] \t\r\n":
                i += 1
            continue
        i += 1
    return index


def _mark_element(index: dict[str, int], stack: list[dict], line: int) -> None:
    if stack and stack[-1]["kind"] == "arr":
        path = f"{stack[-1]['path']}[{stack[-1]['index']}]"
        index.setdefault(path, line)


@dataclass(frozen=True)
class StopCondition:
    ticks: int
    converged_s: Optional[float] = None


@dataclass(frozen=True)
class Scenario:
    name: str
    arena: ArenaConfig
    drones: tuple[DroneState, ...]
    targets: tuple[Target, ...]
    optimizer_mode: OptimizerMode
    control_mode: ControlMode
    camera: CameraModel
    grid: GridSpec
    link: LinkModel
    aodv: AodvConfig
    stop: StopCondition
    seed: int = 0

    def drone_ids(self) -> list[str]:
        return [d.id for d in self.drones]


class _Reader:
    """Pulls typed fields out of raw JSON, accumulating diagnostics."""

    def __init__(self, raw: Any, lines: dict[str, int]):
        self.raw = raw
        self.lines = lines
        self.diagnostics: list[Diagnostic] = []

    def line(self, path: str) -> int:
        while path:
            if path in self.lines:
                return self.lines[path]
            if "." in path or "[" in path:
                cut = max(path.rfind("."), path.rfind("["))
                path = path[:cut]
            else:
                break
        return 1

    def fail(self, path: str, message: str) -> None:
        self.diagnostics.append(Diagnostic(path, self.line(path), message))

    def get(self, obj: Any, path: str, key: str, kind: type, default=None,
            required: bool = False):
        full = f"{path}.{key}" if path else key
        if not isinstance(obj, dict) or key not in obj:
            if required:
                self.fail(path or key, f"missing required field '{key}'")
            return default
        value = obj[key]
        if kind is float and isinstance(value, int):
            value = float(value)
        if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
            self.fail(full, f"'{key}' must be {kind.__name__}")
            return default
        return value

    def point(self, obj: Any, path: str) -> Optional[tuple[float, float]]:
        if (not isinstance(obj, list) or len(obj) != 2
                or not all(isinstance(v, (int, float)) for v in obj)):
            self.fail(path, "expected [x, y]")
            return None
        return float(obj[0]), float(obj[1])


def parse_scenario(text: str, default_seed: int = 0) -> Scenario:
    """Parse and validate a scenario document.

    Raises:
        ScenarioError: with line-anchored diagnostics for every problem.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([Diagnostic("", exc.lineno, f"invalid JSON: {exc.msg}")])
    lines = index_lines(text)
    r = _Reader(raw, lines)
    if not isinstance(raw, dict):
        raise ScenarioError([Diagnostic("", 1, "scenario must be a JSON object")])

    name = r.get(raw, "", "name", str, default="scenario")
    seed = r.get(raw, "", "seed", int, default=default_seed)

    arena_raw = r.get(raw, "", "arena", dict, default={})
    noise_raw = r.get(raw, "", "noise", dict)
    arena_kw = {}
    for key in ("width", "height", "camera_height", "tick", "tilt_gain", "drag",
                "v_max", "yaw_rate_max", "tag_radius"):
        value = r.get(arena_raw, "arena", key, float)
        if value is not None:
            arena_kw[key] = value
    for key in ("render_width", "render_height", "takeoff_ticks", "landing_ticks"):
        value = r.get(arena_raw, "arena", key, int)
        if value is not None:
            arena_kw[key] = value
    if noise_raw is not None:
        noise = NoiseConfig(
            compass_std=r.get(noise_raw, "noise", "compass_std", float,
                              NoiseConfig().compass_std),
            actuation_std=r.get(noise_raw, "noise", "actuation_std", float,
                                NoiseConfig().actuation_std),
            render_std=r.get(noise_raw, "noise", "render_std", float,
                             NoiseConfig().render_std),
        )
        arena_kw["noise"] = noise
    try:
        arena = ArenaConfig(**arena_kw)
    except ValueError as exc:
        r.fail("arena", str(exc))
        arena = ArenaConfig()

    drones = _parse_drones(r, raw, arena)
    targets = _parse_targets(r, raw, arena)

    optimizer_raw = r.get(raw, "", "optimizer", dict, default={})
    mode_name = r.get(optimizer_raw, "optimizer", "mode", str, default="central")
    try:
        optimizer_mode = OptimizerMode(mode_name)
    except ValueError:
        r.fail("optimizer.mode",
               f"unknown optimizer mode '{mode_name}' "
               f"(expected central, distributed, or emulation)")
        optimizer_mode = OptimizerMode.CENTRAL
    camera_raw = r.get(optimizer_raw, "optimizer", "camera", dict, default={})
    try:
        camera = CameraModel(
            fov=math.radians(r.get(camera_raw, "optimizer.camera", "fov_deg",
                                   float, 93.0)),
            r_min=r.get(camera_raw, "optimizer.camera", "r_min", float, 0.1),
            r_max=r.get(camera_raw, "optimizer.camera", "r_max", float, 1.0),
        )
    except ValueError as exc:
        r.fail("optimizer.camera", str(exc))
        camera = CameraModel()
    grid_raw = r.get(optimizer_raw, "optimizer", "grid", dict, default={})
    try:
        grid = GridSpec(
            position_pitch=r.get(grid_raw, "optimizer.grid", "position_pitch",
                                 float, 0.1),
            orientations=r.get(grid_raw, "optimizer.grid", "orientations",
                               int, 8),
        )
    except ValueError as exc:
        r.fail("optimizer.grid", str(exc))
        grid = GridSpec()

    control_raw = r.get(raw, "", "control", dict, default={})
    control_name = r.get(control_raw, "control", "mode", str, default="autopilot")
    try:
        control_mode = ControlMode(control_name)
    except ValueError:
        r.fail("control.mode", f"unknown control mode '{control_name}' "
                               f"(expected autopilot or remote)")
        control_mode = ControlMode.AUTOPILOT

    mesh_raw = r.get(raw, "", "mesh", dict, default={})
    try:
        link = LinkModel(
            range_m=r.get(mesh_raw, "mesh", "range_m", float, 1.0),
            loss_probability=r.get(mesh_raw, "mesh", "loss_probability",
                                   float, 0.0),
            latency_ticks=r.get(mesh_raw, "mesh", "latency_ticks", int, 1),
            seed=seed,
        )
    except ValueError as exc:
        r.fail("mesh", str(exc))
        link = LinkModel(seed=seed)
    aodv = AodvConfig(
        route_lifetime=r.get(mesh_raw, "mesh", "route_lifetime", int, 600),
        rreq_timeout=r.get(mesh_raw, "mesh", "rreq_timeout", int, 30),
        rreq_retries=r.get(mesh_raw, "mesh", "rreq_retries", int, 2),
        hello_interval=r.get(mesh_raw, "mesh", "hello_interval", int, 0),
        hello_miss_limit=r.get(mesh_raw, "mesh", "hello_miss_limit", int, 3),
    )

    stop_raw = r.get(raw, "", "stop", dict, required=True)
    if stop_raw is None:
        stop = StopCondition(ticks=1)
    else:
        ticks = r.get(stop_raw, "stop", "ticks", int, required=True)
        converged = r.get(stop_raw, "stop", "converged_s", float)
        if ticks is None:
            ticks = 1
        elif ticks < 1:
            r.fail("stop.ticks", "stop.ticks must be >= 1")
            ticks = 1
        stop = StopCondition(ticks=ticks, converged_s=converged)

    if r.diagnostics:
        raise ScenarioError(r.diagnostics)
    return Scenario(name=name, arena=arena, drones=tuple(drones),
                    targets=tuple(targets), optimizer_mode=optimizer_mode,
                    control_mode=control_mode, camera=camera, grid=grid,
                    link=link, aodv=aodv, stop=stop, seed=seed)


def _parse_drones(r: _Reader, raw: Any, arena: ArenaConfig) -> list[DroneState]:
    drones_raw = r.get(raw, "", "drones", list, default=[])
    drones: list[DroneState] = []
    seen_ids: set[str] = set()
    for i, item in enumerate(drones_raw):
        path = f"drones[{i}]"
        if not isinstance(item, dict):
            r.fail(path, "drone entry must be an object")
            continue
        drone_id = r.get(item, path, "id", str, required=True)
        if drone_id is None:
            continue
        if drone_id in seen_ids:
            r.fail(f"{path}.id", f"duplicate drone id '{drone_id}'")
            continue
        seen_ids.add(drone_id)
        start = r.get(item, path, "start", list, required=True)
        if start is None:
            continue
        if len(start) not in (2, 3) or not all(
                isinstance(v, (int, float)) for v in start):
            r.fail(f"{path}.start", "start must be [x, y] or [x, y, yaw]")
            continue
        x, y = float(start[0]), float(start[1])
        yaw = float(start[2]) if len(start) == 3 else 0.0
        if not arena.in_bounds(x, y):
            r.fail(f"{path}.start",
                   f"drone '{drone_id}' starts out of bounds "
                   f"({x}, {y}) not within {arena.width} x {arena.height}")
            continue
        phase_name = r.get(item, path, "phase", str, default="FLYING")
        try:
            phase = FlightPhase[phase_name]
        except KeyError:
            r.fail(f"{path}.phase", f"unknown phase '{phase_name}'")
            continue
        drones.append(DroneState(id=drone_id, pose=Pose2D(x, y, yaw),
                                 compass_yaw=yaw, phase=phase))
    return drones


def _parse_targets(r: _Reader, raw: Any, arena: ArenaConfig) -> list[Target]:
    targets_raw = r.get(raw, "", "targets", list, default=[])
    targets: list[Target] = []
    seen_ids: set[str] = set()
    for i, item in enumerate(targets_raw):
        path = f"targets[{i}]"
        if not isinstance(item, dict):
            r.fail(path, "target entry must be an object")
            continue
        target_id = r.get(item, path, "id", str, default=f"t{i + 1}")
        if target_id in seen_ids:
            r.fail(f"{path}.id", f"duplicate target id '{target_id}'")
            continue
        seen_ids.add(target_id)
        pos_raw = r.get(item, path, "position", list, required=True)
        if pos_raw is None:
            continue
        pos = r.point(pos_raw, f"{path}.position")
        if pos is None:
            continue
        if not arena.in_bounds(*pos):
            r.fail(f"{path}.position",
                   f"target '{target_id}' out of bounds {pos}")
            continue
        script: list[tuple[float, tuple[float, float]]] = []
        script_raw = r.get(item, path, "script", list, default=[])
        bad = False
        for j, step in enumerate(script_raw):
            spath = f"{path}.script[{j}]"
            if (not isinstance(step, list) or len(step) != 2
                    or not isinstance(step[0], (int, float))):
                r.fail(spath, "script step must be [time_s, [x, y]]")
                bad = True
                continue
            dest = r.point(step[1], spath)
            if dest is None:
                bad = True
                continue
            if not arena.in_bounds(*dest):
                r.fail(spath, f"scripted position {dest} out of bounds")
                bad = True
                continue
            script.append((float(step[0]), dest))
        if bad:
            continue
        targets.append(Target(id=target_id, position=pos,
                              script=tuple(script)))
    return targets


def load_scenario(path: str, default_seed: int = 0) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read(), default_seed=default_seed)
