"""Simulation loop: the full perception-decision-action cycle.

Each tick runs, in order: external events from the service inbox, the
vision tracker (at its own 0.05 s cadence), the coverage optimizer (when
the target picture changed), one controller tick per drone, the mesh, and
finally the physics step.  Manual commands and emergency stops take effect
on the very next tick, ahead of whatever the optimizer wanted.

The loop never reads ground truth for decisions: controllers see vision
fixes and compass readings, the optimizer sees vision targets.  Ground
truth is used only for the metrics written to artifacts.
"""

from __future__ import annotations

import base64
import math
from dataclasses import dataclass
from typing import Any, Optional

from . import ppm
from .arena import (
    ArenaConfig, AtCommand, FlightPhase, World,
    default_tag_colors, TARGET_TAG_COLOR,
)
from .control import ControlStation, Objective
from .coverage import (
    CoverageInstance, LocalView, OptimizerMode, evaluate_coverage,
    solve_central, solve_distributed_step, solve_emulated,
)
from .geometry import Pose2D
from .mesh import MeshNetwork
from .scenario import Scenario
from .vision import (
    Calibration, ColorRange, DetectionBatch, Detection, Tracker, TARGET_TAG,
)

VISION_PERIOD = 0.05
# a target set is "changed" when any position moved at least this far
REOPTIMIZE_EPS = 0.05


def build_calibration(arena: ArenaConfig, drone_ids) -> Calibration:
    colors = default_tag_colors(drone_ids)
    return Calibration(
        meters_per_pixel_x=1.0 / arena.pixels_per_meter_x,
        meters_per_pixel_y=1.0 / arena.pixels_per_meter_y,
        origin_u=0.0,
        origin_v=0.0,
        drone_ranges={d: ColorRange.around_rgb(c) for d, c in colors.items()},
        target_range=ColorRange.around_rgb(TARGET_TAG_COLOR),
    )


@dataclass
class MetricsRow:
    tick: int
    time_s: float
    covered_true: int
    covered_belief: int
    drones: dict[str, tuple]


class SimulationLoop:
    def __init__(self, scenario: Scenario, seed: Optional[int] = None,
                 service: Optional[Any] = None,
                 metrics_limit: Optional[int] = None):
        self.scenario = scenario
        self.metrics_limit = metrics_limit
        self.seed = scenario.seed if seed is None else seed
        self.service = service
        arena = scenario.arena
        self.world = World(arena, list(scenario.drones),
                           list(scenario.targets), seed=self.seed)
        self.drone_ids = sorted(scenario.drone_ids())
        self.tag_colors = default_tag_colors(self.drone_ids)
        self.calibration = build_calibration(arena, self.drone_ids)
        self.tracker = Tracker(self._capture_frame, self.calibration,
                               period=VISION_PERIOD)
        self.station = ControlStation(bounds=(arena.width, arena.height))
        for drone_id in self.drone_ids:
            self.station.register(drone_id)
        self.mesh = MeshNetwork(
            self.drone_ids, link=scenario.link, aodv=scenario.aodv,
            positions={d.id: (d.pose.x, d.pose.y) for d in scenario.drones})

        self.tick_count = 0
        self.latest_batch: Optional[DetectionBatch] = None
        self.fixes: dict[str, Detection] = {}
        self.vision_targets: tuple[tuple[float, float], ...] = ()
        self._next_vision = 0.0
        self._solved_targets: Optional[tuple] = None
        self._dispatch_queue: list[str] = []
        self._claims: dict[str, dict[str, tuple]] = {d: {} for d in self.drone_ids}
        self._mesh_cursor = 0
        self.manual_hold: dict[str, bool] = {d: False for d in self.drone_ids}
        self._pending: dict[str, AtCommand] = {}
        self.emergency = False
        self.plugin_active = False
        self.plugin_stalled = False
        self._plugin_last = 0.0
        self.faults: list[tuple[float, str, str]] = []
        self._fault_seen: dict[str, Optional[str]] = {}
        self.metrics: list[MetricsRow] = []
        self._covered_max = 0
        self.objectives_dispatched = 0
        self.manual_events = 0
        self._converged_since: Optional[float] = None

    # ------------------------------------------------------------ plumbing

    @property
    def now(self) -> float:
        return self.tick_count * self.scenario.arena.tick

    def _capture_frame(self):
        return self.world.render_overhead(self.tag_colors)

    def frame_ppm_base64(self) -> tuple[str, int, int]:
        frame = self._capture_frame()
        data = ppm.encode(frame)
        return base64.b64encode(data).decode("ascii"), frame.width, frame.height

    # ------------------------------------------------------------ main loop

    def run(self) -> dict:
        """Run to the stop condition; returns the summary."""
        stop = self.scenario.stop
        for _ in range(stop.ticks):
            self.step()
            if stop.converged_s is not None and self._converged(stop.converged_s):
                break
        return self.summary()

    def step(self) -> None:
        if self.service is not None:
            for event in self.service.drain_events():
                self._handle_event(event)
        if self.now + 1e-9 >= self._next_vision:
            self._vision_tick()
            self._next_vision += VISION_PERIOD
        self._maybe_optimize()
        self._drain_dispatch_queue()
        commands = self._collect_commands()
        self.mesh.set_positions({d: (s.pose.x, s.pose.y)
                                 for d, s in self.world.drones.items()})
        self.mesh.tick()
        self._absorb_claims()
        self.world.step(commands)
        self.tick_count += 1
        self._record_metrics()

    # ------------------------------------------------------------ vision

    def _vision_tick(self) -> None:
        batch = self.tracker.tick(now=self.now)
        self.latest_batch = batch
        for det in batch.detections:
            if det.tag != TARGET_TAG:
                self.fixes[det.tag] = det
        self.vision_targets = tuple(sorted(
            det.world_position for det in batch.detections
            if det.tag == TARGET_TAG))
        if self.service is not None:
            self.service.publish_state(self.state_payload())
        if self.plugin_active and not self.plugin_stalled:
            if self.now - self._plugin_last > 2 * VISION_PERIOD:
                self.plugin_stalled = True

    # ------------------------------------------------------------ optimizer

    def _targets_changed(self) -> bool:
        if self._solved_targets is None:
            return bool(self.vision_targets)
        old, new = self._solved_targets, self.vision_targets
        if len(old) != len(new):
            return True
        return any(math.dist(a, b) > REOPTIMIZE_EPS
                   for a, b in zip(old, new))

    def _maybe_optimize(self) -> None:
        if self.emergency or self.plugin_active:
            return
        if self.latest_batch is None or not self._targets_changed():
            return
        self._solved_targets = self.vision_targets
        mode = self.scenario.optimizer_mode
        if mode is OptimizerMode.CENTRAL:
            self._optimize_central()
        else:
            # distributed and emulation solve one drone at a time so claim
            # messages can cross the mesh between steps
            self._dispatch_queue = list(self.drone_ids)
            self._claims = {d: {} for d in self.drone_ids}

    def _believed_pose(self, drone_id: str) -> Optional[Pose2D]:
        fix = self.fixes.get(drone_id)
        if fix is None:
            return None
        compass = self.world.drones[drone_id].compass_yaw
        return Pose2D(fix.world_position[0], fix.world_position[1], compass)

    def _optimize_central(self) -> None:
        poses = []
        for drone_id in self.drone_ids:
            pose = self._believed_pose(drone_id)
            if pose is not None:
                poses.append((drone_id, pose))
        if not poses:
            return
        instance = CoverageInstance(
            targets=self.vision_targets, drones=tuple(poses),
            camera=self.scenario.camera,
            bounds=(self.scenario.arena.width, self.scenario.arena.height),
            grid=self.scenario.grid)
        directive = solve_central(instance)
        for drone_id, goal in directive.assignments:
            self._dispatch(drone_id, goal)

    def _drain_dispatch_queue(self) -> None:
        if not self._dispatch_queue:
            return
        drone_id = self._dispatch_queue.pop(0)
        pose = self._believed_pose(drone_id)
        if pose is None:
            return
        claimed: list = []
        for positions in self._claims[drone_id].values():
            claimed.extend(positions)
        view = LocalView(
            drone=drone_id, pose=pose, targets=self.vision_targets,
            claimed=tuple(claimed), camera=self.scenario.camera,
            bounds=(self.scenario.arena.width, self.scenario.arena.height),
            grid=self.scenario.grid)
        if self.scenario.optimizer_mode is OptimizerMode.EMULATION:
            goal = solve_emulated(view).pose
        else:
            goal = solve_distributed_step(view)
        self._dispatch(drone_id, goal)
        covered = tuple(t for t in self.vision_targets
                        if _sees(goal, t, self.scenario.camera))
        for peer in self.drone_ids:
            if peer != drone_id:
                self.mesh.send_data(drone_id, peer,
                                    ("claim", drone_id, covered))

    def _absorb_claims(self) -> None:
        new = self.mesh.delivered[self._mesh_cursor:]
        self._mesh_cursor = len(self.mesh.delivered)
        for _, node, packet in new:
            payload = packet.payload
            if (isinstance(payload, tuple) and len(payload) == 3
                    and payload[0] == "claim"):
                self._claims[node][payload[1]] = payload[2]

    def _dispatch(self, drone_id: str, goal: Pose2D) -> None:
        if self.manual_hold[drone_id]:
            return
        state = self.station.state_of(drone_id)
        if state is not None and state.objective.goal == goal and not state.done:
            return  # already flying there; do not reset the phase machine
        flying = self.world.drones[drone_id].phase is FlightPhase.FLYING
        ack = self.station.dispatch_objective(
            Objective(drone=drone_id, goal=goal, issued_at=self.now),
            self.scenario.control_mode, flying=flying)
        if ack.accepted:
            self.objectives_dispatched += 1

    # ------------------------------------------------------------ control

    def _collect_commands(self) -> dict[str, AtCommand]:
        commands: dict[str, AtCommand] = {}
        for drone_id in self.drone_ids:
            drone = self.world.drones[drone_id]
            if self.emergency:
                if drone.phase is not FlightPhase.LANDED:
                    commands[drone_id] = AtCommand.land()
                continue
            pending = self._pending.pop(drone_id, None)
            if pending is not None:
                commands[drone_id] = pending
                continue
            fix = self.fixes.get(drone_id)
            command = self.station.tick(drone_id, fix, drone.compass_yaw,
                                        drone.phase, self.now)
            if command is not None:
                commands[drone_id] = command
            self._watch_fault(drone_id)
        return commands

    def _watch_fault(self, drone_id: str) -> None:
        fault = self.station.fault_of(drone_id)
        if fault != self._fault_seen.get(drone_id):
            self._fault_seen[drone_id] = fault
            if fault is not None:
                self.faults.append((self.now, drone_id, fault))
                if self.service is not None:
                    self.service.broadcast_fault(drone_id, fault)

    # ------------------------------------------------------------ events

    def _handle_event(self, event: InboundEvent) -> None:
        message = event.message
        kind = message.kind
        payload = message.payload or {}
        reply_ok: dict = {"for": message.id}
        try:
            if kind == "SET_OBJECTIVES":
                reply_ok.update(self._apply_objectives(payload))
            elif kind == "MANUAL_CMD":
                reply_ok.update(self._apply_manual(payload))
            elif kind == "TAKEOFF":
                self._queue_command(payload, AtCommand.takeoff())
            elif kind == "LAND":
                self._queue_command(payload, AtCommand.land())
            elif kind == "EMERGENCY_STOP":
                self._emergency_stop()
            elif kind == "FRAME_REQUEST":
                b64, w, h = self.frame_ppm_base64()
                reply_ok.update({"frame_ppm_b64": b64, "width": w, "height": h})
            else:
                raise ValueError(f"unsupported kind {kind!r}")
        except Exception as exc:
            if self.service is not None:
                self.service.reply_fault(event.client, message.id, str(exc))
            return
        if self.service is not None:
            self.service.reply_ack(event.client, reply_ok)

    def _apply_objectives(self, payload: dict) -> dict:
        objectives = payload.get("objectives")
        if not isinstance(objectives, list):
            raise ValueError("objectives must be a list")
        accepted, rejected = [], {}
        for entry in objectives:
            drone_id = entry.get("drone")
            goal_raw = entry.get("goal")
            if drone_id not in self.drone_ids:
                rejected[str(drone_id)] = "unknown drone"
                continue
            if (not isinstance(goal_raw, list) or len(goal_raw) not in (2, 3)):
                rejected[drone_id] = "goal must be [x, y] or [x, y, yaw]"
                continue
            yaw = float(goal_raw[2]) if len(goal_raw) == 3 else 0.0
            goal = Pose2D(float(goal_raw[0]), float(goal_raw[1]), yaw)
            if not self.scenario.arena.in_bounds(goal.x, goal.y):
                rejected[drone_id] = "goal out of bounds"
                continue
            if self.manual_hold[drone_id]:
                rejected[drone_id] = "drone under manual hold"
                continue
            self._dispatch(drone_id, goal)
            accepted.append(drone_id)
        self.plugin_active = True
        self.plugin_stalled = False
        self._plugin_last = self.now
        return {"accepted": accepted, "rejected": rejected}

    def _apply_manual(self, payload: dict) -> dict:
        drone_id = payload.get("drone")
        if drone_id not in self.drone_ids:
            raise ValueError(f"unknown drone {drone_id!r}")
        goal_raw = payload.get("goal")
        if goal_raw is None:
            self.manual_hold[drone_id] = False
            return {"released": drone_id}
        if not isinstance(goal_raw, list) or len(goal_raw) not in (2, 3):
            raise ValueError("goal must be [x, y] or [x, y, yaw]")
        x, y = float(goal_raw[0]), float(goal_raw[1])
        if not self.scenario.arena.in_bounds(x, y):
            raise ValueError(f"goal ({x}, {y}) out of bounds")
        if len(goal_raw) == 3:
            yaw = float(goal_raw[2])
        else:
            yaw = self.world.drones[drone_id].compass_yaw
        self.manual_events += 1
        goal = Pose2D(x, y, yaw)
        flying = self.world.drones[drone_id].phase is FlightPhase.FLYING
        self.station.dispatch_objective(
            Objective(drone=drone_id, goal=goal, issued_at=self.now),
            self.scenario.control_mode, flying=flying)
        self.manual_hold[drone_id] = True
        return {"drone": drone_id, "goal": [x, y, yaw]}

    def _queue_command(self, payload: dict, command: AtCommand) -> None:
        drone_id = payload.get("drone")
        if drone_id not in self.drone_ids:
            raise ValueError(f"unknown drone {drone_id!r}")
        self._pending[drone_id] = command

    def _emergency_stop(self) -> None:
        self.emergency = True
        self.manual_events += 1
        for drone_id in self.drone_ids:
            self.station.cancel(drone_id)
            self.manual_hold[drone_id] = False
        self._dispatch_queue.clear()

    # ------------------------------------------------------------ metrics

    def covered_true(self) -> int:
        poses = [(d, s.pose) for d, s in self.world.drones.items()
                 if s.phase is FlightPhase.FLYING]
        targets = [t.position for t in self.world.targets]
        return evaluate_coverage(poses, targets, self.scenario.camera)

    def covered_belief(self) -> int:
        poses = []
        for drone_id in self.drone_ids:
            if self.world.drones[drone_id].phase is not FlightPhase.FLYING:
                continue
            pose = self._believed_pose(drone_id)
            if pose is not None:
                poses.append((drone_id, pose))
        return evaluate_coverage(poses, self.vision_targets,
                                 self.scenario.camera)

    def _record_metrics(self) -> None:
        drones = {}
        for drone_id in self.drone_ids:
            s = self.world.drones[drone_id]
            drones[drone_id] = (s.pose.x, s.pose.y, s.pose.yaw, s.phase.name,
                                self.station.phase_of(drone_id).name)
        covered = self.covered_true()
        self._covered_max = max(self._covered_max, covered)
        self.metrics.append(MetricsRow(
            tick=self.tick_count, time_s=self.now, covered_true=covered,
            covered_belief=self.covered_belief(), drones=drones))
        if self.metrics_limit is not None and len(self.metrics) > self.metrics_limit:
            del self.metrics[0]

    def _converged(self, window_s: float) -> bool:
        busy = bool(self._dispatch_queue) or self.emergency
        for drone_id in self.drone_ids:
            state = self.station.state_of(drone_id)
            if state is not None and not state.done:
                busy = True
        last_script = max((t for target in self.world.targets
                           for t, _ in target.script), default=-1.0)
        if self.now <= last_script + 2 * VISION_PERIOD:
            busy = True
        if busy:
            self._converged_since = None
            return False
        if self._converged_since is None:
            self._converged_since = self.now
            return False
        return self.now - self._converged_since >= window_s

    # ------------------------------------------------------------ exports

    def state_payload(self) -> dict:
        arena = self.scenario.arena
        cam = self.scenario.camera
        batch = self.latest_batch
        drones = []
        for drone_id in self.drone_ids:
            s = self.world.drones[drone_id]
            fix = self.fixes.get(drone_id)
            state = self.station.state_of(drone_id)
            objective = None
            if state is not None and not state.done:
                g = state.objective.goal
                objective = [g.x, g.y, g.yaw]
            drones.append({
                "id": drone_id,
                "fix": list(fix.world_position) if fix else None,
                "compass": s.compass_yaw,
                "phase": s.phase.name,
                "controller_phase": self.station.phase_of(drone_id).name,
                "battery": s.battery,
                "fault": self.station.fault_of(drone_id),
                "objective": objective,
                "manual_hold": self.manual_hold[drone_id],
            })
        return {
            "tick": self.tick_count,
            "time_s": self.now,
            "stale": batch.stale if batch else True,
            "drones": drones,
            "targets": [list(t) for t in self.vision_targets],
            "covered_count": self.covered_belief(),
            "emergency": self.emergency,
            "arena": {"width": arena.width, "height": arena.height},
            "camera": {"fov": cam.fov, "r_min": cam.r_min, "r_max": cam.r_max},
        }

    def summary(self) -> dict:
        return {
            "scenario": self.scenario.name,
            "seed": self.seed,
            "ticks": self.tick_count,
            "sim_time_s": round(self.now, 6),
            "covered_count_final": self.covered_true(),
            "covered_count_max": self._covered_max,
            "objectives_dispatched": self.objectives_dispatched,
            "manual_events": self.manual_events,
            "emergency": self.emergency,
            "plugin": {"active": self.plugin_active,
                       "stalled": self.plugin_stalled},
            "faults": [{"time_s": t, "drone": d, "fault": f}
                       for t, d, f in self.faults],
            "drones": {
                drone_id: {
                    "pose": [s.pose.x, s.pose.y, s.pose.yaw],
                    "phase": s.phase.name,
                    "controller_phase": self.station.phase_of(drone_id).name,
                    "battery": round(s.battery, 6),
                    "link": {
                        "objectives": self.station.stats[drone_id].objectives,
                        "commands": self.station.stats[drone_id].commands,
                    },
                }
                for drone_id, s in sorted(self.world.drones.items())
            },
        }

    def metrics_header(self) -> list[str]:
        cols = ["tick", "time_s", "covered_true", "covered_belief"]
        for drone_id in self.drone_ids:
            cols += [f"{drone_id}_x", f"{drone_id}_y", f"{drone_id}_yaw",
                     f"{drone_id}_phase", f"{drone_id}_controller"]
        return cols

    def metrics_rows(self):
        for row in self.metrics:
            out = [row.tick, f"{row.time_s:.6f}", row.covered_true,
                   row.covered_belief]
            for drone_id in self.drone_ids:
                x, y, yaw, phase, cphase = row.drones[drone_id]
                out += [f"{x:.9f}", f"{y:.9f}", f"{yaw:.9f}", phase, cphase]
            yield out


def _sees(pose: Pose2D, target: tuple[float, float], camera) -> bool:
    from .coverage import is_covered
    return is_covered(target, pose, camera)
