"""Waypoint controller.

Drives a drone to a commanded planar pose in four steps: align the heading
to the arena's +y axis, translate along world x, translate along world y,
then rotate to the goal heading.  With the heading held at +y, pure roll
moves the drone along x and pure pitch along y, so each translation phase
owns exactly one command channel.

The position loop closes on vision fixes, the heading loop on the compass.
Control law is proportional with a saturation cap.  A fix older than the
stale timeout parks the drone in hover and flags a lost-tracking fault.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional

from .arena import AtCommand, FlightPhase
from .geometry import Pose2D, angle_diff
from .vision import Detection

ALIGN_HEADING = math.pi / 2.0


class ControlPhase(enum.IntEnum):
    IDLE = 0
    ALIGN_90 = 1
    MOVE_X = 2
    MOVE_Y = 3
    ROTATE_FINAL = 4
    DONE = 5


class ControlMode(enum.Enum):
    AUTOPILOT = "autopilot"
    REMOTE = "remote"


@dataclass(frozen=True)
class Objective:
    """A commanded pose for one drone."""

    drone: str
    goal: Pose2D
    issued_at: float = 0.0


@dataclass(frozen=True)
class ControlConfig:
    eps_pos: float = 0.05
    eps_yaw: float = math.radians(5.0)
    gain_pos: float = 1.0
    gain_yaw: float = 2.0
    command_cap: float = 1.0
    # a phase ends only after its error holds under exit_frac * eps for
    # settle_s, so residual velocity at the handoff is negligible
    exit_frac: float = 0.3
    settle_s: float = 0.2
    stale_timeout: float = 0.5

    def __post_init__(self):
        if self.eps_pos <= 0 or self.eps_yaw <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.exit_frac <= 1:
            raise ValueError("exit_frac must be in (0, 1]")


@dataclass(frozen=True)
class ControllerState:
    """Snapshot of one controller between ticks."""

    objective: Objective
    phase: ControlPhase = ControlPhase.IDLE
    last_fix: Optional[Detection] = None
    settle_start: Optional[float] = None
    fault: Optional[str] = None
    # true until the current phase has run its entry check
    entry_pending: bool = True

    @property
    def done(self) -> bool:
        return self.phase is ControlPhase.DONE


def _p_command(error: float, gain: float, cap: float) -> float:
    return max(-cap, min(cap, gain * error))


def _phase_error(phase: ControlPhase, goal: Pose2D,
                 x: float, y: float, compass: float) -> float:
    if phase is ControlPhase.ALIGN_90:
        return angle_diff(ALIGN_HEADING, compass)
    if phase is ControlPhase.MOVE_X:
        return goal.x - x
    if phase is ControlPhase.MOVE_Y:
        return goal.y - y
    if phase is ControlPhase.ROTATE_FINAL:
        return angle_diff(goal.yaw, compass)
    return 0.0


def _tolerance(phase: ControlPhase, cfg: ControlConfig) -> float:
    if phase in (ControlPhase.ALIGN_90, ControlPhase.ROTATE_FINAL):
        return cfg.eps_yaw
    return cfg.eps_pos


def control_tick(state: ControllerState, fix: Optional[Detection],
                 compass: float, now: float,
                 config: ControlConfig = ControlConfig(),
                 ) -> tuple[ControllerState, AtCommand]:
    """Advance the controller one tick and emit the command for it.

    Phases only move forward.  A phase is skipped when its exit condition
    already holds on entry (at the declared tolerance); an active phase
    ends once its error has settled under a tighter internal threshold.

    Args:
        state: controller state from the previous tick.
        fix: most recent vision fix for this drone, or None if never seen.
        compass: heading measurement in radians.
        now: current time in seconds.
        config: gains, caps, and tolerances.

    Returns:
        The successor state and the command to send this tick.
    """
    if fix is None or now - fix.timestamp > config.stale_timeout:
        faulted = replace(state, fault="lost_tracking", settle_start=None)
        return faulted, AtCommand.hover()

    if state.fault is not None:
        state = replace(state, fault=None)

    x, y = fix.world_position
    goal = state.objective.goal
    phase = state.phase
    settle_start = state.settle_start
    entry_pending = state.entry_pending

    if phase is ControlPhase.IDLE:
        phase = ControlPhase.ALIGN_90
        settle_start = None
        entry_pending = True

    def skip_satisfied(phase: ControlPhase) -> ControlPhase:
        # a phase whose exit already holds at the declared tolerance never runs
        while phase is not ControlPhase.DONE:
            err = _phase_error(phase, goal, x, y, compass)
            if abs(err) > _tolerance(phase, config):
                break
            phase = ControlPhase(phase + 1)
        return phase

    if entry_pending:
        phase = skip_satisfied(phase)
        entry_pending = False
        settle_start = None

    # an active phase ends once its error has settled under a tighter
    # internal threshold, so residual velocity at the handoff is negligible
    if phase is not ControlPhase.DONE:
        err = _phase_error(phase, goal, x, y, compass)
        if abs(err) <= config.exit_frac * _tolerance(phase, config):
            if settle_start is None:
                settle_start = now
            if now - settle_start >= config.settle_s:
                phase = skip_satisfied(ControlPhase(phase + 1))
                settle_start = None
        else:
            settle_start = None

    command = _command_for(phase, goal, x, y, compass, config)
    new_state = replace(state, phase=phase, last_fix=fix,
                        settle_start=settle_start,
                        entry_pending=entry_pending)
    return new_state, command


def _command_for(phase: ControlPhase, goal: Pose2D,
                 x: float, y: float, compass: float,
                 cfg: ControlConfig) -> AtCommand:
    cap = cfg.command_cap
    if phase is ControlPhase.ALIGN_90:
        yaw_err = angle_diff(ALIGN_HEADING, compass)
        return AtCommand.progressive(yaw_rate=_p_command(yaw_err, cfg.gain_yaw, cap))
    # heading hold keeps the translation axes decoupled during the moves
    hold = _p_command(angle_diff(ALIGN_HEADING, compass), cfg.gain_yaw, cap)
    if phase is ControlPhase.MOVE_X:
        # at heading +y, body-right is world +x
        return AtCommand.progressive(roll=_p_command(goal.x - x, cfg.gain_pos, cap),
                                     yaw_rate=hold)
    if phase is ControlPhase.MOVE_Y:
        return AtCommand.progressive(pitch=_p_command(goal.y - y, cfg.gain_pos, cap),
                                     yaw_rate=hold)
    if phase is ControlPhase.ROTATE_FINAL:
        yaw_err = angle_diff(goal.yaw, compass)
        return AtCommand.progressive(yaw_rate=_p_command(yaw_err, cfg.gain_yaw, cap))
    return AtCommand.hover()


def measure_placement_error(goal: Pose2D, fix: Detection) -> float:
    """Planar distance between the goal and the vision fix at DONE."""
    return math.hypot(fix.world_position[0] - goal.x,
                      fix.world_position[1] - goal.y)


@dataclass(frozen=True)
class Ack:
    accepted: bool
    reason: Optional[str] = None
    queued: bool = False


@dataclass
class LinkStats:
    """Messages that crossed the control network for one drone."""

    objectives: int = 0
    commands: int = 0


@dataclass
class _Slot:
    mode: ControlMode = ControlMode.AUTOPILOT
    state: Optional[ControllerState] = None
    pending: Optional[Objective] = None


class UnknownDroneError(KeyError):
    pass


class ControlStation:
    """Owns one controller per registered drone and routes objectives.

    In AUTOPILOT mode the objective is the only message that crosses the
    control network; commands are generated drone-side.  In REMOTE mode the
    controller runs centrally and every per-tick command crosses the
    network.  Either way the emitted commands are identical, so the two
    modes differ only in link traffic.
    """

    def __init__(self, config: ControlConfig = ControlConfig(),
                 bounds: Optional[tuple[float, float]] = None,
                 queue_when_landed: bool = True):
        self.config = config
        self.bounds = bounds
        self.queue_when_landed = queue_when_landed
        self._slots: dict[str, _Slot] = {}
        self.stats: dict[str, LinkStats] = {}
        self.traces: dict[str, list[tuple]] = {}

    def register(self, drone_id: str) -> None:
        self._slots.setdefault(drone_id, _Slot())
        self.stats.setdefault(drone_id, LinkStats())
        self.traces.setdefault(drone_id, [])

    def drone_ids(self) -> list[str]:
        return sorted(self._slots)

    def dispatch_objective(self, objective: Objective, mode: ControlMode,
                           flying: bool = True) -> Ack:
        slot = self._slots.get(objective.drone)
        if slot is None:
            return Ack(False, reason="unknown drone")
        if self.bounds is not None:
            w, h = self.bounds
            if not (0.0 <= objective.goal.x <= w and 0.0 <= objective.goal.y <= h):
                return Ack(False, reason="goal out of bounds")
        slot.mode = mode
        if mode is ControlMode.AUTOPILOT:
            self.stats[objective.drone].objectives += 1
        if not flying:
            if not self.queue_when_landed:
                return Ack(False, reason="drone not flying")
            slot.pending = objective
            slot.state = None
            return Ack(True, queued=True)
        slot.pending = None
        slot.state = ControllerState(objective=objective,
                                     phase=ControlPhase.ALIGN_90)
        return Ack(True)

    def tick(self, drone_id: str, fix: Optional[Detection], compass: float,
             phase: FlightPhase, now: float) -> Optional[AtCommand]:
        """Run one control tick for a drone; None when it has no objective."""
        slot = self._slots.get(drone_id)
        if slot is None:
            raise UnknownDroneError(drone_id)
        if slot.pending is not None and phase is FlightPhase.FLYING:
            slot.state = ControllerState(objective=slot.pending,
                                         phase=ControlPhase.ALIGN_90)
            slot.pending = None
        if slot.state is None or phase is not FlightPhase.FLYING:
            return None
        slot.state, command = control_tick(slot.state, fix, compass, now,
                                           self.config)
        if slot.mode is ControlMode.REMOTE:
            self.stats[drone_id].commands += 1
        self.traces[drone_id].append((
            now, slot.state.phase.name,
            None if fix is None else fix.world_position[0],
            None if fix is None else fix.world_position[1],
            compass, command.roll, command.pitch, command.gaz,
            command.yaw_rate,
        ))
        return command

    def cancel(self, drone_id: str) -> None:
        """Drop any active or queued objective; the drone goes idle."""
        slot = self._slots.get(drone_id)
        if slot is None:
            raise UnknownDroneError(drone_id)
        slot.state = None
        slot.pending = None

    def state_of(self, drone_id: str) -> Optional[ControllerState]:
        slot = self._slots.get(drone_id)
        if slot is None:
            raise UnknownDroneError(drone_id)
        return slot.state

    def phase_of(self, drone_id: str) -> ControlPhase:
        state = self.state_of(drone_id)
        return ControlPhase.IDLE if state is None else state.phase

    def fault_of(self, drone_id: str) -> Optional[str]:
        state = self.state_of(drone_id)
        return None if state is None else state.fault

    def trace_header(self) -> tuple[str, ...]:
        return ("time_s", "phase", "fix_x", "fix_y", "compass",
                "roll", "pitch", "gaz", "yaw_rate")
