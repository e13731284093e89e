"""Discrete-time world model: drone kinematics, target scripts, overhead rendering.

Motion model
------------
Flying drones obey a planar first-order tilt-to-velocity law, integrated
exactly per tick (the ODE is linear, so the discrete update uses the
closed-form exponential rather than an Euler step):

    accel = tilt_gain * tilt_world - drag * velocity

where ``tilt_world`` is the commanded (pitch, roll) pair rotated into the
world frame: pitch tilts about the lateral axis and pushes the drone along
its body-forward direction (cos yaw, sin yaw), roll tilts about the forward
axis and pushes it along body-right (sin yaw, -cos yaw). The combined tilt
magnitude saturates at 1, so terminal speed is tilt_gain / drag.

Heading integrates ``yaw_rate_setpoint * yaw_rate_max`` directly. Altitude
is not modeled: gaz is accepted but only gates takeoff/landing progress.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .geometry import Pose2D, wrap_angle


class FlightPhase(Enum):
    LANDED = "LANDED"
    TAKING_OFF = "TAKING_OFF"
    FLYING = "FLYING"
    LANDING = "LANDING"


class CommandKind(Enum):
    TAKEOFF = "TAKEOFF"
    LAND = "LAND"
    HOVER = "HOVER"
    PROGRESSIVE = "PROGRESSIVE"


@dataclass(frozen=True)
class AtCommand:
    """Flight command: takeoff/land/hover, or progressive tilt setpoints.

    All four progressive fields are dimensionless setpoints in [-1, 1];
    out-of-range construction is rejected.
    """

    kind: CommandKind
    roll: float = 0.0
    pitch: float = 0.0
    gaz: float = 0.0
    yaw_rate: float = 0.0

    def __post_init__(self):
        for name in ("roll", "pitch", "gaz", "yaw_rate"):
            value = getattr(self, name)
            if not math.isfinite(value) or not -1.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [-1, 1]")

    @classmethod
    def takeoff(cls) -> "AtCommand":
        return cls(CommandKind.TAKEOFF)

    @classmethod
    def land(cls) -> "AtCommand":
        return cls(CommandKind.LAND)

    @classmethod
    def hover(cls) -> "AtCommand":
        return cls(CommandKind.HOVER)

    @classmethod
    def progressive(cls, roll: float = 0.0, pitch: float = 0.0, gaz: float = 0.0,
                    yaw_rate: float = 0.0) -> "AtCommand":
        return cls(CommandKind.PROGRESSIVE, roll=roll, pitch=pitch, gaz=gaz, yaw_rate=yaw_rate)


@dataclass(frozen=True)
class DroneState:
    """Snapshot of one drone: pose, velocity, compass, battery, flight phase."""

    id: str
    pose: Pose2D
    velocity: tuple[float, float] = (0.0, 0.0)
    yaw_rate: float = 0.0
    compass_yaw: float = 0.0
    battery: float = 1.0
    phase: FlightPhase = FlightPhase.LANDED
    # held progressive setpoints, consumed by World.step each tick
    setpoints: AtCommand = field(default_factory=AtCommand.hover)
    # ticks remaining in TAKING_OFF / LANDING
    transition_ticks: int = 0
    # raised when the last command was dropped by the phase or range gate
    command_ignored: bool = False

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)


@dataclass(frozen=True)
class Target:
    """A trackable ground object, optionally repositioned by a script.

    The script is an ordered list of (time_s, (x, y)) moves; the target jumps
    to each scripted position once world time reaches it.
    """

    id: str
    position: tuple[float, float]
    script: tuple[tuple[float, tuple[float, float]], ...] = ()


@dataclass(frozen=True)
class NoiseConfig:
    """Std-devs of the zero-mean Gaussian noise terms, all seeded per run."""

    compass_std: float = 0.0175  # rad, about 1 degree
    actuation_std: float = 0.02  # tilt units
    render_std: float = 0.0      # 8-bit channel units

    @classmethod
    def zero(cls) -> "NoiseConfig":
        return cls(0.0, 0.0, 0.0)


# default tag palette; drones get distinct colors in roster order
DRONE_TAG_COLORS: tuple[tuple[int, int, int], ...] = (
    (230, 30, 30),    # red
    (30, 200, 30),    # green
    (40, 60, 230),    # blue
    (30, 200, 200),   # cyan
    (200, 40, 200),   # magenta
    (230, 230, 40),   # yellow
)
TARGET_TAG_COLOR: tuple[int, int, int] = (240, 140, 20)  # orange, shared by all targets
BACKGROUND_COLOR: tuple[int, int, int] = (34, 34, 34)


@dataclass(frozen=True)
class ArenaConfig:
    """Arena geometry, integration constants, render settings, noise."""

    width: float = 1.25
    height: float = 2.1
    camera_height: float = 5.2
    tick: float = 0.02
    v_max: float = 0.5
    tilt_gain: float = 1.0       # m/s^2 per unit tilt
    drag: float = 2.0            # 1/s
    yaw_rate_max: float = math.pi / 2
    takeoff_ticks: int = 50
    landing_ticks: int = 50
    battery_drain_per_s: float = 1.0 / 600.0
    render_width: int = 250
    render_height: int = 420
    tag_radius: float = 0.05     # meters, drones and targets alike
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def __post_init__(self):
        for name in ("width", "height", "camera_height", "tick"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.render_width <= 0 or self.render_height <= 0:
            raise ValueError("render resolution must be positive")

    @property
    def terminal_speed(self) -> float:
        return self.tilt_gain / self.drag

    @property
    def pixels_per_meter_x(self) -> float:
        return self.render_width / self.width

    @property
    def pixels_per_meter_y(self) -> float:
        return self.render_height / self.height

    @property
    def pixel_width_m(self) -> float:
        """Largest world extent of one pixel, the vision accuracy unit."""
        return max(self.width / self.render_width, self.height / self.render_height)

    def in_bounds(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.width and 0.0 <= y <= self.height


class SimulationFault(RuntimeError):
    """Raised when integration produces a non-finite state; halts the run."""


class UnknownDroneError(KeyError):
    """A command addressed a drone id that does not exist."""


def apply_command(drone: DroneState, cmd: AtCommand, config: ArenaConfig) -> DroneState:
    """Apply one command to a drone's phase machine and held setpoints.

    TAKEOFF works only from LANDED; every other command is ignored unless
    the drone is FLYING. Ignored commands set ``command_ignored`` on the
    returned state.
    """
    drone = replace(drone, command_ignored=False)
    if cmd.kind is CommandKind.TAKEOFF:
        if drone.phase is FlightPhase.LANDED:
            return replace(drone, phase=FlightPhase.TAKING_OFF,
                           transition_ticks=config.takeoff_ticks,
                           setpoints=AtCommand.hover())
        return replace(drone, command_ignored=True)
    if drone.phase is not FlightPhase.FLYING:
        return replace(drone, command_ignored=True)
    if cmd.kind is CommandKind.LAND:
        return replace(drone, phase=FlightPhase.LANDING,
                       transition_ticks=config.landing_ticks,
                       setpoints=AtCommand.hover())
    if cmd.kind is CommandKind.HOVER:
        return replace(drone, setpoints=AtCommand.hover())
    return replace(drone, setpoints=cmd)


def _scripted_position(target: Target, time_s: float) -> tuple[float, float]:
    position = target.position
    for move_time, move_pos in target.script:
        if time_s >= move_time:
            position = tuple(move_pos)
    return position


class World:
    """Owns the mutable simulation state; advanced only through step().

    Snapshots handed to other modules are frozen dataclasses, safe to share.
    Identical config + identical seed produce bit-identical trajectories.
    """

    def __init__(self, config: ArenaConfig, drones: list[DroneState],
                 targets: list[Target], seed: int = 0):
        ids = [d.id for d in drones]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate drone ids")
        self.config = config
        self.drones: dict[str, DroneState] = {d.id: d for d in drones}
        self.targets: list[Target] = list(targets)
        self.seed = seed
        self.time = 0.0
        self.tick_count = 0
        # independent seeded streams so drawing from one never shifts another
        self._compass_rng = np.random.default_rng([seed, 1])
        self._actuation_rng = np.random.default_rng([seed, 2])
        self._render_rng = np.random.default_rng([seed, 3])
        self._refresh_targets()

    def _refresh_targets(self):
        self.targets = [replace(t, position=_scripted_position(t, self.time))
                        for t in self.targets]

    def drone(self, drone_id: str) -> DroneState:
        try:
            return self.drones[drone_id]
        except KeyError:
            raise UnknownDroneError(drone_id) from None

    def apply(self, drone_id: str, cmd: AtCommand):
        self.drones[drone_id] = apply_command(self.drone(drone_id), cmd, self.config)

    def step(self, commands: dict[str, AtCommand] | None = None, dt: float | None = None):
        """Advance the world one tick.

        Commands are applied first, then flying drones integrate the tilt
        model exactly, targets follow their scripts, and noise is drawn from
        the seeded streams.
        """
        cfg = self.config
        if dt is None:
            dt = cfg.tick
        for drone_id, cmd in (commands or {}).items():
            self.apply(drone_id, cmd)

        for drone_id in sorted(self.drones):
            self.drones[drone_id] = self._step_drone(self.drones[drone_id], dt)

        self.time += dt
        self.tick_count += 1
        self._refresh_targets()

    def _step_drone(self, d: DroneState, dt: float) -> DroneState:
        cfg = self.config
        phase = d.phase
        transition = d.transition_ticks

        if phase is FlightPhase.TAKING_OFF:
            if d.setpoints.gaz >= 0.0:  # negative gaz pauses the ascent
                transition -= 1
            if transition <= 0:
                phase, transition = FlightPhase.FLYING, 0
        elif phase is FlightPhase.LANDING:
            if d.setpoints.gaz <= 0.0:  # positive gaz pauses the descent
                transition -= 1
            if transition <= 0:
                phase, transition = FlightPhase.LANDED, 0

        battery = d.battery
        if phase is not FlightPhase.LANDED:
            battery = max(0.0, battery - cfg.battery_drain_per_s * dt)

        if phase is not FlightPhase.FLYING:
            compass = wrap_angle(d.pose.yaw + self._compass_noise())
            return replace(d, phase=phase, transition_ticks=transition,
                           battery=battery, velocity=(0.0, 0.0), yaw_rate=0.0,
                           compass_yaw=compass)

        sp = d.setpoints
        pitch = sp.pitch + self._actuation_noise()
        roll = sp.roll + self._actuation_noise()
        # combined tilt saturates at unit magnitude: terminal speed stays k/c
        tilt_mag = math.hypot(pitch, roll)
        if tilt_mag > 1.0:
            pitch /= tilt_mag
            roll /= tilt_mag

        yaw = d.pose.yaw
        fx, fy = math.cos(yaw), math.sin(yaw)       # body-forward
        rx, ry = math.sin(yaw), -math.cos(yaw)      # body-right
        ax = cfg.tilt_gain * (pitch * fx + roll * rx)
        ay = cfg.tilt_gain * (pitch * fy + roll * ry)

        # exact update of v' = a - c v over [0, dt] with constant a
        c = cfg.drag
        decay = math.exp(-c * dt)
        vx, vy = d.velocity
        vx_eq, vy_eq = ax / c, ay / c
        new_vx = vx_eq + (vx - vx_eq) * decay
        new_vy = vy_eq + (vy - vy_eq) * decay
        # position gets the exact integral of v(t) over the tick
        dx = vx_eq * dt + (vx - vx_eq) * (1.0 - decay) / c
        dy = vy_eq * dt + (vy - vy_eq) * (1.0 - decay) / c

        speed = math.hypot(new_vx, new_vy)
        if speed > cfg.v_max:
            scale = cfg.v_max / speed
            new_vx *= scale
            new_vy *= scale

        x = min(max(d.pose.x + dx, 0.0), cfg.width)
        y = min(max(d.pose.y + dy, 0.0), cfg.height)
        yaw_rate = sp.yaw_rate * cfg.yaw_rate_max
        new_yaw = wrap_angle(yaw + yaw_rate * dt)

        if not all(math.isfinite(v) for v in (x, y, new_yaw, new_vx, new_vy)):
            raise SimulationFault(f"non-finite state for drone {d.id}")

        compass = wrap_angle(new_yaw + self._compass_noise())
        return replace(d, pose=Pose2D(x, y, new_yaw), velocity=(new_vx, new_vy),
                       yaw_rate=yaw_rate, compass_yaw=compass, battery=battery,
                       phase=phase, transition_ticks=transition)

    def _compass_noise(self) -> float:
        std = self.config.noise.compass_std
        if std <= 0.0:
            return 0.0
        return float(self._compass_rng.normal(0.0, std))

    def _actuation_noise(self) -> float:
        std = self.config.noise.actuation_std
        if std <= 0.0:
            return 0.0
        return float(self._actuation_rng.normal(0.0, std))

    def snapshot(self) -> "WorldSnapshot":
        return WorldSnapshot(
            time=self.time,
            tick=self.tick_count,
            drones=tuple(self.drones[k] for k in sorted(self.drones)),
            targets=tuple(self.targets),
        )

    def render_overhead(self, tag_colors: dict[str, tuple[int, int, int]] | None = None):
        """Render the top-down camera frame for the current world state.

        Each drone is a filled disk of its tag color, each target a disk of
        the shared target color. Per-pixel Gaussian noise is added when
        configured. Returns a vision.Frame.
        """
        from .vision import Frame  # local import keeps module layering one-way

        cfg = self.config
        w, h = cfg.render_width, cfg.render_height
        pixels = np.empty((h, w, 3), dtype=np.float64)
        pixels[:, :] = BACKGROUND_COLOR

        if tag_colors is None:
            tag_colors = default_tag_colors(sorted(self.drones))

        sx, sy = cfg.pixels_per_meter_x, cfg.pixels_per_meter_y
        cols = np.arange(w) + 0.5
        rows = np.arange(h) + 0.5

        def draw_disk(x: float, y: float, color: tuple[int, int, int]):
            cu, cv = x * sx, y * sy
            r_px = cfg.tag_radius * max(sx, sy)
            du2 = (cols - cu) ** 2
            dv2 = (rows - cv) ** 2
            inside = du2[None, :] + dv2[:, None] <= r_px * r_px
            pixels[inside] = color

        for target in self.targets:
            draw_disk(target.position[0], target.position[1], TARGET_TAG_COLOR)
        for drone_id in sorted(self.drones):
            d = self.drones[drone_id]
            draw_disk(d.pose.x, d.pose.y, tag_colors[drone_id])

        if cfg.noise.render_std > 0.0:
            pixels += self._render_rng.normal(0.0, cfg.noise.render_std, pixels.shape)

        return Frame(np.clip(np.rint(pixels), 0, 255).astype(np.uint8))


@dataclass(frozen=True)
class WorldSnapshot:
    """Immutable view of the world handed to vision, control, and the service."""

    time: float
    tick: int
    drones: tuple[DroneState, ...]
    targets: tuple[Target, ...]

    def drone(self, drone_id: str) -> DroneState:
        for d in self.drones:
            if d.id == drone_id:
                return d
        raise UnknownDroneError(drone_id)


def default_tag_colors(drone_ids: list[str]) -> dict[str, tuple[int, int, int]]:
    """Assign the default palette to drones in roster order."""
    if len(drone_ids) > len(DRONE_TAG_COLORS):
        raise ValueError(f"palette has {len(DRONE_TAG_COLORS)} colors, "
                         f"got {len(drone_ids)} drones")
    return {drone_id: DRONE_TAG_COLORS[i] for i, drone_id in enumerate(drone_ids)}
