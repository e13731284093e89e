"""Placement-error benchmark: random starts, one goal, empirical error CDF.

Each trial drops a single drone at a seeded random pose, flies it to the
goal through the full render-detect-control loop, and records the planar
error between the goal and the final vision fix at DONE.  Trials that
exhaust the tick budget are kept in the record as timeouts but excluded
from the CDF.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..arena import ArenaConfig, DroneState, FlightPhase, NoiseConfig, World
from ..control import (
    ControlConfig, ControlMode, ControlStation, Objective,
    measure_placement_error,
)
from ..geometry import Pose2D
from ..sim import VISION_PERIOD, build_calibration
from ..vision import Tracker, TARGET_TAG
from ..arena import default_tag_colors

START_MARGIN = 0.1  # random starts keep this far from the walls
DEFAULT_TRIALS = 14
DEFAULT_BUDGET = 3000


@dataclass(frozen=True)
class TrialResult:
    trial: int
    start: tuple[float, float, float]
    goal: tuple[float, float, float]
    final_fix: Optional[tuple[float, float]]
    error_m: Optional[float]  # None when timed out
    ticks: int
    timed_out: bool


@dataclass(frozen=True)
class ExperimentRecord:
    scenario_id: str
    goal: tuple[float, float, float]
    seed: int
    config_digest: str
    trials: tuple[TrialResult, ...]

    def __post_init__(self):
        for t in self.trials:
            if t.error_m is not None:
                if not math.isfinite(t.error_m) or t.error_m < 0:
                    raise ValueError(f"trial {t.trial} error {t.error_m}")

    def errors(self) -> list[float]:
        return sorted(t.error_m for t in self.trials if t.error_m is not None)

    def cdf(self) -> list[tuple[float, float]]:
        errors = self.errors()
        n = len(errors)
        return [(e, (i + 1) / n) for i, e in enumerate(errors)]


def _config_digest(arena: ArenaConfig, control: ControlConfig) -> str:
    blob = json.dumps({
        "arena": [arena.width, arena.height, arena.tick, arena.v_max,
                  arena.tilt_gain, arena.drag, arena.yaw_rate_max,
                  arena.render_width, arena.render_height, arena.tag_radius],
        "noise": [arena.noise.compass_std, arena.noise.actuation_std,
                  arena.noise.render_std],
        "control": [control.eps_pos, control.eps_yaw, control.gain_pos,
                    control.gain_yaw, control.command_cap, control.exit_frac,
                    control.settle_s, control.stale_timeout],
    }, separators=(",", ":"))
    return hashlib.sha256(blob.encode("ascii")).hexdigest()[:12]


def _random_start(rng: np.random.Generator, arena: ArenaConfig) -> Pose2D:
    x = rng.uniform(START_MARGIN, arena.width - START_MARGIN)
    y = rng.uniform(START_MARGIN, arena.height - START_MARGIN)
    yaw = rng.uniform(-math.pi, math.pi)
    return Pose2D(x, y, yaw)


def _fly_trial(arena: ArenaConfig, start: Pose2D, goal: Pose2D,
               control: ControlConfig, budget: int, world_seed: int):
    """One complete flight; returns (final_fix, ticks, timed_out)."""
    drone = DroneState(id="d1", pose=start, compass_yaw=start.yaw,
                       phase=FlightPhase.FLYING)
    world = World(arena, [drone], [], seed=world_seed)
    colors = default_tag_colors(["d1"])
    cal = build_calibration(arena, ["d1"])
    tracker = Tracker(lambda: world.render_overhead(colors), cal,
                      period=VISION_PERIOD)
    station = ControlStation(config=control, bounds=(arena.width, arena.height))
    station.register("d1")
    station.dispatch_objective(Objective(drone="d1", goal=goal),
                               ControlMode.AUTOPILOT)
    fix = None
    next_vision = 0.0
    for tick in range(budget):
        now = tick * arena.tick
        if now + 1e-9 >= next_vision:
            batch = tracker.tick(now=now)
            for det in batch.detections:
                if det.tag == "d1":
                    fix = det
            next_vision += VISION_PERIOD
        state = world.drones["d1"]
        command = station.tick("d1", fix, state.compass_yaw, state.phase, now)
        world.step({} if command is None else {"d1": command})
        if station.state_of("d1").done:
            return fix, tick + 1, False
    return fix, budget, True


def run_placement_benchmark(trials: int = DEFAULT_TRIALS,
                            goal: Optional[Pose2D] = None,
                            noise: Optional[NoiseConfig] = None,
                            seed: int = 0,
                            arena: Optional[ArenaConfig] = None,
                            control: Optional[ControlConfig] = None,
                            budget_ticks: int = DEFAULT_BUDGET) -> ExperimentRecord:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if arena is None:
        arena = ArenaConfig()
    if noise is not None:
        arena = ArenaConfig(**{**_arena_kwargs(arena), "noise": noise})
    if goal is None:
        goal = Pose2D(arena.width / 2, arena.height / 2, 0.0)
    if control is None:
        control = ControlConfig()
    results = []
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        start = _random_start(rng, arena)
        world_seed = int(rng.integers(0, 2**31 - 1))
        fix, ticks, timed_out = _fly_trial(arena, start, goal, control,
                                           budget_ticks, world_seed)
        error = None
        if not timed_out and fix is not None:
            error = measure_placement_error(goal, fix)
        results.append(TrialResult(
            trial=trial, start=(start.x, start.y, start.yaw),
            goal=(goal.x, goal.y, goal.yaw),
            final_fix=None if fix is None else tuple(fix.world_position),
            error_m=error, ticks=ticks,
            timed_out=timed_out or fix is None))
    return ExperimentRecord(
        scenario_id="placement-benchmark", goal=(goal.x, goal.y, goal.yaw),
        seed=seed, config_digest=_config_digest(arena, control),
        trials=tuple(results))


def _arena_kwargs(arena: ArenaConfig) -> dict:
    return {f: getattr(arena, f) for f in (
        "width", "height", "camera_height", "tick", "v_max", "tilt_gain",
        "drag", "yaw_rate_max", "takeoff_ticks", "landing_ticks",
        "battery_drain_per_s", "render_width", "render_height", "tag_radius")}


def write_cdf_csv(record: ExperimentRecord, path) -> None:
    """Two sections: per-trial errors, then the empirical CDF."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "error_m"])
        for t in record.trials:
            value = "timeout" if t.error_m is None else f"{t.error_m:.9f}"
            writer.writerow([t.trial, value])
        writer.writerow(["cdf_x", "cdf_y"])
        for x, y in record.cdf():
            writer.writerow([f"{x:.9f}", f"{y:.9f}"])
