"""Target coverage optimizer.

Computes location and orientation directives that maximize how many targets
sit inside drone camera fields of view.  A target is covered when it lies in
the camera's range annulus and within half the field of view of the heading.

The solver is greedy over a candidate grid: drones are processed in
ascending id order and each takes the candidate pose covering the most
not-yet-covered targets.  Ties prefer the shortest travel from the drone's
current pose, then the earliest grid candidate.  The same single-drone step
serves three modes: CENTRAL runs the full greedy centrally, DISTRIBUTED has
each drone solve its own step over unclaimed targets, and EMULATION ships a
drone's view to the central node and returns the identical result.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .geometry import Pose2D, angle_diff

Point = tuple[float, float]


class OptimizerMode(enum.Enum):
    CENTRAL = "central"
    DISTRIBUTED = "distributed"
    EMULATION = "emulation"


@dataclass(frozen=True)
class CameraModel:
    """Horizontal field of view plus a usable range annulus."""

    fov: float = math.radians(93.0)
    r_min: float = 0.1
    r_max: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.fov < math.tau:
            raise ValueError("fov must be in (0, 2*pi)")
        if not 0.0 <= self.r_min < self.r_max:
            raise ValueError("need 0 <= r_min < r_max")


@dataclass(frozen=True)
class GridSpec:
    """Candidate pose lattice: position pitch in meters, yaw slot count."""

    position_pitch: float = 0.1
    orientations: int = 8

    def __post_init__(self):
        if self.position_pitch <= 0 or self.orientations < 1:
            raise ValueError("grid must be non-degenerate")


@dataclass(frozen=True)
class CoverageInstance:
    targets: tuple[Point, ...]
    drones: tuple[tuple[str, Pose2D], ...]
    camera: CameraModel = CameraModel()
    bounds: tuple[float, float] = (1.25, 2.1)
    grid: GridSpec = GridSpec()

    def to_json(self) -> str:
        return json.dumps({
            "targets": [list(t) for t in self.targets],
            "drones": [[d, [p.x, p.y, p.yaw]] for d, p in self.drones],
            "camera": [self.camera.fov, self.camera.r_min, self.camera.r_max],
            "bounds": list(self.bounds),
            "grid": [self.grid.position_pitch, self.grid.orientations],
        })

    @classmethod
    def from_json(cls, text: str) -> "CoverageInstance":
        raw = json.loads(text)
        return cls(
            targets=tuple((t[0], t[1]) for t in raw["targets"]),
            drones=tuple((d, Pose2D(*p)) for d, p in raw["drones"]),
            camera=CameraModel(*raw["camera"]),
            bounds=(raw["bounds"][0], raw["bounds"][1]),
            grid=GridSpec(raw["grid"][0], int(raw["grid"][1])),
        )


@dataclass(frozen=True)
class Directive:
    """Solver output: one commanded pose per drone."""

    assignments: tuple[tuple[str, Pose2D], ...]
    covered_count: int

    def as_dict(self) -> dict[str, Pose2D]:
        return dict(self.assignments)

    def to_json(self) -> str:
        return json.dumps({
            "assignments": [[d, [p.x, p.y, p.yaw]] for d, p in self.assignments],
            "covered_count": self.covered_count,
        })

    @classmethod
    def from_json(cls, text: str) -> "Directive":
        raw = json.loads(text)
        return cls(
            assignments=tuple((d, Pose2D(*p)) for d, p in raw["assignments"]),
            covered_count=int(raw["covered_count"]),
        )


@dataclass(frozen=True)
class LocalView:
    """What one drone knows when it solves its own step.

    ``claimed`` holds target positions already claimed by peers, relayed
    verbatim over the mesh, so membership is exact tuple equality.
    """

    drone: str
    pose: Pose2D
    targets: tuple[Point, ...]
    claimed: tuple[Point, ...] = ()
    camera: CameraModel = CameraModel()
    bounds: tuple[float, float] = (1.25, 2.1)
    grid: GridSpec = GridSpec()

    def to_json(self) -> str:
        return json.dumps({
            "drone": self.drone,
            "pose": [self.pose.x, self.pose.y, self.pose.yaw],
            "targets": [list(t) for t in self.targets],
            "claimed": [list(t) for t in self.claimed],
            "camera": [self.camera.fov, self.camera.r_min, self.camera.r_max],
            "bounds": list(self.bounds),
            "grid": [self.grid.position_pitch, self.grid.orientations],
        })

    @classmethod
    def from_json(cls, text: str) -> "LocalView":
        raw = json.loads(text)
        return cls(
            drone=raw["drone"],
            pose=Pose2D(*raw["pose"]),
            targets=tuple((t[0], t[1]) for t in raw["targets"]),
            claimed=tuple((t[0], t[1]) for t in raw["claimed"]),
            camera=CameraModel(*raw["camera"]),
            bounds=(raw["bounds"][0], raw["bounds"][1]),
            grid=GridSpec(raw["grid"][0], int(raw["grid"][1])),
        )


def is_covered(target: Point, pose: Pose2D, camera: CameraModel) -> bool:
    """True iff the target sits inside the camera's annular wedge."""
    dx = target[0] - pose.x
    dy = target[1] - pose.y
    dist = math.hypot(dx, dy)
    if not camera.r_min <= dist <= camera.r_max:
        return False
    bearing = math.atan2(dy, dx)
    return abs(angle_diff(bearing, pose.yaw)) <= camera.fov / 2.0


def candidate_poses(bounds: tuple[float, float], grid: GridSpec) -> list[Pose2D]:
    """Lattice of candidate poses in grid order: x, then y, then yaw.

    Positions step by the pitch from the origin, inclusive of any lattice
    point on the far edge.  Yaw slots divide the circle evenly from -pi.
    """
    width, height = bounds
    nx = int(width / grid.position_pitch + 1e-9) + 1
    ny = int(height / grid.position_pitch + 1e-9) + 1
    yaws = [-math.pi + k * math.tau / grid.orientations
            for k in range(grid.orientations)]
    poses = []
    for i in range(nx):
        x = i * grid.position_pitch
        for j in range(ny):
            y = j * grid.position_pitch
            for yaw in yaws:
                poses.append(Pose2D(x, y, yaw))
    return poses


class NoCandidatesError(ValueError):
    pass


def _best_step(pose: Pose2D, todo: Sequence[Point], camera: CameraModel,
               candidates: Sequence[Pose2D]) -> tuple[Pose2D, int]:
    """Best single-drone move: maximize coverage of ``todo``.

    Ties prefer least travel from ``pose``, then earliest candidate.  When
    nothing new is coverable the drone keeps its current pose.
    """
    best_pose = pose
    best_count = 0
    best_travel = math.inf
    for cand in candidates:
        count = sum(1 for t in todo if is_covered(t, cand, camera))
        if count == 0:
            continue
        travel = math.hypot(cand.x - pose.x, cand.y - pose.y)
        if count > best_count or (count == best_count and travel < best_travel):
            best_pose, best_count, best_travel = cand, count, travel
    return best_pose, best_count


def evaluate_coverage(assignments: Sequence[tuple[str, Pose2D]],
                      targets: Sequence[Point],
                      camera: CameraModel) -> int:
    """Number of targets covered by at least one assigned pose."""
    return sum(1 for t in targets
               if any(is_covered(t, p, camera) for _, p in assignments))


def solve_central(instance: CoverageInstance) -> Directive:
    """Greedy assignment over every drone, ascending id order.

    Raises:
        NoCandidatesError: the candidate grid is empty.
    """
    candidates = candidate_poses(instance.bounds, instance.grid)
    if not candidates:
        raise NoCandidatesError("empty candidate grid")
    remaining = list(instance.targets)
    assignments = []
    for drone_id, pose in sorted(instance.drones, key=lambda d: d[0]):
        chosen, _ = _best_step(pose, remaining, instance.camera, candidates)
        assignments.append((drone_id, chosen))
        remaining = [t for t in remaining
                     if not is_covered(t, chosen, instance.camera)]
    covered = evaluate_coverage(assignments, instance.targets, instance.camera)
    return Directive(assignments=tuple(assignments), covered_count=covered)


def solve_distributed_step(view: LocalView) -> Pose2D:
    """One drone's own greedy step over targets no peer has claimed."""
    claimed = set(view.claimed)
    todo = [t for t in view.targets if t not in claimed]
    if not todo:
        return view.pose
    candidates = candidate_poses(view.bounds, view.grid)
    if not candidates:
        raise NoCandidatesError("empty candidate grid")
    chosen, _ = _best_step(view.pose, todo, view.camera, candidates)
    return chosen


@dataclass(frozen=True)
class EmulatedResult:
    pose: Pose2D
    degraded: bool = False


def solve_emulated(view: LocalView,
                   transport: Optional[Callable[[LocalView], Pose2D]] = None,
                   ) -> EmulatedResult:
    """Off-load the distributed step to the central node.

    ``transport`` carries the view to the central solver and returns its
    answer; None computes in-process (the degenerate loopback).  A failed
    transport degrades to holding the current pose.
    """
    if transport is None:
        return EmulatedResult(solve_distributed_step(view))
    try:
        return EmulatedResult(transport(view))
    except Exception:
        return EmulatedResult(view.pose, degraded=True)
