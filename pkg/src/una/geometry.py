"""Planar pose and angle arithmetic shared by every other module.

World frame convention: x to the right, y up the long side of the arena,
yaw measured counter-clockwise from the +x axis and always stored
normalized to [-pi, pi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Normalize an angle to [-pi, pi)."""
    wrapped = math.fmod(theta + math.pi, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    return wrapped - math.pi


def angle_diff(a: float, b: float) -> float:
    """Signed smallest rotation taking b to a, in [-pi, pi)."""
    return wrap_angle(a - b)


@dataclass(frozen=True)
class Pose2D:
    """Planar position in meters plus heading in radians.

    yaw is normalized on construction; x and y must be finite.
    """

    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.yaw)):
            raise ValueError(f"non-finite pose ({self.x}, {self.y}, {self.yaw})")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def distance_to(self, other: "Pose2D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def bearing_to(self, x: float, y: float) -> float:
        """Heading from this pose toward a point, in [-pi, pi)."""
        return math.atan2(y - self.y, x - self.x)
