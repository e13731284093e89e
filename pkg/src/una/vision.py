"""Overhead-camera localization: color filter, erosion, contours, world scaling.

Each tag is found by the same three-step pass: threshold the frame in HSV
space against the tag's calibrated range, erode once with a 3x3 kernel to
kill sub-kernel noise, then extract 8-connected regions and take the pixel
mass centroid of the winner. Pixel centroids map to meters through the
axis-aligned calibration scale (single high-mounted camera, no homography).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

Mask = np.ndarray  # bool array, shape (h, w)

TARGET_TAG = "target"


@dataclass(frozen=True)
class Frame:
    """RGB raster, 8 bits per channel, shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise ValueError(f"expected (h, w, 3) uint8 pixels, got {p.shape} {p.dtype}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def rgb_to_hsv(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized RGB [0,255] -> (hue deg [0,360), sat [0,1], val [0,1])."""
    rgb = np.ascontiguousarray(pixels, dtype=np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    # pairwise plane ops beat axis reductions on this layout
    maxc = np.maximum(r, np.maximum(g, b))
    minc = np.minimum(r, np.minimum(g, b))
    delta = maxc - minc

    hue = np.zeros_like(maxc)
    nonzero = delta > 0
    rmax = nonzero & (maxc == r)
    gmax = nonzero & ~rmax & (maxc == g)
    bmax = nonzero & ~rmax & ~gmax
    np.divide(g - b, delta, out=hue, where=rmax)
    hue = np.where(gmax, (b - r) / np.where(nonzero, delta, 1.0) + 2.0, hue)
    hue = np.where(bmax, (r - g) / np.where(nonzero, delta, 1.0) + 4.0, hue)
    hue = (hue * 60.0) % 360.0

    sat = np.zeros_like(maxc)
    np.divide(delta, maxc, out=sat, where=maxc > 0)
    return hue, sat, maxc


@dataclass(frozen=True)
class ColorRange:
    """Per-channel HSV bounds; the hue interval may wrap around 0."""

    h_low: float
    h_high: float
    s_low: float = 0.0
    s_high: float = 1.0
    v_low: float = 0.0
    v_high: float = 1.0

    def __post_init__(self):
        for name in ("h_low", "h_high"):
            v = getattr(self, name)
            if not 0.0 <= v < 360.0:
                raise ValueError(f"{name}={v} outside [0, 360)")
        for low, high in (("s_low", "s_high"), ("v_low", "v_high")):
            if getattr(self, low) > getattr(self, high):
                raise ValueError(f"{low} > {high}")

    @property
    def hue_wraps(self) -> bool:
        return self.h_low > self.h_high

    def contains_hsv(self, h: float, s: float, v: float) -> bool:
        if self.hue_wraps:
            hue_ok = h >= self.h_low or h <= self.h_high
        else:
            hue_ok = self.h_low <= h <= self.h_high
        return hue_ok and self.s_low <= s <= self.s_high and self.v_low <= v <= self.v_high

    @classmethod
    def around_rgb(cls, rgb: tuple[int, int, int], hue_width: float = 12.0,
                   s_slack: float = 0.35, v_slack: float = 0.35) -> "ColorRange":
        """Build a tolerant range centered on a known tag color."""
        h, s, v = rgb_to_hsv(np.array([[rgb]], dtype=np.uint8))
        h, s, v = float(h[0, 0]), float(s[0, 0]), float(v[0, 0])
        return cls(
            h_low=(h - hue_width) % 360.0,
            h_high=(h + hue_width) % 360.0,
            s_low=max(0.0, s - s_slack),
            s_high=1.0,
            v_low=max(0.0, v - v_slack),
            v_high=1.0,
        )


def _mask_from_hsv(hsv: tuple[np.ndarray, np.ndarray, np.ndarray],
                   color_range: ColorRange) -> Mask:
    h, s, v = hsv
    if color_range.hue_wraps:
        hue_ok = (h >= color_range.h_low) | (h <= color_range.h_high)
    else:
        hue_ok = (h >= color_range.h_low) & (h <= color_range.h_high)
    return (hue_ok
            & (s >= color_range.s_low) & (s <= color_range.s_high)
            & (v >= color_range.v_low) & (v <= color_range.v_high))


def in_range(frame: Frame, color_range: ColorRange) -> Mask:
    """Bit set iff the pixel's HSV value lies inside the range on all channels."""
    return _mask_from_hsv(rgb_to_hsv(frame.pixels), color_range)


def erode(mask: Mask, iterations: int = 1) -> Mask:
    """Binary erosion with a 3x3 all-ones kernel; outside the image is unset.

    A bit survives one pass iff its full 3x3 neighborhood was set.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    out = mask.astype(bool)
    for _ in range(iterations):
        padded = np.zeros((out.shape[0] + 2, out.shape[1] + 2), dtype=bool)
        padded[1:-1, 1:-1] = out
        result = np.ones_like(out)
        for dr in (0, 1, 2):
            for dc in (0, 1, 2):
                result &= padded[dr:dr + out.shape[0], dc:dc + out.shape[1]]
        out = result
    return out


@dataclass(frozen=True)
class Region:
    """One 8-connected foreground region."""

    area: int
    centroid: tuple[float, float]       # (row, col) pixel-mass mean of indices
    boundary: tuple[tuple[int, int], ...]  # outer boundary, border-following order


# Moore neighborhood in clockwise order starting from west
_MOORE = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))


def _trace_boundary(mask: Mask, start: tuple[int, int]) -> tuple[tuple[int, int], ...]:
    """Moore-neighbor border following from the region's topmost-leftmost pixel.

    Walks the outer boundary clockwise; terminates when the (pixel, backtrack)
    state of the start repeats. Single isolated pixels yield themselves.
    """
    h, w = mask.shape

    def neighbors_from(p: tuple[int, int], back: tuple[int, int]):
        offset = (back[0] - p[0], back[1] - p[1])
        start_idx = _MOORE.index(offset)
        for k in range(1, len(_MOORE) + 1):
            dr, dc = _MOORE[(start_idx + k) % len(_MOORE)]
            yield (p[0] + dr, p[1] + dc)

    def is_set(p: tuple[int, int]) -> bool:
        return 0 <= p[0] < h and 0 <= p[1] < w and bool(mask[p])

    boundary = [start]
    backtrack = (start[0], start[1] - 1)  # start is topmost-leftmost: west is empty
    current = start
    seen_moves: set[tuple[tuple[int, int], tuple[int, int]]] = set()
    while True:
        nxt = None
        prev = backtrack
        for cand in neighbors_from(current, prev):
            if is_set(cand):
                nxt = cand
                break
            prev = cand
        if nxt is None:  # isolated pixel
            break
        if (current, nxt) in seen_moves:  # walk closed (Jacob's criterion, generalized)
            break
        seen_moves.add((current, nxt))
        boundary.append(nxt)
        backtrack = prev
        current = nxt
    if len(boundary) > 1 and boundary[-1] == start:
        boundary.pop()
    return tuple(boundary)


def find_contours(mask: Mask) -> list[Region]:
    """Extract all 8-connected regions with area, centroid, and outer boundary.

    Region pixels are gathered by run-based connected-component labeling
    (union-find over row runs); the boundary comes from Moore border
    following. Regions are ordered by area descending, then centroid.
    """
    mask = mask.astype(bool)
    if not mask.any():
        return []

    # row runs: (row, col_start, col_end_exclusive)
    runs: list[tuple[int, int, int]] = []
    run_rows: dict[int, list[int]] = {}
    for row in np.flatnonzero(mask.any(axis=1)):
        row = int(row)
        padded = np.concatenate(([False], mask[row], [False]))
        changes = np.flatnonzero(padded[1:] != padded[:-1])
        starts, ends = changes[0::2], changes[1::2]
        for s, e in zip(starts, ends):
            run_rows.setdefault(row, []).append(len(runs))
            runs.append((row, int(s), int(e)))

    parent = list(range(len(runs)))

    def find(i: int) -> int:
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    def union(a: int, b: int):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    # 8-connectivity: runs on adjacent rows touch if column spans overlap
    # when widened by one pixel on each side
    for row, indices in run_rows.items():
        above = run_rows.get(row - 1)
        if not above:
            continue
        for i in indices:
            _, s, e = runs[i]
            for j in above:
                _, s2, e2 = runs[j]
                if s < e2 + 1 and s2 < e + 1:
                    union(i, j)

    groups: dict[int, list[int]] = {}
    for i in range(len(runs)):
        groups.setdefault(find(i), []).append(i)

    regions = []
    for indices in groups.values():
        area = 0
        row_sum = 0.0
        col_sum = 0.0
        first = None
        for i in indices:
            row, s, e = runs[i]
            length = e - s
            area += length
            row_sum += row * length
            col_sum += (s + e - 1) * length / 2.0
            if first is None or (row, s) < first:
                first = (row, s)
        boundary = _trace_boundary(mask, first)
        regions.append(Region(area=area,
                              centroid=(row_sum / area, col_sum / area),
                              boundary=boundary))

    regions.sort(key=lambda r: (-r.area, r.centroid[0], r.centroid[1]))
    return regions


@dataclass(frozen=True)
class Detection:
    """One localized tag: sub-pixel centroid plus its world-frame position."""

    tag: str
    pixel_centroid: tuple[float, float]   # (u, v) = (col, row), sub-pixel
    world_position: tuple[float, float]   # meters
    area: int
    timestamp: float = 0.0


@dataclass(frozen=True)
class Calibration:
    """Pixel-to-world scale and the per-tag color range table."""

    meters_per_pixel_x: float
    meters_per_pixel_y: float
    origin_u: float = 0.0   # pixel offset of the world origin
    origin_v: float = 0.0
    drone_ranges: dict[str, ColorRange] = field(default_factory=dict)
    target_range: ColorRange | None = None
    erode_iterations: int = 1
    min_area: int = 1

    def __post_init__(self):
        if self.meters_per_pixel_x <= 0 or self.meters_per_pixel_y <= 0:
            raise ValueError("scales must be > 0")

    def pixel_to_world(self, u: float, v: float) -> tuple[float, float]:
        # +0.5 shifts from index space to pixel-center space
        return ((u + 0.5 - self.origin_u) * self.meters_per_pixel_x,
                (v + 0.5 - self.origin_v) * self.meters_per_pixel_y)

    @property
    def pixel_width_m(self) -> float:
        return max(self.meters_per_pixel_x, self.meters_per_pixel_y)

    def to_json(self) -> str:
        def range_dict(r: ColorRange) -> dict:
            return {"h": [r.h_low, r.h_high], "s": [r.s_low, r.s_high],
                    "v": [r.v_low, r.v_high]}

        doc = {
            "meters_per_pixel_x": self.meters_per_pixel_x,
            "meters_per_pixel_y": self.meters_per_pixel_y,
            "origin_px": [self.origin_u, self.origin_v],
            "erode_iterations": self.erode_iterations,
            "min_area": self.min_area,
            "drone_tags": {tag: range_dict(r) for tag, r in self.drone_ranges.items()},
            "target_tag": range_dict(self.target_range) if self.target_range else None,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Calibration":
        doc = json.loads(text)

        def parse_range(d: dict) -> ColorRange:
            return ColorRange(h_low=d["h"][0], h_high=d["h"][1],
                              s_low=d["s"][0], s_high=d["s"][1],
                              v_low=d["v"][0], v_high=d["v"][1])

        origin = doc.get("origin_px", [0.0, 0.0])
        return cls(
            meters_per_pixel_x=doc["meters_per_pixel_x"],
            meters_per_pixel_y=doc["meters_per_pixel_y"],
            origin_u=origin[0],
            origin_v=origin[1],
            drone_ranges={tag: parse_range(d) for tag, d in doc.get("drone_tags", {}).items()},
            target_range=parse_range(doc["target_tag"]) if doc.get("target_tag") else None,
            erode_iterations=doc.get("erode_iterations", 1),
            min_area=doc.get("min_area", 1),
        )


@dataclass(frozen=True)
class LocateResult:
    detections: tuple[Detection, ...]
    missing: tuple[str, ...]   # drone tags with no surviving region


def locate_tags(frame: Frame, cal: Calibration, timestamp: float = 0.0) -> LocateResult:
    """Run the filter/erode/contour pass for every configured tag color.

    Drone tags keep only the largest surviving region (ties resolved toward
    smaller centroid row, then column); every surviving target-colored
    region becomes its own detection under the shared target tag.
    """
    detections: list[Detection] = []
    missing: list[str] = []
    hsv = rgb_to_hsv(frame.pixels)  # converted once, shared by every tag pass

    def regions_for(color_range: ColorRange) -> list[Region]:
        mask = erode(_mask_from_hsv(hsv, color_range), cal.erode_iterations)
        return [r for r in find_contours(mask) if r.area >= cal.min_area]

    def to_detection(tag: str, region: Region) -> Detection:
        row, col = region.centroid
        wx, wy = cal.pixel_to_world(col, row)
        return Detection(tag=tag, pixel_centroid=(col, row), world_position=(wx, wy),
                         area=region.area, timestamp=timestamp)

    for tag in sorted(cal.drone_ranges):
        regions = regions_for(cal.drone_ranges[tag])
        if regions:
            detections.append(to_detection(tag, regions[0]))
        else:
            missing.append(tag)

    if cal.target_range is not None:
        for region in regions_for(cal.target_range):
            detections.append(to_detection(TARGET_TAG, region))

    return LocateResult(detections=tuple(detections), missing=tuple(missing))


@dataclass(frozen=True)
class DetectionBatch:
    detections: tuple[Detection, ...]
    missing: tuple[str, ...]
    timestamp: float
    stale: bool = False


class Tracker:
    """Fixed-rate tracker: pulls frames, locates tags, publishes batches.

    When the frame provider fails or returns nothing, the previous batch is
    republished with the stale flag (detection timestamps keep aging, which
    is what trips the controller's lost-tracking fault).
    """

    def __init__(self, provider, cal: Calibration, period: float = 0.05):
        self.provider = provider
        self.cal = cal
        self.period = period
        self.ticks = 0
        self.last_batch: DetectionBatch | None = None
        self.subscribers: list = []

    @property
    def time(self) -> float:
        return self.ticks * self.period

    def subscribe(self, callback):
        self.subscribers.append(callback)

    def tick(self, now: float | None = None) -> DetectionBatch:
        """Capture and publish one batch; `now` overrides the internal clock."""
        if now is None:
            now = self.time
        frame = None
        try:
            frame = self.provider()
        except Exception:
            frame = None

        if frame is None:
            previous = self.last_batch
            batch = DetectionBatch(
                detections=previous.detections if previous else (),
                missing=previous.missing if previous else (),
                timestamp=now, stale=True)
        else:
            result = locate_tags(frame, self.cal, timestamp=now)
            batch = DetectionBatch(result.detections, result.missing, timestamp=now)

        self.ticks += 1
        self.last_batch = batch
        for callback in self.subscribers:
            callback(batch)
        return batch
