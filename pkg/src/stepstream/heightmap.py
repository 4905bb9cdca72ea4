"""Elevation mapping: depth-image projection, local grid extraction, global fusion.

Local maps are extracted in a sensor-aligned frame that shares the world
XY-plane but is yaw-aligned with the camera, then fused into a persistent
world-frame map with a per-cell complementary filter. Two post-filters reduce
noise: a per-cell exponential moving average and a neighbor-mean outlier
replacement. Unknown cells are NaN throughout.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import Pose2, Pose3

# Pixel window gathered around each projected cell center.
NEIGHBORHOOD_OFFSETS = tuple((du, dv) for dv in (-1, 0, 1) for du in (-1, 0, 1))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be strictly positive")
        if not (0.0 <= self.cx < self.width and 0.0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


def project(point, intrinsics: CameraIntrinsics) -> tuple:
    """Pinhole projection of a camera-frame 3D point to pixel coordinates."""
    x, y, z = float(point[0]), float(point[1]), float(point[2])
    if z <= 0.0:
        raise ValueError("cannot project a point at or behind the camera plane (z <= 0)")
    return (intrinsics.fx * x / z + intrinsics.cx, intrinsics.fy * y / z + intrinsics.cy)


def unproject(u: float, v: float, depth: float, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Algebraic inverse of :func:`project` at the given depth."""
    if not math.isfinite(depth) or depth <= 0.0:
        raise ValueError("depth must be positive and finite")
    return np.array(
        [
            depth * (u - intrinsics.cx) / intrinsics.fx,
            depth * (v - intrinsics.cy) / intrinsics.fy,
            depth,
        ]
    )


@dataclass(frozen=True, eq=False)
class DepthFrame:
    """One depth image (meters, NaN = invalid) with its camera pose in the world."""

    timestamp: float
    depth: np.ndarray
    camera_pose: Pose3


class MapFrame(Enum):
    LOCAL_YAW_ALIGNED = "local"
    WORLD = "world"


@dataclass(eq=False)
class HeightMap:
    """Uniform 2D height grid. heights[iy, ix]; cell (0, 0) center at ``origin``."""

    origin: tuple
    resolution: float
    heights: np.ndarray
    frame: MapFrame = MapFrame.WORLD

    def __post_init__(self):
        if self.resolution <= 0.0:
            raise ValueError("resolution must be strictly positive")
        self.heights = np.asarray(self.heights, dtype=float)
        if self.heights.ndim != 2:
            raise ValueError("heights must be a 2D grid")

    @staticmethod
    def empty(origin, resolution, width, height, frame=MapFrame.WORLD) -> "HeightMap":
        return HeightMap(
            (float(origin[0]), float(origin[1])),
            float(resolution),
            np.full((height, width), np.nan),
            frame,
        )

    @property
    def width(self) -> int:
        return self.heights.shape[1]

    @property
    def height(self) -> int:
        return self.heights.shape[0]

    def copy(self) -> "HeightMap":
        return HeightMap(self.origin, self.resolution, self.heights.copy(), self.frame)

    def cell_center(self, ix: int, iy: int) -> tuple:
        return (self.origin[0] + ix * self.resolution, self.origin[1] + iy * self.resolution)

    def cell_index(self, x: float, y: float) -> tuple:
        ix = int(np.rint((x - self.origin[0]) / self.resolution))
        iy = int(np.rint((y - self.origin[1]) / self.resolution))
        return ix, iy

    def height_at(self, x: float, y: float) -> float:
        """Nearest-cell height lookup; NaN outside the grid or over unknown cells."""
        ix, iy = self.cell_index(x, y)
        if 0 <= ix < self.width and 0 <= iy < self.height:
            return float(self.heights[iy, ix])
        return float("nan")

    def grid_coordinates(self):
        """World (x, y) coordinates of every cell center, each shaped (H, W)."""
        xs = self.origin[0] + np.arange(self.width) * self.resolution
        ys = self.origin[1] + np.arange(self.height) * self.resolution
        return np.meshgrid(xs, ys)


@dataclass(frozen=True)
class ExclusionRect:
    """Axis-aligned world-frame rectangle whose cells are never updated."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def contains(self, x, y):
        return (self.x_min <= x) & (x <= self.x_max) & (self.y_min <= y) & (y <= self.y_max)


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 0.7  # complementary weight on the previous map value
    ema_alpha: float = 0.7  # post-filter EMA weight on the previous filtered value
    outlier_distance: float = 0.1  # neighbor-mean deviation triggering replacement, m
    neighborhood_radius: int = 2  # Chebyshev radius of the outlier neighborhood, cells
    exclusion_mask: tuple = ()

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0 or not 0.0 <= self.ema_alpha <= 1.0:
            raise ValueError("filter weights must lie in [0, 1]")
        if self.neighborhood_radius < 1:
            raise ValueError("neighborhood_radius must be at least 1")
        if self.outlier_distance <= 0.0:
            raise ValueError("outlier_distance must be positive")


@dataclass(frozen=True)
class GridSpec:
    """Shape of an extracted local map, centered under the sensor."""

    width: int = 100
    height: int = 100
    resolution: float = 0.02

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.resolution <= 0.0:
            raise ValueError("grid dimensions and resolution must be positive")


def extract_local(frame: DepthFrame, intrinsics: CameraIntrinsics, grid: GridSpec) -> HeightMap:
    """Build a local height map from one depth frame.

    Each cell center (lifted to the world ground plane z = 0) is projected
    into the image; the depth pixels in a 3x3 window around it are unprojected
    back to 3D, and the cell height is the mean world z of the valid points.
    Cells with no valid point, or whose center projects behind the camera or
    outside the image neighborhood, stay NaN.
    """
    depth = np.asarray(frame.depth, dtype=float)
    if depth.shape != (intrinsics.height, intrinsics.width):
        raise ValueError(
            f"depth grid {depth.shape} does not match intrinsics "
            f"({intrinsics.height}, {intrinsics.width})"
        )

    cam = frame.camera_pose
    local_to_world = Pose2(float(cam.position[0]), float(cam.position[1]), cam.yaw)

    origin_local = (
        -(grid.width - 1) / 2.0 * grid.resolution,
        -(grid.height - 1) / 2.0 * grid.resolution,
    )
    local_map = HeightMap.empty(
        origin_local, grid.resolution, grid.width, grid.height, MapFrame.LOCAL_YAW_ALIGNED
    )
    lx, ly = local_map.grid_coordinates()

    c, s = math.cos(local_to_world.yaw), math.sin(local_to_world.yaw)
    wx = local_to_world.x + c * lx - s * ly
    wy = local_to_world.y + s * lx + c * ly

    # World ground-plane points -> camera frame.
    rot = cam.rotation
    dx, dy, dz = wx - cam.position[0], wy - cam.position[1], 0.0 - cam.position[2]
    cam_x = rot[0, 0] * dx + rot[1, 0] * dy + rot[2, 0] * dz
    cam_y = rot[0, 1] * dx + rot[1, 1] * dy + rot[2, 1] * dz
    cam_z = rot[0, 2] * dx + rot[1, 2] * dy + rot[2, 2] * dz

    in_front = cam_z > 0.0
    safe_z = np.where(in_front, cam_z, 1.0)
    u = np.rint(intrinsics.fx * cam_x / safe_z + intrinsics.cx).astype(int)
    v = np.rint(intrinsics.fy * cam_y / safe_z + intrinsics.cy).astype(int)

    total = np.zeros(lx.shape)
    count = np.zeros(lx.shape, dtype=int)
    for du, dv in NEIGHBORHOOD_OFFSETS:
        uu, vv = u + du, v + dv
        inside = in_front & (uu >= 0) & (uu < intrinsics.width) & (vv >= 0) & (vv < intrinsics.height)
        ui, vi = np.clip(uu, 0, intrinsics.width - 1), np.clip(vv, 0, intrinsics.height - 1)
        d = depth[vi, ui]
        valid = inside & np.isfinite(d) & (d > 0.0)
        # Unproject the neighborhood pixel at its own depth, then take world z.
        px = d * (uu - intrinsics.cx) / intrinsics.fx
        py = d * (vv - intrinsics.cy) / intrinsics.fy
        world_z = rot[2, 0] * px + rot[2, 1] * py + rot[2, 2] * d + cam.position[2]
        total += np.where(valid, world_z, 0.0)
        count += valid

    with np.errstate(invalid="ignore"):
        local_map.heights = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return local_map


def fuse_global(
    global_map: HeightMap, local_map: HeightMap, local_to_world: Pose2, config: FusionConfig
) -> HeightMap:
    """Complementary-filter fusion of a local map into the world map.

    For every world cell with a valid nearest-cell reading in the transformed
    local map (and outside the exclusion mask): adopt the measurement where
    the world cell was unknown, otherwise blend
    alpha * previous + (1 - alpha) * measurement. All other cells are
    unchanged.
    """
    wx, wy = global_map.grid_coordinates()
    inv = local_to_world.inverse()
    c, s = math.cos(inv.yaw), math.sin(inv.yaw)
    lx = inv.x + c * wx - s * wy
    ly = inv.y + s * wx + c * wy

    ix = np.rint((lx - local_map.origin[0]) / local_map.resolution).astype(int)
    iy = np.rint((ly - local_map.origin[1]) / local_map.resolution).astype(int)
    inside = (ix >= 0) & (ix < local_map.width) & (iy >= 0) & (iy < local_map.height)
    ixc, iyc = np.clip(ix, 0, local_map.width - 1), np.clip(iy, 0, local_map.height - 1)
    measurement = np.where(inside, local_map.heights[iyc, ixc], np.nan)

    updatable = np.isfinite(measurement)
    for rect in config.exclusion_mask:
        updatable &= ~rect.contains(wx, wy)

    prev = global_map.heights
    known = np.isfinite(prev)
    blended = np.where(
        known, config.alpha * prev + (1.0 - config.alpha) * measurement, measurement
    )
    fused = global_map.copy()
    fused.heights = np.where(updatable, blended, prev)
    return fused


def postfilter(
    global_map: HeightMap, config: FusionConfig, previous: np.ndarray | None = None
) -> HeightMap:
    """Noise filters on the world map: per-cell EMA, then outlier replacement.

    ``previous`` is the cell grid from the previous filtered map; when absent
    (first invocation) the EMA pass adopts the current values. The outlier
    pass replaces any known cell that deviates from the mean of its known
    neighbors (Chebyshev radius ``neighborhood_radius``) by more than
    ``outlier_distance`` with that neighbor mean; all replacements are
    computed from the same pre-pass snapshot.
    """
    current = global_map.heights
    if previous is None:
        ema = current.copy()
    else:
        if previous.shape != current.shape:
            raise ValueError("previous filtered grid shape does not match the map")
        both = np.isfinite(previous) & np.isfinite(current)
        ema = np.where(both, config.ema_alpha * previous + (1.0 - config.ema_alpha) * current, current)

    r = config.neighborhood_radius
    h, w = ema.shape
    total = np.zeros_like(ema)
    count = np.zeros(ema.shape, dtype=int)
    padded = np.full((h + 2 * r, w + 2 * r), np.nan)
    padded[r : r + h, r : r + w] = ema
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dx == 0 and dy == 0:
                continue
            window = padded[r + dy : r + dy + h, r + dx : r + dx + w]
            valid = np.isfinite(window)
            total += np.where(valid, window, 0.0)
            count += valid

    with np.errstate(invalid="ignore"):
        neighbor_mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
        outlier = (
            np.isfinite(ema)
            & (count > 0)
            & (np.abs(ema - neighbor_mean) > config.outlier_distance)
        )
    result = global_map.copy()
    result.heights = np.where(outlier, neighbor_mean, ema)
    return result


class GlobalMapper:
    """Single-writer fusion pipeline: ingest local maps, publish filtered snapshots."""

    def __init__(self, origin, resolution, width, height, config: FusionConfig | None = None):
        self.config = config or FusionConfig()
        self._map = HeightMap.empty(origin, resolution, width, height, MapFrame.WORLD)

    @property
    def map(self) -> HeightMap:
        """Consistent snapshot of the current global map."""
        return self._map.copy()

    def ingest(self, local_map: HeightMap, local_to_world: Pose2) -> HeightMap:
        previous = self._map.heights
        fused = fuse_global(self._map, local_map, local_to_world, self.config)
        self._map = postfilter(fused, self.config, previous=previous)
        return self.map


def save_hm1(path, hmap: HeightMap) -> None:
    """Write the HM1 text format; floats use shortest round-trip decimals."""
    lines = [
        f"HM1 {hmap.width} {hmap.height} {hmap.resolution!r} "
        f"{hmap.origin[0]!r} {hmap.origin[1]!r}"
    ]
    for row in hmap.heights:
        lines.append(" ".join("nan" if not math.isfinite(v) else repr(float(v)) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_hm1(path) -> HeightMap:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 6 or header[0] != "HM1":
            raise ValueError("not an HM1 height map file")
        width, height = int(header[1]), int(header[2])
        resolution = float(header[3])
        origin = (float(header[4]), float(header[5]))
        rows = []
        for j in range(height):
            tokens = fh.readline().split()
            if len(tokens) != width:
                raise ValueError(f"HM1 row {j} has {len(tokens)} values, expected {width}")
            rows.append([float(t) for t in tokens])
    return HeightMap(origin, resolution, np.array(rows), MapFrame.WORLD)
