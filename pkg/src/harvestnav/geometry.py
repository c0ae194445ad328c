"""Planar poses, layered 2.5D grid maps, point clouds and footprint polygons.

Conventions used throughout the package:

* yaw angles are normalized to (-pi, pi]
* grid layers are row-major with the row index increasing with +y
* a cell owns the half-open square [center - res/2, center + res/2) on both axes
* ``origin`` is the world position of the center of cell (0, 0)
* missing values are encoded as NaN, never 0
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

NODATA = float("nan")

#: default spacing between consecutive poses of a discretized path [m]
PATH_STEP = 0.1


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a > math.pi:
        a -= 2.0 * math.pi
    elif a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass(frozen=True)
class PoseSE2:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def compose(self, other: "PoseSE2") -> "PoseSE2":
        """Return self * other (frame composition)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return PoseSE2(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.yaw + other.yaw,
        )

    def inverse(self) -> "PoseSE2":
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return PoseSE2(-c * self.x - s * self.y, s * self.x - c * self.y, -self.yaw)

    def transform_point(self, px: float, py: float) -> tuple[float, float]:
        """Map a point from this pose's frame into the parent frame."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return self.x + c * px - s * py, self.y + s * px + c * py

    def transform_points(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized variant of :meth:`transform_point` for an (N, 2) array."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return pts @ rot.T + np.array([self.x, self.y])

    def as_matrix(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s, self.x], [s, c, self.y], [0.0, 0.0, 1.0]])


def transform_pose(a: PoseSE2, b: PoseSE2) -> PoseSE2:
    """Compose two planar poses (a then b), yaw renormalized."""
    return a.compose(b)


@dataclass(frozen=True)
class PointCloud3:
    """Unordered 3D points in a gravity-aligned frame (z up), shape (N, 3)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if pts.size and not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @staticmethod
    def empty() -> "PointCloud3":
        return PointCloud3(np.empty((0, 3)))

    @staticmethod
    def concatenate(clouds: "list[PointCloud3]") -> "PointCloud3":
        arrays = [c.points for c in clouds if len(c)]
        if not arrays:
            return PointCloud3.empty()
        return PointCloud3(np.vstack(arrays))

    def transformed(self, pose: PoseSE2) -> "PointCloud3":
        """Apply a planar rigid transform (z unchanged)."""
        if not len(self):
            return self
        xy = pose.transform_points(self.points[:, :2])
        return PointCloud3(np.column_stack([xy, self.points[:, 2]]))


@dataclass(frozen=True)
class GridMap2D:
    """Layered 2.5D raster with shared geometry across layers."""

    resolution: float
    origin: tuple[float, float]
    rows: int
    cols: int
    layers: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError("rows and cols must be positive")
        for name, arr in self.layers.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape != (self.rows, self.cols):
                raise ValueError(f"layer {name!r} shape {arr.shape} != {(self.rows, self.cols)}")
            arr.flags.writeable = False
            self.layers[name] = arr

    @staticmethod
    def create(rows: int, cols: int, resolution: float,
               origin: tuple[float, float] = (0.0, 0.0),
               layer_names: tuple[str, ...] = ()) -> "GridMap2D":
        layers = {n: np.full((rows, cols), NODATA) for n in layer_names}
        return GridMap2D(resolution, (float(origin[0]), float(origin[1])), rows, cols, layers)

    def with_layer(self, name: str, data: np.ndarray) -> "GridMap2D":
        """Return a new snapshot with ``name`` added or replaced."""
        layers = dict(self.layers)
        layers[name] = np.array(data, dtype=float)
        return replace(self, layers=layers)

    def layer(self, name: str) -> np.ndarray:
        return self.layers[name]

    # -- index / coordinate math -------------------------------------------

    def world_to_cell(self, x: float, y: float):
        """Enclosing (row, col) for a world point, or None if out of bounds."""
        col = math.floor((x - self.origin[0]) / self.resolution + 0.5)
        row = math.floor((y - self.origin[1]) / self.resolution + 0.5)
        if 0 <= row < self.rows and 0 <= col < self.cols:
            return row, col
        return None

    def world_to_cell_array(self, xy: np.ndarray):
        """Vectorized cell lookup; returns (rows, cols, in_bounds mask)."""
        cols = np.floor((xy[:, 0] - self.origin[0]) / self.resolution + 0.5).astype(int)
        rows = np.floor((xy[:, 1] - self.origin[1]) / self.resolution + 0.5).astype(int)
        ok = (rows >= 0) & (rows < self.rows) & (cols >= 0) & (cols < self.cols)
        return rows, cols, ok

    def cell_to_world(self, row: int, col: int) -> tuple[float, float]:
        """World coordinates of the cell center."""
        return (self.origin[0] + col * self.resolution,
                self.origin[1] + row * self.resolution)

    def cell_centers(self) -> np.ndarray:
        """(rows*cols, 2) array of all cell centers, row-major order."""
        cs = self.origin[0] + np.arange(self.cols) * self.resolution
        rs = self.origin[1] + np.arange(self.rows) * self.resolution
        xx, yy = np.meshgrid(cs, rs)
        return np.column_stack([xx.ravel(), yy.ravel()])

    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the covered area (outer cell edges)."""
        h = self.resolution / 2.0
        return (self.origin[0] - h, self.origin[1] - h,
                self.origin[0] + (self.cols - 1) * self.resolution + h,
                self.origin[1] + (self.rows - 1) * self.resolution + h)


def world_to_cell(grid: GridMap2D, p: tuple[float, float]):
    return grid.world_to_cell(p[0], p[1])


@dataclass(frozen=True)
class FootprintPolygon:
    """Convex polygon in the vehicle body frame, CCW vertex order."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        if len(v) >= 3:
            nxt = np.roll(v, -1, axis=0)
            nxt2 = np.roll(v, -2, axis=0)
            cross = ((nxt[:, 0] - v[:, 0]) * (nxt2[:, 1] - nxt[:, 1])
                     - (nxt[:, 1] - v[:, 1]) * (nxt2[:, 0] - nxt[:, 0]))
            if np.any(cross < -1e-9):
                raise ValueError("footprint must be convex with CCW vertex order")
        v.flags.writeable = False
        object.__setattr__(self, "vertices", v)

    def radius(self) -> float:
        """Circumscribed radius about the body origin."""
        if not len(self.vertices):
            return 0.0
        return float(np.max(np.hypot(self.vertices[:, 0], self.vertices[:, 1])))


def points_in_convex_polygon(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Boolean mask of points inside (or on the boundary of) a CCW convex polygon."""
    n = len(vertices)
    if n == 0:
        return np.zeros(len(points), dtype=bool)
    if n == 1:
        return (np.abs(points[:, 0] - vertices[0, 0]) < 1e-12) & \
               (np.abs(points[:, 1] - vertices[0, 1]) < 1e-12)
    inside = np.ones(len(points), dtype=bool)
    for i in range(n):
        a = vertices[i]
        b = vertices[(i + 1) % n]
        if n == 2 and i == 1:
            break
        cross = ((b[0] - a[0]) * (points[:, 1] - a[1])
                 - (b[1] - a[1]) * (points[:, 0] - a[0]))
        inside &= cross >= -1e-12
    if n == 2:
        # degenerate segment: also require the point to project onto it
        a, b = vertices
        d = b - a
        t = ((points - a) @ d) / max(float(d @ d), 1e-300)
        off = np.hypot(*(points - (a + np.outer(t, d))).T)
        inside = (off < 1e-9) & (t >= 0) & (t <= 1)
    return inside


def rasterize_footprint(fp: FootprintPolygon, pose: PoseSE2, grid: GridMap2D) -> set:
    """Cells whose centers lie inside the footprint placed at ``pose``."""
    world_verts = pose.transform_points(fp.vertices) if len(fp.vertices) else fp.vertices
    if len(world_verts) == 0:
        return set()
    # candidate window from the polygon bounding box
    xmin, ymin = world_verts.min(axis=0)
    xmax, ymax = world_verts.max(axis=0)
    c0 = max(0, math.floor((xmin - grid.origin[0]) / grid.resolution + 0.5))
    c1 = min(grid.cols - 1, math.floor((xmax - grid.origin[0]) / grid.resolution + 0.5))
    r0 = max(0, math.floor((ymin - grid.origin[1]) / grid.resolution + 0.5))
    r1 = min(grid.rows - 1, math.floor((ymax - grid.origin[1]) / grid.resolution + 0.5))
    if c1 < c0 or r1 < r0:
        return set()
    cs = grid.origin[0] + np.arange(c0, c1 + 1) * grid.resolution
    rs = grid.origin[1] + np.arange(r0, r1 + 1) * grid.resolution
    xx, yy = np.meshgrid(cs, rs)
    centers = np.column_stack([xx.ravel(), yy.ravel()])
    mask = points_in_convex_polygon(centers, world_verts)
    rows = r0 + np.arange(r1 - r0 + 1).repeat(c1 - c0 + 1)
    cols = np.tile(c0 + np.arange(c1 - c0 + 1), r1 - r0 + 1)
    return set(zip(rows[mask].tolist(), cols[mask].tolist()))


@dataclass(frozen=True)
class PathSE2:
    """Directed, cusp-aware pose sequence.

    ``directions[i]`` (+1 forward, -1 reverse) applies to the segment between
    poses i and i+1; ``cusp_count`` is the number of sign changes.
    """

    poses: tuple
    directions: tuple

    def __post_init__(self):
        if len(self.poses) and len(self.directions) != max(len(self.poses) - 1, 0):
            raise ValueError("need one direction flag per segment")
        object.__setattr__(self, "poses", tuple(self.poses))
        object.__setattr__(self, "directions", tuple(int(d) for d in self.directions))

    @property
    def cusp_count(self) -> int:
        return sum(1 for a, b in zip(self.directions, self.directions[1:]) if a != b)

    def length(self) -> float:
        return sum(math.hypot(b.x - a.x, b.y - a.y)
                   for a, b in zip(self.poses, self.poses[1:]))

    def xy(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.poses]).reshape(-1, 2)

    @staticmethod
    def empty() -> "PathSE2":
        return PathSE2((), ())

    def append(self, other: "PathSE2") -> "PathSE2":
        """Concatenate, dropping other's duplicated first pose if it matches."""
        if not self.poses:
            return other
        if not other.poses:
            return self
        o_poses, o_dirs = other.poses, other.directions
        p, q = self.poses[-1], o_poses[0]
        if math.hypot(p.x - q.x, p.y - q.y) < 1e-9 and abs(wrap_angle(p.yaw - q.yaw)) < 1e-9:
            o_poses = o_poses[1:]
        elif o_dirs:
            o_dirs = (o_dirs[0],) + o_dirs
        else:
            o_dirs = (self.directions[-1] if self.directions else 1,)
        return PathSE2(self.poses + o_poses, self.directions + o_dirs)


# -- text formats -----------------------------------------------------------

def save_gridmap(grid: GridMap2D, path) -> None:
    """Write the ``gridmap v1`` text format."""
    with open(path, "w") as f:
        f.write(f"gridmap v1 {grid.rows} {grid.cols} {grid.resolution!r} "
                f"{grid.origin[0]!r} {grid.origin[1]!r} {len(grid.layers)}\n")
        for name, arr in grid.layers.items():
            f.write(f"layer {name}\n")
            for r in range(grid.rows):
                f.write(" ".join("nan" if math.isnan(v) else repr(v)
                                 for v in arr[r]) + "\n")


def load_gridmap(path) -> GridMap2D:
    with open(path) as f:
        header = f.readline().split()
        if header[:2] != ["gridmap", "v1"]:
            raise ValueError("not a gridmap v1 file")
        rows, cols = int(header[2]), int(header[3])
        resolution = float(header[4])
        origin = (float(header[5]), float(header[6]))
        nlayers = int(header[7])
        layers = {}
        for _ in range(nlayers):
            tag, name = f.readline().split(maxsplit=1)
            if tag != "layer":
                raise ValueError("malformed gridmap file: expected layer header")
            data = [[float(v) for v in f.readline().split()] for _ in range(rows)]
            layers[name.strip()] = np.array(data)
    return GridMap2D(resolution, origin, rows, cols, layers)


def save_cloud(cloud: PointCloud3, path) -> None:
    """Write one ``x y z`` triple per line."""
    with open(path, "w") as f:
        for x, y, z in cloud.points:
            f.write(f"{x!r} {y!r} {z!r}\n")


def load_cloud(path) -> PointCloud3:
    pts = []
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            x, y, z = line.split()
            pts.append((float(x), float(y), float(z)))
    return PointCloud3(np.array(pts).reshape(-1, 3))
