"""Synthetic forest worlds, scenario generation, cloud sampling and pose noise.

Worlds are generated from a :class:`ScenarioSpec` and a seed only, so every
artifact derived from them (targets, point clouds) is reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from harvestnav.geometry import GridMap2D, PointCloud3, PoseSE2

RADIUS_RANGE = (0.1, 0.4)    # trunk radius [m], uniform
HEIGHT_RANGE = (5.0, 20.0)   # tree height [m], uniform
MAX_PLACEMENT_ATTEMPTS = 1000

TARGET_RULE_ALLEY = "along-alley-within-6m"
TARGET_RULE_RANDOM = "random-max-50"
ALLEY_TARGET_REACH = 6.0   # max perpendicular distance of a target to the alley centerline
MAX_TARGETS = 50


class ForestGenerationError(RuntimeError):
    """Raised when rejection sampling cannot place the requested trees."""


@dataclass(frozen=True)
class Tree:
    x: float
    y: float
    radius: float
    height: float

    def __post_init__(self):
        if self.radius <= 0 or self.height <= 0:
            raise ValueError("tree radius and height must be positive")


@dataclass(frozen=True)
class ClutterBlob:
    """Low vegetation blob approximated by a squashed ellipsoid."""
    x: float
    y: float
    footprint_radius: float
    height: float


@dataclass(frozen=True)
class GroundModel:
    """Flat plane plus an optional smooth sum-of-sinusoids heightfield."""

    amplitude: float = 0.0
    wavelength: float = 17.0
    phase_seed: int = 0

    def z(self, x, y):
        if self.amplitude == 0.0:
            return np.zeros_like(np.asarray(x, dtype=float))
        rng = np.random.default_rng(self.phase_seed)
        ph = rng.uniform(0, 2 * math.pi, size=3)
        k = 2 * math.pi / self.wavelength
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return self.amplitude * (np.sin(k * x + ph[0])
                                 + np.sin(0.7 * k * y + ph[1])
                                 + 0.5 * np.sin(0.4 * k * (x + y) + ph[2])) / 2.5


@dataclass(frozen=True)
class ForestWorld:
    extent: tuple            # (xmin, ymin, xmax, ymax)
    ground: GroundModel
    trees: tuple
    clutter: tuple = ()
    alley: tuple | None = None   # (centerline_y, width) for alley scenarios

    def tree_array(self) -> np.ndarray:
        """(N, 3) array of x, y, radius."""
        return np.array([[t.x, t.y, t.radius] for t in self.trees]).reshape(-1, 3)


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str = "unstructured"             # alley | unstructured | from-file
    density: float = 0.1                   # trees per m^2
    alley_width: float = 4.0
    clear_patch: tuple = (10.0, 10.0)
    target_rule: str = TARGET_RULE_RANDOM
    seed: int = 0
    extent: tuple = (0.0, 0.0, 50.0, 50.0)
    clutter_density: float = 0.0           # blobs per m^2
    ground_amplitude: float = 0.0

    def __post_init__(self):
        if self.density < 0:
            raise ValueError("density must be non-negative")
        if self.kind == "alley" and self.alley_width < 2.8:
            raise ValueError("alley_width must be at least 2.8 m")


@dataclass(frozen=True)
class NoiseModel:
    pose_sigma_xy: float = 0.0
    pose_sigma_yaw: float = 0.0
    point_sigma: float = 0.0

    def __post_init__(self):
        if min(self.pose_sigma_xy, self.pose_sigma_yaw, self.point_sigma) < 0:
            raise ValueError("noise sigmas must be non-negative")


def _alley_centerline(spec: ScenarioSpec) -> float:
    ymin, ymax = spec.extent[1], spec.extent[3]
    return 0.5 * (ymin + ymax)


def _position_allowed(spec: ScenarioSpec, x: float, y: float, radius: float) -> bool:
    if spec.kind == "alley":
        yc = _alley_centerline(spec)
        return abs(y - yc) >= spec.alley_width / 2.0 + radius
    if spec.kind == "unstructured":
        xmin, ymin, xmax, ymax = spec.extent
        cx, cy = 0.5 * (xmin + xmax), 0.5 * (ymin + ymax)
        w, h = spec.clear_patch
        return not (abs(x - cx) < w / 2.0 + radius and abs(y - cy) < h / 2.0 + radius)
    return True


def _free_area(spec: ScenarioSpec) -> float:
    xmin, ymin, xmax, ymax = spec.extent
    area = (xmax - xmin) * (ymax - ymin)
    if spec.kind == "alley":
        area -= spec.alley_width * (xmax - xmin)
    elif spec.kind == "unstructured":
        area -= spec.clear_patch[0] * spec.clear_patch[1]
    return max(area, 0.0)


def generate_forest(spec: ScenarioSpec) -> ForestWorld:
    """Sample a forest world: Poisson tree count, uniform positions and radii.

    Positions are rejection-sampled against the scenario's keep-out region
    (alley strip or clear patch) and against overlap with existing trees.
    """
    rng = np.random.default_rng(spec.seed)
    xmin, ymin, xmax, ymax = spec.extent
    n_trees = int(rng.poisson(spec.density * _free_area(spec)))
    trees: list[Tree] = []
    for _ in range(n_trees):
        for attempt in range(MAX_PLACEMENT_ATTEMPTS):
            x = rng.uniform(xmin, xmax)
            y = rng.uniform(ymin, ymax)
            r = rng.uniform(*RADIUS_RANGE)
            if not _position_allowed(spec, x, y, r):
                continue
            if any((t.x - x) ** 2 + (t.y - y) ** 2 < (t.radius + r) ** 2 for t in trees):
                continue
            trees.append(Tree(x, y, r, rng.uniform(*HEIGHT_RANGE)))
            break
        else:
            raise ForestGenerationError(
                f"cannot place tree {len(trees) + 1}/{n_trees} after "
                f"{MAX_PLACEMENT_ATTEMPTS} attempts (density {spec.density})")

    clutter: list[ClutterBlob] = []
    if spec.clutter_density > 0:
        n_blobs = int(rng.poisson(spec.clutter_density * _free_area(spec)))
        for _ in range(n_blobs):
            for attempt in range(MAX_PLACEMENT_ATTEMPTS):
                x = rng.uniform(xmin, xmax)
                y = rng.uniform(ymin, ymax)
                fr = rng.uniform(0.3, 1.2)
                if _position_allowed(spec, x, y, fr):
                    clutter.append(ClutterBlob(x, y, fr, rng.uniform(0.3, 1.5)))
                    break
            else:
                break

    alley = (_alley_centerline(spec), spec.alley_width) if spec.kind == "alley" else None
    ground = GroundModel(amplitude=spec.ground_amplitude, phase_seed=spec.seed)
    return ForestWorld(spec.extent, ground, tuple(trees), tuple(clutter), alley)


def select_targets(world: ForestWorld, spec: ScenarioSpec) -> list[int]:
    """Ordered tree indices to harvest (at most 50), deterministic per seed."""
    rng = np.random.default_rng(spec.seed + 1)
    if spec.target_rule == TARGET_RULE_ALLEY:
        if world.alley is None:
            raise ValueError("alley target rule requires an alley world")
        yc = world.alley[0]
        candidates = [i for i, t in enumerate(world.trees)
                      if abs(t.y - yc) <= ALLEY_TARGET_REACH]
    else:
        candidates = list(range(len(world.trees)))
    if len(candidates) > MAX_TARGETS:
        picked = rng.choice(len(candidates), size=MAX_TARGETS, replace=False)
        candidates = [candidates[i] for i in sorted(picked)]
    return candidates


def sample_cloud(world: ForestWorld, region: tuple, density: float,
                 noise: NoiseModel = NoiseModel(), seed: int = 0,
                 trunk_density: float | None = None) -> PointCloud3:
    """Synthetic lidar-like sampling of a rectangular region of the world.

    Ground is a 2D Poisson scatter at ``density`` points/m^2; trunks are
    cylinder shells sampled at ``trunk_density`` points/m^2 of bark surface
    (defaults to ``density``); clutter blobs are noisy ellipsoid shells.
    """
    rng = np.random.default_rng(seed)
    xmin, ymin, xmax, ymax = region
    if trunk_density is None:
        trunk_density = density
    parts = []

    area = max((xmax - xmin) * (ymax - ymin), 0.0)
    n_ground = int(rng.poisson(density * area)) if density > 0 and area > 0 else 0
    if n_ground:
        gx = rng.uniform(xmin, xmax, n_ground)
        gy = rng.uniform(ymin, ymax, n_ground)
        parts.append(np.column_stack([gx, gy, world.ground.z(gx, gy)]))

    for t in world.trees:
        if not (xmin - t.radius <= t.x <= xmax + t.radius
                and ymin - t.radius <= t.y <= ymax + t.radius):
            continue
        surface = 2 * math.pi * t.radius * t.height
        n = int(rng.poisson(trunk_density * surface)) if trunk_density > 0 else 0
        if not n:
            continue
        theta = rng.uniform(0, 2 * math.pi, n)
        z0 = float(world.ground.z(t.x, t.y))
        tz = rng.uniform(z0, z0 + t.height, n)
        parts.append(np.column_stack([t.x + t.radius * np.cos(theta),
                                      t.y + t.radius * np.sin(theta), tz]))

    for b in world.clutter:
        if not (xmin <= b.x <= xmax and ymin <= b.y <= ymax):
            continue
        surface = 4 * math.pi * b.footprint_radius * b.height / 2.0
        n = int(rng.poisson(trunk_density * surface)) if trunk_density > 0 else 0
        if not n:
            continue
        u = rng.normal(size=(n, 3))
        u /= np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-12)
        z0 = float(world.ground.z(b.x, b.y))
        pts = np.column_stack([b.x + b.footprint_radius * u[:, 0],
                               b.y + b.footprint_radius * u[:, 1],
                               z0 + b.height / 2.0 + (b.height / 2.0) * u[:, 2]])
        pts[:, :2] += rng.normal(0, 0.05, size=(n, 2))
        parts.append(pts)

    if not parts:
        return PointCloud3.empty()
    pts = np.vstack(parts)
    if noise.point_sigma > 0:
        pts = pts + rng.normal(0, noise.point_sigma, size=pts.shape)
    return PointCloud3(pts)


def corrupt_pose(true_pose: PoseSE2, noise: NoiseModel, seed: int = 0) -> PoseSE2:
    """Add independent Gaussian localization offsets, deterministic per seed."""
    rng = np.random.default_rng(seed)
    dx, dy = rng.normal(0, noise.pose_sigma_xy, 2) if noise.pose_sigma_xy > 0 else (0.0, 0.0)
    dyaw = rng.normal(0, noise.pose_sigma_yaw) if noise.pose_sigma_yaw > 0 else 0.0
    return PoseSE2(true_pose.x + dx, true_pose.y + dy, true_pose.yaw + dyaw)


def true_occupancy(world: ForestWorld, resolution: float = 0.1,
                   inflate: float = 0.0) -> GridMap2D:
    """Ground-truth occupancy grid: cells inside any tree disk are occupied."""
    xmin, ymin, xmax, ymax = world.extent
    cols = int(round((xmax - xmin) / resolution))
    rows = int(round((ymax - ymin) / resolution))
    origin = (xmin + resolution / 2.0, ymin + resolution / 2.0)
    occ = np.zeros((rows, cols), dtype=bool)
    if world.trees:
        xs = origin[0] + np.arange(cols) * resolution
        ys = origin[1] + np.arange(rows) * resolution
        for t in world.trees:
            r = t.radius + inflate
            ci = np.nonzero(np.abs(xs - t.x) <= r)[0]
            ri = np.nonzero(np.abs(ys - t.y) <= r)[0]
            if not len(ci) or not len(ri):
                continue
            dx = xs[ci] - t.x
            dy = ys[ri] - t.y
            mask = dx[None, :] ** 2 + dy[:, None] ** 2 <= r * r
            occ[np.ix_(ri, ci)] |= mask
    return GridMap2D(resolution, origin, rows, cols,
                     {"occupancy": occ.astype(float)})


# -- scenario files ---------------------------------------------------------

def save_scenario(spec: ScenarioSpec, path) -> None:
    """Flat key-value text file mirroring the spec fields."""
    with open(path, "w") as f:
        f.write(f"kind {spec.kind}\n")
        f.write(f"density {spec.density!r}\n")
        f.write(f"alley_width {spec.alley_width!r}\n")
        f.write(f"clear_patch {spec.clear_patch[0]!r} {spec.clear_patch[1]!r}\n")
        f.write(f"target_rule {spec.target_rule}\n")
        f.write(f"seed {spec.seed}\n")
        f.write("extent " + " ".join(repr(v) for v in spec.extent) + "\n")
        f.write(f"clutter_density {spec.clutter_density!r}\n")
        f.write(f"ground_amplitude {spec.ground_amplitude!r}\n")


def load_scenario(path) -> ScenarioSpec:
    kv = {}
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition(" ")
            kv[key] = value.strip()
    spec = ScenarioSpec()
    fields = {}
    if "kind" in kv:
        fields["kind"] = kv["kind"]
    for name in ("density", "alley_width", "clutter_density", "ground_amplitude"):
        if name in kv:
            fields[name] = float(kv[name])
    if "clear_patch" in kv:
        fields["clear_patch"] = tuple(float(v) for v in kv["clear_patch"].split())
    if "target_rule" in kv:
        fields["target_rule"] = kv["target_rule"]
    if "seed" in kv:
        fields["seed"] = int(kv["seed"])
    if "extent" in kv:
        fields["extent"] = tuple(float(v) for v in kv["extent"].split())
    return replace(spec, **fields)
