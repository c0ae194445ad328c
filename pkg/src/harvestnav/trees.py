"""Tree trunk detection in gravity-aligned point clouds.

Pipeline: crop and assemble scans, Euclidean clustering, PCA verticality
scoring and bounding-ellipsoid extraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from harvestnav.geometry import PointCloud3, PoseSE2


@dataclass(frozen=True)
class DetectParams:
    crop_z: tuple = (0.3, 4.0)          # [z_min, z_max] above ground [m]
    crop_xy: float = 8.0                # half-extent of the box crop (arm reach) [m]
    cluster_tolerance: float = 0.3
    min_points: int = 1000
    min_height: float = 2.0
    max_diameter: float = 2.5
    min_alignment: float = 0.8
    max_density: float = 0.0            # points/m^3, 0 disables thinning

    def __post_init__(self):
        if not 0.0 <= self.min_alignment <= 1.0:
            raise ValueError("min_alignment must be in [0, 1]")
        if self.max_diameter <= 0:
            raise ValueError("max_diameter must be positive")


@dataclass(frozen=True)
class TreeDetection:
    center: tuple                        # (x, y, z) world [m]
    ellipsoid_semiaxes: tuple            # (a_x, a_y, a_z) [m]
    alignment: float
    point_count: int

    def __post_init__(self):
        if min(self.ellipsoid_semiaxes) <= 0:
            raise ValueError("ellipsoid semiaxes must be positive")
        if not 0.0 <= self.alignment <= 1.0:
            raise ValueError("alignment must be in [0, 1]")


def crop_and_assemble(scans: list[PointCloud3], poses: list[PoseSE2],
                      params: DetectParams) -> PointCloud3:
    """Transform scans into the map frame, crop and density-limit them.

    Each scan is box-cropped in xy around its sensor pose (arm reach),
    concatenated, z-cropped and thinned so that no voxel exceeds
    ``max_density``.
    """
    if len(scans) != len(poses):
        raise ValueError("scans and poses must have the same length")
    parts = []
    for scan, pose in zip(scans, poses):
        if not len(scan):
            continue
        world = scan.transformed(pose)
        keep = (np.abs(world.points[:, 0] - pose.x) <= params.crop_xy) & \
               (np.abs(world.points[:, 1] - pose.y) <= params.crop_xy)
        parts.append(world.points[keep])
    if not parts:
        return PointCloud3.empty()
    pts = np.vstack(parts)
    z_min, z_max = params.crop_z
    pts = pts[(pts[:, 2] >= z_min) & (pts[:, 2] <= z_max)]
    if params.max_density > 0 and len(pts):
        # keep at most max_density * voxel_volume points per voxel
        voxel = 0.2
        cap = max(1, int(math.ceil(params.max_density * voxel ** 3)))
        keys = np.floor(pts / voxel).astype(np.int64)
        _, inverse = np.unique(keys, axis=0, return_inverse=True)
        order = np.argsort(inverse, kind="stable")
        ranks = np.empty(len(pts), dtype=np.int64)
        boundaries = np.flatnonzero(np.diff(inverse[order], prepend=-1))
        within = np.arange(len(pts)) - np.repeat(boundaries, np.diff(
            np.append(boundaries, len(pts))))
        ranks[order] = within
        pts = pts[ranks < cap]
    return PointCloud3(pts)


def euclidean_clusters(points: np.ndarray, tolerance: float) -> list[np.ndarray]:
    """Index groups of points connected through gaps <= tolerance."""
    n = len(points)
    if n == 0:
        return []
    tree = cKDTree(points)
    pairs = tree.query_pairs(tolerance, output_type="ndarray")
    if len(pairs):
        graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])),
                           shape=(n, n))
        ncl, labels = connected_components(graph, directed=False)
    else:
        ncl, labels = n, np.arange(n)
    out = [[] for _ in range(ncl)]
    for i, lab in enumerate(labels):
        out[lab].append(i)
    return [np.array(idx) for idx in out]


def detect_trees(cloud: PointCloud3, params: DetectParams) -> list[TreeDetection]:
    """Detect vertical trunk-like clusters; sorted by distance to the origin."""
    if not len(cloud):
        return []
    detections = []
    for idx in euclidean_clusters(cloud.points, params.cluster_tolerance):
        if len(idx) < params.min_points:
            continue
        pts = cloud.points[idx]
        extent_z = float(pts[:, 2].max() - pts[:, 2].min())
        if extent_z < params.min_height:
            continue
        centroid = pts.mean(axis=0)
        cov = np.cov((pts - centroid).T)
        eigvals, eigvecs = np.linalg.eigh(cov)
        eigvals = np.maximum(eigvals, 1e-12)
        # eigh sorts ascending; index 2 is the largest principal component
        alignment = float(abs(eigvecs[2, 2]))
        if alignment < params.min_alignment:
            continue
        # semiaxis = 2 sqrt(eigenvalue); assign eigenpairs to world axes by
        # the dominant component of each eigenvector
        semi = np.zeros(3)
        assigned = [False, False, False]
        for k in np.argsort(eigvals)[::-1]:
            axis_order = np.argsort(np.abs(eigvecs[:, k]))[::-1]
            axis = next(a for a in axis_order if not assigned[a])
            assigned[axis] = True
            semi[axis] = 2.0 * math.sqrt(eigvals[k])
        if 2.0 * max(semi[0], semi[1]) > params.max_diameter:
            continue
        detections.append(TreeDetection(
            center=tuple(float(v) for v in centroid),
            ellipsoid_semiaxes=tuple(float(v) for v in semi),
            alignment=min(alignment, 1.0),
            point_count=int(len(idx)),
        ))
    detections.sort(key=lambda d: math.hypot(d.center[0], d.center[1]))
    return detections


def pick_target(detections: list[TreeDetection], expected: tuple):
    """Detection with minimum planar distance to the expected tree position.

    Ties break toward the lower sequence index; empty input yields None (the
    caller then falls back to a blind grab at the expected position).
    """
    best = None
    best_d = math.inf
    for det in detections:
        d = math.hypot(det.center[0] - expected[0], det.center[1] - expected[1])
        if d < best_d:
            best, best_d = det, d
    return best
