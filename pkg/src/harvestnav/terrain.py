"""Point cloud to 2.5D elevation map conversion, traversability and occupancy.

Elevation: points are bucketed per cell, 1-D Euclidean clusters are formed
along z and the centroid of the lowest surviving cluster becomes the ground
estimate. Traversability scores step height, slope and roughness over local
patches and maps each criterion to [0, 1] with a linear ramp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from harvestnav.geometry import (
    NODATA,
    FootprintPolygon,
    GridMap2D,
    PointCloud3,
    PoseSE2,
    rasterize_footprint,
)


@dataclass(frozen=True)
class ElevationParams:
    resolution: float = 0.1
    cluster_tolerance: float = 0.3
    min_cluster_points: int = 2
    downsample_voxel: float = 0.0     # 0 disables voxel downsampling
    outlier_knn: int = 0              # 0 disables outlier removal
    outlier_stddev: float = 1.0

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.cluster_tolerance <= 0:
            raise ValueError("cluster_tolerance must be positive")


@dataclass(frozen=True)
class TraversabilityParams:
    patch_radius: float = 0.3
    w_step: float = 0.8
    w_slope: float = 0.2
    w_rough: float = 0.0
    critical_step: float = 0.3
    critical_slope: float = math.radians(20.0)
    critical_rough: float = 0.1
    obstacle_threshold: float = 0.5

    def __post_init__(self):
        if min(self.w_step, self.w_slope, self.w_rough) < 0:
            raise ValueError("weights must be non-negative")
        if abs(self.w_step + self.w_slope + self.w_rough - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
        if min(self.critical_step, self.critical_slope, self.critical_rough) <= 0:
            raise ValueError("critical values must be positive")


# -- preprocessing ----------------------------------------------------------

def remove_outliers(cloud: PointCloud3, knn: int, stddev: float) -> PointCloud3:
    """Statistical outlier filter: drop points whose mean k-NN distance
    exceeds the global mean by ``stddev`` standard deviations."""
    if knn <= 0 or len(cloud) <= knn:
        return cloud
    tree = cKDTree(cloud.points)
    dists, _ = tree.query(cloud.points, k=knn + 1)
    mean_d = dists[:, 1:].mean(axis=1)
    cutoff = mean_d.mean() + stddev * mean_d.std()
    return PointCloud3(cloud.points[mean_d <= cutoff])


def voxel_downsample(cloud: PointCloud3, voxel: float) -> PointCloud3:
    """Replace each occupied voxel by the centroid of its points."""
    if voxel <= 0 or not len(cloud):
        return cloud
    keys = np.floor(cloud.points / voxel).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    n = inverse.max() + 1
    counts = np.bincount(inverse, minlength=n).astype(float)
    centroids = np.column_stack([
        np.bincount(inverse, weights=cloud.points[:, i], minlength=n) / counts
        for i in range(3)])
    return PointCloud3(centroids)


# -- elevation --------------------------------------------------------------

def cloud_to_elevation(cloud: PointCloud3, params: ElevationParams,
                       grid: GridMap2D | None = None) -> GridMap2D:
    """Convert a point cloud to a grid map with an ``elevation`` layer.

    When ``grid`` is omitted the map geometry is derived from the cloud's
    bounding box. Cells without a surviving cluster are NaN.
    """
    cloud = remove_outliers(cloud, params.outlier_knn, params.outlier_stddev)
    cloud = voxel_downsample(cloud, params.downsample_voxel)

    if grid is None:
        if not len(cloud):
            return GridMap2D.create(1, 1, params.resolution, layer_names=("elevation",))
        res = params.resolution
        xmin, ymin = cloud.points[:, :2].min(axis=0)
        xmax, ymax = cloud.points[:, :2].max(axis=0)
        cols = max(1, int(math.floor((xmax - xmin) / res)) + 1)
        rows = max(1, int(math.floor((ymax - ymin) / res)) + 1)
        grid = GridMap2D.create(rows, cols, res,
                                origin=(xmin + res / 2, ymin + res / 2))

    elev = np.full((grid.rows, grid.cols), NODATA)
    if len(cloud):
        rows_i, cols_i, ok = grid.world_to_cell_array(cloud.points[:, :2])
        z = cloud.points[ok, 2]
        cell = rows_i[ok] * grid.cols + cols_i[ok]
        if len(z):
            order = np.lexsort((z, cell))
            cell, z = cell[order], z[order]
            # cluster boundary where the cell changes or the z-gap exceeds tolerance
            brk = np.empty(len(z), dtype=bool)
            brk[0] = True
            brk[1:] = (np.diff(cell) != 0) | (np.diff(z) > params.cluster_tolerance)
            cid = np.cumsum(brk) - 1
            ncl = cid[-1] + 1
            counts = np.bincount(cid, minlength=ncl)
            centroids = np.bincount(cid, weights=z, minlength=ncl) / counts
            first = np.nonzero(brk)[0]
            cl_cell = cell[first]
            keep = counts >= params.min_cluster_points
            # clusters within one cell ascend in z, so the first surviving
            # cluster per cell has the lowest centroid
            for c, zc in zip(cl_cell[keep], centroids[keep]):
                r, cc = divmod(int(c), grid.cols)
                if math.isnan(elev[r, cc]) or zc < elev[r, cc]:
                    elev[r, cc] = zc
    return grid.with_layer("elevation", elev)


# -- traversability ---------------------------------------------------------

def _patch_offsets(patch_radius: float, resolution: float) -> np.ndarray:
    """(K, 2) integer (dr, dc) offsets whose centers lie within patch_radius."""
    n = int(math.floor(patch_radius / resolution + 1e-9))
    offs = []
    for dr in range(-n, n + 1):
        for dc in range(-n, n + 1):
            if (dr * resolution) ** 2 + (dc * resolution) ** 2 <= patch_radius ** 2 + 1e-12:
                offs.append((dr, dc))
    return np.array(offs, dtype=int)


def _shift(arr: np.ndarray, dr: int, dc: int) -> np.ndarray:
    """Shift with NaN fill, so arr_shifted[r, c] == arr[r + dr, c + dc]."""
    out = np.full_like(arr, np.nan)
    rows, cols = arr.shape
    r0, r1 = max(0, dr), min(rows, rows + dr)
    c0, c1 = max(0, dc), min(cols, cols + dc)
    if r0 < r1 and c0 < c1:
        out[r0 - dr:r1 - dr, c0 - dc:c1 - dc] = arr[r0:r1, c0:c1]
    return out


def traversability(grid: GridMap2D, params: TraversabilityParams = TraversabilityParams()) -> GridMap2D:
    """Add a ``traversability`` layer computed from the ``elevation`` layer."""
    elev = grid.layer("elevation")
    res = grid.resolution
    offs = _patch_offsets(params.patch_radius, res)

    has = ~np.isnan(elev)
    step = np.zeros_like(elev)
    # least-squares plane accumulators over the patch
    n = np.zeros_like(elev)
    sx = np.zeros_like(elev)
    sy = np.zeros_like(elev)
    sz = np.zeros_like(elev)
    sxx = np.zeros_like(elev)
    sxy = np.zeros_like(elev)
    syy = np.zeros_like(elev)
    sxz = np.zeros_like(elev)
    syz = np.zeros_like(elev)
    szz = np.zeros_like(elev)

    for dr, dc in offs:
        nb = _shift(elev, dr, dc)
        valid = ~np.isnan(nb)
        if not (dr == 0 and dc == 0):
            diff = np.abs(elev - nb)
            diff[~valid] = 0.0
            np.maximum(step, diff, out=step)
        x, y = dc * res, dr * res
        zv = np.where(valid, nb, 0.0)
        fv = valid.astype(float)
        n += fv
        sx += x * fv
        sy += y * fv
        sz += zv
        sxx += x * x * fv
        sxy += x * y * fv
        syy += y * y * fv
        sxz += x * zv
        syz += y * zv
        szz += zv * zv

    # solve the 3x3 normal equations [a b c] per cell where n >= 3
    slope = np.zeros_like(elev)
    rough = np.zeros_like(elev)
    fit = n >= 3
    if np.any(fit):
        A = np.stack([
            np.stack([sxx, sxy, sx], axis=-1),
            np.stack([sxy, syy, sy], axis=-1),
            np.stack([sx, sy, n], axis=-1),
        ], axis=-2)[fit]
        b = np.stack([sxz, syz, sz], axis=-1)[fit]
        # regularize near-singular patches (collinear centers)
        A = A + 1e-12 * np.eye(3)
        sol = np.linalg.solve(A, b[..., None])[..., 0]
        a_, b_, c_ = sol[:, 0], sol[:, 1], sol[:, 2]
        slope[fit] = np.arctan(np.hypot(a_, b_))
        rss = szz[fit] - a_ * sxz[fit] - b_ * syz[fit] - c_ * sz[fit]
        rough[fit] = np.sqrt(np.maximum(rss, 0.0) / n[fit])

    def score(value, critical):
        return np.clip(1.0 - value / critical, 0.0, 1.0)

    trav = (params.w_step * score(step, params.critical_step)
            + params.w_slope * score(slope, params.critical_slope)
            + params.w_rough * score(rough, params.critical_rough))
    trav = np.clip(trav, 0.0, 1.0)
    trav[~has] = 0.0
    return grid.with_layer("traversability", trav)


def to_occupancy(grid: GridMap2D, threshold: float = 0.5) -> GridMap2D:
    """Occupancy 1 where traversability is strictly below ``threshold``."""
    trav = grid.layer("traversability")
    return grid.with_layer("occupancy", (trav < threshold).astype(float))


def apply_correction(grid: GridMap2D, region_vertices, value: float,
                     threshold: float = 0.5):
    """Overwrite traversability inside a convex polygon and refresh occupancy.

    Returns (new grid, applied flag); regions entirely outside the map are a
    no-op with ``applied == False``.
    """
    verts = np.asarray(region_vertices, dtype=float).reshape(-1, 2)
    if len(verts) < 3:
        return grid, False
    cells = rasterize_footprint(FootprintPolygon(verts), PoseSE2(), grid)
    if not cells:
        return grid, False
    trav = np.array(grid.layer("traversability"))
    for r, c in cells:
        trav[r, c] = value
    out = grid.with_layer("traversability", trav)
    if "occupancy" in grid.layers:
        out = to_occupancy(out, threshold)
    return out, True
