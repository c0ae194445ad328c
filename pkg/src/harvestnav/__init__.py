"""harvestnav: simulation-backed navigation stack for autonomous precision harvesting."""

from harvestnav.geometry import (
    GridMap2D,
    FootprintPolygon,
    PathSE2,
    PointCloud3,
    PoseSE2,
    wrap_angle,
)

__all__ = [
    "GridMap2D",
    "FootprintPolygon",
    "PathSE2",
    "PointCloud3",
    "PoseSE2",
    "wrap_angle",
]

__version__ = "0.1.0"
