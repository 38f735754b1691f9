"""Pose-cell attractor network localization for 2D LiDAR.

A sparse 3D continuous attractor network holds the multi-hypothesis pose
belief; landmark-linked local view cells re-inject hypotheses for global
relocalization; a Monte Carlo Localization baseline shares the same
observation model for head-to-head benchmarks in simulated mazes.
"""

from .errors import ConfigError, DegenerateBeliefError, MapParseError
from .geometry import (CellIndex, NetworkGeometry, Pose, PoseDelta,
                       compose_delta, normalize_angle)
from .grid_map import OccupancyGrid, load_map, network_geometry_for, raycast, save_map
from .observation import LidarScan, scan_likelihood, simulate_scan
from .pose_cells import KernelConfig, PoseCellNetwork

__all__ = [
    "CellIndex", "ConfigError", "DegenerateBeliefError", "KernelConfig",
    "LidarScan", "MapParseError", "NetworkGeometry", "OccupancyGrid", "Pose",
    "PoseCellNetwork", "PoseDelta", "compose_delta", "load_map",
    "network_geometry_for", "normalize_angle", "raycast", "save_map",
    "scan_likelihood", "simulate_scan",
]

__version__ = "0.1.0"
