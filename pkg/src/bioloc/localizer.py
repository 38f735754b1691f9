"""One full localization iteration over the pose cell network.

Step order: path integration, observation update, landmark handling
(activation, injection, and in mapping mode registration), local
excitation, local inhibition, global inhibition, normalization, and local
view activity decay. Injection sits between the observation update and
excitation so a freshly injected hypothesis is smoothed immediately and
has to survive the same inhibition as every organic one.

If the belief ever empties (nothing matched the scan), the step reseeds it
uniformly over free space and flags the estimate as recovered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBeliefError
from .geometry import CellIndex, NetworkGeometry, Pose, PoseDelta
from .grid_map import OccupancyGrid, network_geometry_for
from .local_view import (Adjacency, LocalViewStore, extract_landmark, inject,
                         match_landmark, preprocess_scan, register_landmark)
from .observation import LidarScan, cell_likelihoods
from .pose_cells import KernelConfig, PoseCellNetwork
from .simulator import InitSpec


@dataclass
class LocalizerConfig:
    """All tunables of one localizer in one place."""

    geometry: NetworkGeometry
    kernels: KernelConfig = field(default_factory=KernelConfig)
    s_v: float = 0.05
    lv_match_threshold: float = 0.9
    convergence_threshold: float = 0.8
    path_integration_mode: str = "per_heading"
    init: InitSpec = field(default_factory=InitSpec)
    prune_epsilon: float = 1e-6
    boundary_mode: str = "wrap"
    beam_step: int = 1
    lv_cell_size: float = 0.05
    lv_split_tolerance: float = 0.1
    lv_enabled: bool = True
    mapping_enabled: bool = False
    recovery_stride_xy: int = 4
    recovery_stride_theta: int = 4


@dataclass(frozen=True)
class StepResult:
    step: int
    pose: Pose
    confidence: float
    converged: bool
    lv_id: int = -1            # -1 when no landmark matched this step
    injected_mass: float = 0.0
    recovered: bool = False


class Localizer:
    """Attractor-network localizer bound to one map and landmark store."""

    def __init__(self, grid: OccupancyGrid, config: LocalizerConfig,
                 store: LocalViewStore | None = None,
                 adjacency: Adjacency | None = None):
        self.grid = grid
        self.config = config
        self.net = PoseCellNetwork(config.geometry,
                                   prune_epsilon=config.prune_epsilon,
                                   boundary_mode=config.boundary_mode)
        self.store = store if store is not None else LocalViewStore()
        self.adjacency = adjacency if adjacency is not None else Adjacency()
        self.step_count = 0
        self._free_cells_cache: list[CellIndex] | None = None

    # -- initialization ------------------------------------------------------

    def initialize(self, pose0: Pose | None, rng_seed=None) -> None:
        """Seed the belief per the configured InitSpec; gaussian mode centers
        on pose0, uniform mode ignores it."""
        init = self.config.init
        if init.kind == "gaussian":
            if pose0 is None:
                raise ValueError("gaussian initialization needs a center pose")
            self.net.initialize_gaussian(pose0, init.sigma_xy, init.sigma_theta,
                                         init.n_samples, rng_seed=rng_seed)
        else:
            self.net.initialize_uniform(
                self.free_space_cells(init.stride_xy, init.stride_theta))

    def free_space_cells(self, stride_xy: int, stride_theta: int) -> list[CellIndex]:
        """Pose cells over the map's free space on a strided lattice.

        The per-cell seed mass 1/n must clear the global inhibition rate,
        so the strides trade coverage against survivable seeding."""
        g = self.config.geometry
        cells = []
        for iy in range(0, self.grid.height, stride_xy):
            for ix in range(0, self.grid.width, stride_xy):
                if self.grid.cells[iy, ix] < 0.5:
                    wx, wy = self.grid.grid_to_world(ix, iy)
                    try:
                        base = g.pose_to_cell(Pose(wx, wy, 0.0))
                    except ValueError:
                        continue
                    for tp in range(0, g.n_theta, stride_theta):
                        cells.append(CellIndex(base.xp, base.yp, tp))
        return cells

    def _recovery_cells(self) -> list[CellIndex]:
        if self._free_cells_cache is None:
            self._free_cells_cache = self.free_space_cells(
                self.config.recovery_stride_xy, self.config.recovery_stride_theta)
        return self._free_cells_cache

    # -- the iteration ---------------------------------------------------------

    def _observation_update(self, scan: LidarScan) -> None:
        cfg = self.config
        self.net.apply_observation_values(
            lambda xp, yp, tp: cell_likelihoods(self.grid, scan, xp, yp, tp,
                                                cfg.geometry, cfg.beam_step))

    def _landmark_update(self, scan: LidarScan) -> tuple[int, float]:
        cfg = self.config
        if not cfg.lv_enabled:
            return -1, 0.0
        points = preprocess_scan(scan, cfg.lv_cell_size)
        landmark = extract_landmark(points, cfg.lv_split_tolerance)
        lv_id, injected = -1, 0.0
        detected = ()
        if landmark is not None:
            hit = match_landmark(self.store, landmark, cfg.lv_match_threshold)
            if hit is not None:
                lv_id, score = hit
                was_quiet = self.store.get(lv_id).activity < 0.5
                self.store.set_activation(lv_id, score)
                detected = (lv_id,)
                # inject on the rising edge of a detection only; re-injecting
                # a continuously matched scene every step piles mass onto a
                # stale anchor faster than the observations can veto it
                if was_quiet:
                    injected = inject(self.net, self.store, self.adjacency,
                                      cfg.s_v)
            elif cfg.mapping_enabled and len(self.net) \
                    and self.net.is_converged(cfg.convergence_threshold):
                anchor, _ = self.net.estimate()
                register_landmark(self.store, self.adjacency, landmark,
                                  cfg.geometry.pose_to_cell(anchor))
        self._detected_this_step = detected
        return lv_id, injected

    def step(self, odom_delta: PoseDelta, scan: LidarScan) -> StepResult:
        cfg = self.config
        self._detected_this_step = ()
        self.net.path_integrate(odom_delta, mode=cfg.path_integration_mode)
        if len(self.net):
            self._observation_update(scan)
        lv_id, injected = self._landmark_update(scan)
        self.net.excite(cfg.kernels)
        self.net.inhibit(cfg.kernels)
        self.net.global_inhibit(cfg.kernels.s_g)
        recovered = False
        try:
            self.net.normalize()
        except DegenerateBeliefError:
            cells = self._recovery_cells()
            if not cells:
                raise DegenerateBeliefError(
                    "belief degenerated and the map has no free space to reseed")
            self.net.initialize_uniform(cells)
            recovered = True
        self.store.decay_activities(skip=self._detected_this_step)
        pose, confidence = self.net.estimate()
        result = StepResult(self.step_count, pose, confidence,
                            confidence >= cfg.convergence_threshold,
                            lv_id, injected, recovered)
        self.step_count += 1
        return result


def run_mapping_pass(grid: OccupancyGrid, trajectory, scans,
                     config: LocalizerConfig) -> tuple[LocalViewStore, Adjacency]:
    """Build the landmark store from ground-truth poses and their scans.

    For each pose/scan pair a landmark is extracted and registered at the
    pose's cell when it does not already match a stored one (the pre-built
    map assumption extended to landmark anchors).
    """
    trajectory = list(trajectory)
    scans = list(scans)
    if not trajectory:
        raise ValueError("mapping pass needs a non-empty trajectory")
    if len(trajectory) != len(scans):
        raise ValueError("trajectory and scans must have equal length")
    store, adjacency = LocalViewStore(), Adjacency()
    for pose, scan in zip(trajectory, scans):
        points = preprocess_scan(scan, config.lv_cell_size)
        landmark = extract_landmark(points, config.lv_split_tolerance)
        if landmark is None:
            continue
        if match_landmark(store, landmark, config.lv_match_threshold) is None:
            register_landmark(store, adjacency, landmark,
                              config.geometry.pose_to_cell(pose))
    return store, adjacency


def default_config(grid: OccupancyGrid, **overrides) -> LocalizerConfig:
    """Config with the geometry fitted to a map; keyword overrides applied."""
    geometry = overrides.pop("geometry", None) or network_geometry_for(grid)
    return LocalizerConfig(geometry=geometry, **overrides)
