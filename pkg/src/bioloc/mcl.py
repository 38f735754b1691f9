"""Monte Carlo Localization baseline.

Plain particle filter over the occupancy grid, weighted with the same
likelihood-field scan scoring as the attractor network so the comparison
isolates the belief representation. Fixed particle count, systematic
(low-variance) resampling when the effective sample size drops below half
the population; no adaptive sampling and no random-particle injection,
which is exactly what the kidnap experiment probes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import NetworkGeometry, Pose, PoseDelta, normalize_angle, normalize_angles
from .grid_map import OccupancyGrid
from .observation import LidarScan, cell_likelihoods


@dataclass
class ParticleSet:
    """Pose hypotheses (n, 3 array of x, y, theta) with normalized weights."""

    poses: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    degenerate_reset: bool = False

    def __post_init__(self):
        self.poses = np.asarray(self.poses, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.poses.ndim != 2 or self.poses.shape[1] != 3 or len(self.poses) < 1:
            raise ValueError("poses must be a non-empty (n, 3) array")
        if self.weights.shape != (len(self.poses),):
            raise ValueError("weights must match the particle count")
        if self.weights.min() < 0:
            raise ValueError("weights must be non-negative")

    @property
    def n(self) -> int:
        return len(self.poses)


def mcl_init(n: int, grid: OccupancyGrid = None, pose0: Pose = None,
             sigma_xy: float = 0.0, sigma_theta: float = 0.0,
             rng_seed=None) -> ParticleSet:
    """Uniform initialization over the grid's free space, or Gaussian around
    pose0 when one is given. Weights start at 1/n."""
    if n < 1:
        raise ValueError("need at least one particle")
    rng = np.random.default_rng(rng_seed)
    poses = np.empty((n, 3))
    if pose0 is not None:
        poses[:, 0] = pose0.x + (rng.normal(0, sigma_xy, n) if sigma_xy > 0 else 0.0)
        poses[:, 1] = pose0.y + (rng.normal(0, sigma_xy, n) if sigma_xy > 0 else 0.0)
        poses[:, 2] = normalize_angles(
            pose0.theta + (rng.normal(0, sigma_theta, n) if sigma_theta > 0 else 0.0))
    else:
        if grid is None:
            raise ValueError("uniform initialization needs a map")
        free = grid.free_cells()
        if len(free) == 0:
            raise ValueError("map has no free space to sample")
        picks = free[rng.integers(0, len(free), n)]
        jitter = rng.uniform(0.0, grid.resolution, (n, 2))
        poses[:, 0] = grid.origin.x + picks[:, 0] * grid.resolution + jitter[:, 0]
        poses[:, 1] = grid.origin.y + picks[:, 1] * grid.resolution + jitter[:, 1]
        poses[:, 2] = rng.uniform(-math.pi, math.pi, n)
    return ParticleSet(poses, np.full(n, 1.0 / n))


def mcl_predict(ps: ParticleSet, delta: PoseDelta,
                noise: tuple[float, float] = (0.05, 0.05),
                rng_seed=None) -> ParticleSet:
    """Move every particle by the robot-frame delta rotated into its own
    heading, with Gaussian noise scaled by the motion magnitude
    (trans_sigma per meter translated, rot_sigma per radian turned)."""
    rng = np.random.default_rng(rng_seed)
    trans_sigma, rot_sigma = noise
    n = ps.n
    dist = delta.translation
    s_t = trans_sigma * dist
    s_r = rot_sigma * abs(delta.dtheta)
    fwd = delta.forward + (rng.normal(0, s_t, n) if s_t > 0 else 0.0)
    lat = delta.lateral + (rng.normal(0, s_t, n) if s_t > 0 else 0.0)
    dth = delta.dtheta + (rng.normal(0, s_r, n) if s_r > 0 else 0.0)
    c = np.cos(ps.poses[:, 2])
    s = np.sin(ps.poses[:, 2])
    out = np.empty_like(ps.poses)
    out[:, 0] = ps.poses[:, 0] + fwd * c - lat * s
    out[:, 1] = ps.poses[:, 1] + fwd * s + lat * c
    out[:, 2] = normalize_angles(ps.poses[:, 2] + dth)
    return ParticleSet(out, ps.weights.copy())


def mcl_weight(ps: ParticleSet, grid: OccupancyGrid, scan: LidarScan,
               geom: NetworkGeometry, beam_step: int = 1) -> ParticleSet:
    """Multiply weights by the scan likelihood at each particle's pose and
    renormalize; an all-zero posterior falls back to uniform weights with
    the degenerate_reset flag raised.

    Scoring goes through the same cell-quantized likelihood as the
    attractor network (the particle's pose cell is what gets scored), so
    neither method sees a sharper observation model than the other.
    Particles outside the network extent score zero.
    """
    xp, yp, tp, ok = geom.quantize_arrays(ps.poses[:, 0], ps.poses[:, 1],
                                          ps.poses[:, 2])
    lk = np.zeros(ps.n)
    if ok.any():
        lk[ok] = cell_likelihoods(grid, scan, xp[ok], yp[ok], tp[ok], geom,
                                  beam_step=beam_step)
    w = ps.weights * lk
    total = w.sum()
    if total <= 0.0:
        return ParticleSet(ps.poses.copy(), np.full(ps.n, 1.0 / ps.n),
                           degenerate_reset=True)
    return ParticleSet(ps.poses.copy(), w / total)


def mcl_resample(ps: ParticleSet, rng_seed=None) -> ParticleSet:
    """Systematic (low-variance) resampling: one stratified draw per
    particle, expected copy count n * weight_i, uniform weights after."""
    rng = np.random.default_rng(rng_seed)
    n = ps.n
    positions = (np.arange(n) + rng.uniform()) / n
    cumulative = np.cumsum(ps.weights)
    cumulative[-1] = max(cumulative[-1], 1.0)
    picks = np.searchsorted(cumulative, positions, side="right")
    return ParticleSet(ps.poses[picks].copy(), np.full(n, 1.0 / n))


def mcl_estimate(ps: ParticleSet) -> tuple[Pose, float]:
    """Weighted mean pose (circular mean heading) and the weighted
    positional standard deviation around it."""
    w = ps.weights
    total = w.sum()
    if total <= 0:
        w = np.full(ps.n, 1.0 / ps.n)
        total = 1.0
    mx = float(np.dot(w, ps.poses[:, 0]) / total)
    my = float(np.dot(w, ps.poses[:, 1]) / total)
    mt = math.atan2(float(np.dot(w, np.sin(ps.poses[:, 2]))),
                    float(np.dot(w, np.cos(ps.poses[:, 2]))))
    spread = math.sqrt(float(np.dot(w, (ps.poses[:, 0] - mx) ** 2
                                    + (ps.poses[:, 1] - my) ** 2) / total))
    return Pose(mx, my, normalize_angle(mt)), spread


def effective_sample_size(ps: ParticleSet) -> float:
    s = ps.weights.sum()
    if s <= 0:
        return 0.0
    w = ps.weights / s
    return 1.0 / float(np.dot(w, w))


class MclLocalizer:
    """Harness wrapper running predict / weight / resample per step with a
    single seeded random stream."""

    def __init__(self, grid: OccupancyGrid, geom: NetworkGeometry,
                 n_particles: int = 500,
                 noise: tuple[float, float] = (0.05, 0.05), beam_step: int = 1,
                 resample_ess_fraction: float = 0.5, rng_seed=None):
        self.grid = grid
        self.geom = geom
        self.noise = noise
        self.beam_step = beam_step
        self.resample_ess_fraction = resample_ess_fraction
        self.rng = np.random.default_rng(rng_seed)
        self.n_particles = n_particles
        self.particles: ParticleSet | None = None

    def initialize_uniform(self) -> None:
        self.particles = mcl_init(self.n_particles, grid=self.grid, rng_seed=self.rng)

    def initialize_gaussian(self, pose0: Pose, sigma_xy: float,
                            sigma_theta: float) -> None:
        self.particles = mcl_init(self.n_particles, pose0=pose0,
                                  sigma_xy=sigma_xy, sigma_theta=sigma_theta,
                                  rng_seed=self.rng)

    def step(self, delta: PoseDelta, scan: LidarScan) -> tuple[Pose, float]:
        if self.particles is None:
            raise RuntimeError("localizer not initialized")
        ps = mcl_predict(self.particles, delta, self.noise, rng_seed=self.rng)
        ps = mcl_weight(ps, self.grid, scan, self.geom, beam_step=self.beam_step)
        if effective_sample_size(ps) < self.resample_ess_fraction * ps.n:
            ps = mcl_resample(ps, rng_seed=self.rng)
        self.particles = ps
        return mcl_estimate(ps)
