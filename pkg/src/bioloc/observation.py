"""LiDAR scans and likelihood-field matching against the occupancy grid.

A hypothesis is scored by projecting every returned beam endpoint into map
cells and averaging the occupancy found there. To soften quantization, each
endpoint takes the maximum occupancy over the 2x2 block of cells selected
by offsetting the endpoint +-half a cell on each axis before flooring.
Beams that returned nothing (range at max_range) are skipped and excluded
from the average; counting them as misses would penalize open space at
every pose alike.

Cell hypotheses are evaluated at the cell's corner coordinate with the
lower-edge heading of the theta layer; the same scoring core can also be
evaluated at a continuous pose, which is what the particle filter uses.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import CellIndex, NetworkGeometry, Pose
from .grid_map import OccupancyGrid, raycast_many


@dataclass(frozen=True)
class LidarScan:
    """One revolution of range returns with a fixed angular increment.

    Beam i points along ``angle_min + i * angle_increment`` in the sensor
    frame; ranges are clamped to [0, max_range] and a range equal to
    max_range means "no return".
    """

    ranges: np.ndarray = field(repr=False)
    angle_min: float = -math.pi
    angle_increment: float = 0.0
    max_range: float = 8.0

    def __post_init__(self):
        r = np.asarray(self.ranges, dtype=np.float64)
        if r.ndim != 1 or r.size < 1:
            raise ValueError("scan needs at least one beam")
        if r.min() < 0.0 or r.max() > self.max_range:
            raise ValueError("ranges must lie in [0, max_range]")
        object.__setattr__(self, "ranges", r)

    @property
    def n_beams(self) -> int:
        return self.ranges.size

    @property
    def bearings(self) -> np.ndarray:
        return self.angle_min + np.arange(self.n_beams) * self.angle_increment


def _block_max_occupancy(grid: OccupancyGrid, ex: np.ndarray, ey: np.ndarray) -> np.ndarray:
    """Max occupancy over the 2x2 cell block around each world endpoint."""
    mu = (ex - grid.origin.x) / grid.resolution
    mv = (ey - grid.origin.y) / grid.resolution
    flat = grid.cells.ravel()
    best = np.zeros_like(mu)
    for e1 in (-0.5, 0.5):
        ix = np.floor(mu + e1).astype(np.int64)
        okx = (ix >= 0) & (ix < grid.width)
        for e2 in (-0.5, 0.5):
            iy = np.floor(mv + e2).astype(np.int64)
            ok = okx & (iy >= 0) & (iy < grid.height)
            occ = np.zeros_like(mu)
            occ[ok] = flat[iy[ok] * grid.width + ix[ok]]
            np.maximum(best, occ, out=best)
    return best


def _scored_beams(scan: LidarScan, beam_step: int):
    r = scan.ranges[::beam_step]
    b = scan.bearings[::beam_step]
    keep = r < scan.max_range
    return r[keep], b[keep]


def pose_likelihoods(grid: OccupancyGrid, scan: LidarScan,
                     xs, ys, thetas, beam_step: int = 1) -> np.ndarray:
    """Likelihood-field score in [0, 1] at continuous poses (vectorized)."""
    xs = np.atleast_1d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_1d(np.asarray(ys, dtype=np.float64))
    thetas = np.atleast_1d(np.asarray(thetas, dtype=np.float64))
    r, b = _scored_beams(scan, beam_step)
    if r.size == 0:
        return np.zeros(xs.size)
    ang = thetas[:, None] + b[None, :]
    ex = xs[:, None] + r[None, :] * np.cos(ang)
    ey = ys[:, None] + r[None, :] * np.sin(ang)
    return _block_max_occupancy(grid, ex, ey).mean(axis=1)


def cell_likelihoods(grid: OccupancyGrid, scan: LidarScan, xp, yp, tp,
                     geom: NetworkGeometry, beam_step: int = 1) -> np.ndarray:
    """Likelihood-field score for many pose cells at once.

    Hypothesis position is the cell corner ``(xp - n_xy/2) * k_xy`` and the
    heading is the layer's lower edge ``(tp - n_theta/2) * k_theta``. Beam
    endpoint offsets are shared per theta layer, so the trigonometry is
    computed once per layer rather than once per cell.
    """
    xp = np.atleast_1d(np.asarray(xp, dtype=np.int64))
    yp = np.atleast_1d(np.asarray(yp, dtype=np.int64))
    tp = np.atleast_1d(np.asarray(tp, dtype=np.int64))
    r, b = _scored_beams(scan, beam_step)
    out = np.zeros(xp.size)
    if r.size == 0:
        return out
    wx = (xp - geom.n_xy / 2) * geom.k_xy
    wy = (yp - geom.n_xy / 2) * geom.k_xy
    for layer in np.unique(tp):
        sel = tp == layer
        h = (layer - geom.n_theta / 2) * geom.k_theta
        du = r * np.cos(b + h)
        dv = r * np.sin(b + h)
        ex = wx[sel][:, None] + du[None, :]
        ey = wy[sel][:, None] + dv[None, :]
        out[sel] = _block_max_occupancy(grid, ex, ey).mean(axis=1)
    return out


def scan_likelihood(grid: OccupancyGrid, scan: LidarScan, c: CellIndex,
                    geom: NetworkGeometry, beam_step: int = 1) -> float:
    """Score one pose-cell hypothesis; 0.0 when every beam was a no-return."""
    geom.validate_cell(c)
    if scan.n_beams < 1:
        raise ValueError("empty scan")
    return float(cell_likelihoods(grid, scan, [c.xp], [c.yp], [c.tp],
                                  geom, beam_step)[0])


def simulate_scan(grid: OccupancyGrid, true_pose: Pose, n_beams: int = 360,
                  fov: float = 2.0 * math.pi, max_range: float = 8.0,
                  noise_sigma: float = 0.0, rng_seed=None) -> LidarScan:
    """Ideal range finder: one raycast per beam plus optional zero-mean
    Gaussian range noise, clamped to [0, max_range]. Deterministic for a
    fixed seed; noise_sigma=0 returns the exact raycast distances."""
    if n_beams < 1:
        raise ValueError("need at least one beam")
    ix, iy = grid.world_to_grid(true_pose.x, true_pose.y)
    if grid.occupancy_at(ix, iy) >= 0.5:
        raise ValueError("scan pose lies inside an occupied cell")
    angle_min = -fov / 2.0
    increment = fov / n_beams
    bearings = angle_min + np.arange(n_beams) * increment
    ranges = raycast_many(grid, true_pose.x, true_pose.y,
                          true_pose.theta + bearings, max_range)
    if noise_sigma > 0.0:
        rng = np.random.default_rng(rng_seed)
        ranges = np.clip(ranges + rng.normal(0.0, noise_sigma, n_beams),
                         0.0, max_range)
    return LidarScan(ranges, angle_min, increment, max_range)


# -- scan log format ----------------------------------------------------------

def save_scan_log(path, scans) -> None:
    """Write scans as CSV rows: t, n_beams, angle_min, angle_increment,
    max_range, r_0, ..., r_{n-1}. ``scans`` is an iterable of (t, LidarScan)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for t, scan in scans:
            writer.writerow([t, scan.n_beams, repr(scan.angle_min),
                             repr(scan.angle_increment), repr(scan.max_range)]
                            + [repr(float(r)) for r in scan.ranges])


def load_scan_log(path) -> list[tuple[int, LidarScan]]:
    out = []
    with open(path, "r", newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            t, n = int(row[0]), int(row[1])
            scan = LidarScan(np.array([float(v) for v in row[5:5 + n]]),
                             float(row[2]), float(row[3]), float(row[4]))
            out.append((t, scan))
    return out
