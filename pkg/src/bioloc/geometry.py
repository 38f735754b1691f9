"""Planar poses, angle arithmetic, and the world <-> pose-cell index mapping.

Conventions: x/y in meters (world frame), headings in radians normalized to
[-pi, pi), counter-clockwise positive. Pose-cell indices quantize the world
with the network centered on the world origin, so the origin pose lands in
the middle cell of each axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi).

    Idempotent and 2*pi-periodic. Raises ValueError on non-finite input.
    """
    if not math.isfinite(a):
        raise ValueError(f"angle must be finite, got {a!r}")
    r = math.remainder(a, TWO_PI)
    if r >= math.pi:  # math.remainder may return exactly +pi
        r -= TWO_PI
    return r


def normalize_angles(a: np.ndarray) -> np.ndarray:
    """Vectorized normalize_angle for arrays."""
    return np.remainder(np.asarray(a, dtype=np.float64) + math.pi, TWO_PI) - math.pi


@dataclass(frozen=True)
class Pose:
    """Robot state (x, y, theta); theta is normalized on construction."""

    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("pose coordinates must be finite")
        object.__setattr__(self, "theta", normalize_angle(self.theta))


@dataclass(frozen=True)
class PoseDelta:
    """Pose change between two consecutive odometry readings.

    Carries both the world-frame components (dx, dy, dtheta) and the
    robot-frame components (forward, lateral) obtained by rotating the
    planar delta into the frame of the earlier pose.
    """

    dx: float
    dy: float
    dtheta: float
    forward: float
    lateral: float

    @classmethod
    def zero(cls) -> "PoseDelta":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_robot_frame(cls, forward: float, lateral: float, dtheta: float,
                         ref_heading: float) -> "PoseDelta":
        """Build a delta from robot-frame motion, rotating into the world
        frame of the given reference heading."""
        c, s = math.cos(ref_heading), math.sin(ref_heading)
        return cls(forward * c - lateral * s, forward * s + lateral * c,
                   normalize_angle(dtheta), forward, lateral)

    @property
    def translation(self) -> float:
        return math.hypot(self.forward, self.lateral)


def compose_delta(prev: Pose, cur: Pose) -> PoseDelta:
    """Delta taking prev to cur: world-frame planar change plus the
    robot-frame forward/lateral components relative to prev.theta."""
    dx = cur.x - prev.x
    dy = cur.y - prev.y
    dth = normalize_angle(cur.theta - prev.theta)
    c, s = math.cos(prev.theta), math.sin(prev.theta)
    forward = dx * c + dy * s
    lateral = -dx * s + dy * c
    return PoseDelta(dx, dy, dth, forward, lateral)


def apply_delta(p: Pose, d: PoseDelta) -> Pose:
    """Inverse of compose_delta: compose_delta(p, apply_delta(p, d)) == d."""
    return Pose(p.x + d.dx, p.y + d.dy, p.theta + d.dtheta)


@dataclass(frozen=True)
class CellIndex:
    """Integer coordinates of one pose cell (planar xp/yp, heading tp)."""

    xp: int
    yp: int
    tp: int

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.xp, self.yp, self.tp)


@dataclass(frozen=True)
class NetworkGeometry:
    """Discretization of (x, y, theta) into a pose-cell grid.

    Parameters
    ----------
    k_xy : float
        Metric size of a cell along x and y (meters per cell).
    k_theta : float
        Angular size of a heading cell (radians per cell).
    n_xy : int
        Cells per planar axis; the network spans
        [-n_xy/2 * k_xy, +n_xy/2 * k_xy) centered on the world origin.
    n_theta : int
        Heading cells; n_theta * k_theta must equal 2*pi.
    """

    k_xy: float
    k_theta: float
    n_xy: int
    n_theta: int

    def __post_init__(self):
        if self.k_xy <= 0 or self.k_theta <= 0:
            raise ValueError("cell sizes must be positive")
        if self.n_xy < 2 or self.n_theta < 2:
            raise ValueError("network needs at least 2 cells per axis")
        if abs(self.n_theta * self.k_theta - TWO_PI) > 1e-9:
            raise ValueError("n_theta * k_theta must cover exactly 2*pi")

    @property
    def half_extent(self) -> float:
        """Planar half width of the network in meters."""
        return self.n_xy * self.k_xy / 2.0

    def pose_to_cell(self, p: Pose) -> CellIndex:
        """Quantize a pose: scale by the cell sizes and shift by half the
        network so the origin maps to the central cell. The heading index
        wraps; planar indices must land inside the network extent."""
        xp = math.floor(p.x / self.k_xy + self.n_xy / 2)
        yp = math.floor(p.y / self.k_xy + self.n_xy / 2)
        tp = math.floor(p.theta / self.k_theta + self.n_theta / 2) % self.n_theta
        if not 0 <= xp < self.n_xy:
            raise ValueError(f"x={p.x} outside network extent on the x axis")
        if not 0 <= yp < self.n_xy:
            raise ValueError(f"y={p.y} outside network extent on the y axis")
        return CellIndex(xp, yp, tp)

    def cell_to_pose(self, c: CellIndex) -> Pose:
        """Center pose of a cell (the +0.5 offset halves quantization bias)."""
        self.validate_cell(c)
        return Pose((c.xp + 0.5 - self.n_xy / 2) * self.k_xy,
                    (c.yp + 0.5 - self.n_xy / 2) * self.k_xy,
                    (c.tp + 0.5 - self.n_theta / 2) * self.k_theta)

    def validate_cell(self, c: CellIndex) -> None:
        if not (0 <= c.xp < self.n_xy and 0 <= c.yp < self.n_xy
                and 0 <= c.tp < self.n_theta):
            raise ValueError(f"cell {c} out of range for {self.n_xy}x{self.n_xy}"
                             f"x{self.n_theta} network")

    def quantize_arrays(self, x, y, theta):
        """Vectorized pose_to_cell. Returns (xp, yp, tp, in_extent_mask);
        planar indices are clipped only through the mask, never wrapped."""
        xp = np.floor(np.asarray(x) / self.k_xy + self.n_xy / 2).astype(np.int64)
        yp = np.floor(np.asarray(y) / self.k_xy + self.n_xy / 2).astype(np.int64)
        tp = np.floor(np.asarray(theta) / self.k_theta + self.n_theta / 2).astype(np.int64)
        tp %= self.n_theta
        ok = (xp >= 0) & (xp < self.n_xy) & (yp >= 0) & (yp < self.n_xy)
        return xp, yp, tp, ok

    def layer_heading(self, tp) -> float:
        """Heading assigned to a theta layer for motion and scan matching.

        Uses the layer's lower edge, the same convention the likelihood
        model applies, so the layer the observations reinforce is also the
        layer that moves along the robot's true direction."""
        return (tp - self.n_theta / 2) * self.k_theta
