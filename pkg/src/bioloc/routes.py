"""Route planning over occupancy grids and scripted scenario construction.

Exploration routes chain BFS paths between spread-out free locations,
simplified to line-of-sight waypoint legs so the scripted robot drives
smooth corridor runs. All choices are seeded, so generated scenarios are
reproducible.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import replace

import numpy as np

from .errors import ConfigError
from .geometry import Pose, normalize_angle
from .grid_map import OccupancyGrid
from .simulator import (ROT_CAP, TRANS_CAP, InitSpec, KidnapEvent, LidarSpec,
                        Scenario, SimulationRun, Waypoint)


def eroded_free_mask(grid: OccupancyGrid, margin_m: float) -> np.ndarray:
    """Boolean free-space mask shrunk away from walls by margin_m."""
    free = grid.cells < 0.5
    steps = max(0, round(margin_m / grid.resolution))
    mask = free.copy()
    for _ in range(steps):
        shrunk = mask.copy()
        shrunk[1:, :] &= mask[:-1, :]
        shrunk[:-1, :] &= mask[1:, :]
        shrunk[:, 1:] &= mask[:, :-1]
        shrunk[:, :-1] &= mask[:, 1:]
        mask = shrunk
    return mask


def bfs_path(mask: np.ndarray, start: tuple[int, int], goal: tuple[int, int]):
    """4-connected shortest path of (ix, iy) cells, or None."""
    h, w = mask.shape
    sx, sy = start
    gx, gy = goal
    if not (mask[sy, sx] and mask[gy, gx]):
        return None
    prev = {start: None}
    queue = deque([start])
    while queue:
        cx, cy = queue.popleft()
        if (cx, cy) == (gx, gy):
            path = []
            node = (cx, cy)
            while node is not None:
                path.append(node)
                node = prev[node]
            return path[::-1]
        for nx, ny in ((cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1)):
            if 0 <= nx < w and 0 <= ny < h and mask[ny, nx] \
                    and (nx, ny) not in prev:
                prev[(nx, ny)] = (cx, cy)
                queue.append((nx, ny))
    return None


def line_of_sight(mask: np.ndarray, a: tuple[int, int], b: tuple[int, int]) -> bool:
    """True when every cell on the dense line between a and b is free."""
    ax, ay = a
    bx, by = b
    n = max(abs(bx - ax), abs(by - ay))
    if n == 0:
        return bool(mask[ay, ax])
    for i in range(n + 1):
        t = i / n
        x = round(ax + (bx - ax) * t)
        y = round(ay + (by - ay) * t)
        if not mask[y, x]:
            return False
    return True


def simplify_path(mask: np.ndarray, path):
    """Greedy line-of-sight shortcutting of a BFS cell path."""
    if not path:
        return []
    out = [path[0]]
    i = 0
    while i < len(path) - 1:
        j = len(path) - 1
        while j > i + 1 and not line_of_sight(mask, path[i], path[j]):
            j -= 1
        out.append(path[j])
        i = j
    return out


def _farthest_point_targets(mask: np.ndarray, start, n_targets, rng):
    """Spread-out free cells chosen by farthest-point sampling on a
    subsampled candidate set."""
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        raise ConfigError("no traversable free space on this map")
    cand = np.stack([xs, ys], axis=1)[::7]
    chosen = [np.array(start)]
    d2 = ((cand - chosen[0]) ** 2).sum(axis=1).astype(float)
    for _ in range(n_targets):
        idx = int(np.argmax(d2 + rng.uniform(0, 4.0, len(cand))))
        chosen.append(cand[idx])
        d2 = np.minimum(d2, ((cand - cand[idx]) ** 2).sum(axis=1))
    return [tuple(int(v) for v in c) for c in chosen[1:]]


def _leg_steps(points, grid):
    """Conservative step budget for a waypoint leg (travel plus turning)."""
    dist = 0.0
    for a, b in zip(points[:-1], points[1:]):
        dist += math.hypot((b[0] - a[0]) * grid.resolution,
                           (b[1] - a[1]) * grid.resolution)
    return int(dist / TRANS_CAP * 1.5) + int(math.pi / ROT_CAP) + 20


def plan_route(grid: OccupancyGrid, start_cell, target_cells, mask,
               start_step: int = 0):
    """Waypoints visiting targets in order, with arrival-step deadlines."""
    waypoints = []
    here = start_cell
    step = start_step
    for target in target_cells:
        path = bfs_path(mask, here, target)
        if path is None:
            continue
        corners = simplify_path(mask, path)[1:]
        prev = here
        for cx, cy in corners:
            step += _leg_steps([prev, (cx, cy)], grid)
            wx, wy = grid.grid_to_world(cx, cy)
            heading = math.atan2(cy - prev[1], cx - prev[0])
            waypoints.append(Waypoint(Pose(wx, wy, heading), step))
            prev = (cx, cy)
        here = target
    return waypoints, here, step


def make_exploration_scenario(map_path: str, grid: OccupancyGrid, seed: int,
                              steps: int, n_targets: int = 6,
                              lidar: LidarSpec = LidarSpec(),
                              odom_noise=(0.05, 0.05),
                              init: InitSpec = InitSpec(),
                              beam_step: int = 1,
                              margin_m: float = 0.25) -> Scenario:
    """Scripted exploration tour over spread-out maze locations."""
    rng = np.random.default_rng(seed)
    mask = eroded_free_mask(grid, margin_m)
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        raise ConfigError("map erodes to nothing at this margin")
    start_cell = (int(xs[len(xs) // 2]), int(ys[len(xs) // 2]))
    waypoints = []
    here, step = start_cell, 0
    while step < steps:
        targets = _farthest_point_targets(mask, here, n_targets, rng)
        wps, here, step = plan_route(grid, here, targets, mask, step)
        if not wps:
            break
        waypoints.extend(wps)
    sx, sy = grid.grid_to_world(*start_cell)
    heading = 0.0
    if waypoints:
        heading = math.atan2(waypoints[0].pose.y - sy, waypoints[0].pose.x - sx)
    return Scenario(map_path=map_path, start=Pose(sx, sy, heading), steps=steps,
                    seed=seed, waypoints=waypoints, odom_noise=odom_noise,
                    lidar=lidar, init=init, beam_step=beam_step)


def pose_at_step(grid: OccupancyGrid, scenario: Scenario, step: int) -> Pose:
    """True pose the noise-free scenario reaches at a given step."""
    quiet = replace(scenario, odom_noise=(0.0, 0.0),
                    lidar=replace(scenario.lidar, noise_sigma=0.0, n_beams=1))
    run = SimulationRun(grid, quiet)
    pose = quiet.start
    for item in run.run():
        pose = item.true_pose
        if item.step >= step:
            break
    return pose


def make_kidnap_scenario(map_path: str, grid: OccupancyGrid,
                         base: Scenario, anchor_poses, k1: int, k2: int,
                         short_max: float = 2.0, long_min: float = 4.0,
                         margin_m: float = 0.25) -> Scenario:
    """Insert a short- and a long-distance kidnap into a tracking scenario.

    Kidnap targets are picked from the given anchor poses (places where
    landmarks were registered), so the dropped robot is looking at a scene
    it can recognize. After each jump the route continues from the target.
    """
    if not anchor_poses:
        raise ConfigError("kidnap scenario needs registered landmark anchors")
    if not 0 < k1 < k2 < base.steps:
        raise ConfigError("kidnap steps must satisfy 0 < k1 < k2 < steps")
    mask = eroded_free_mask(grid, margin_m)

    def usable(pose):
        ix, iy = grid.world_to_grid(pose.x, pose.y)
        return 0 <= ix < grid.width and 0 <= iy < grid.height and mask[iy, ix]

    def pick(from_pose, lo, hi):
        best = None
        for pose in anchor_poses:
            if not usable(pose):
                continue
            d = math.hypot(pose.x - from_pose.x, pose.y - from_pose.y)
            if lo < d < hi and (best is None or d < best[0]):
                best = (d, pose)
        if best is None:
            raise ConfigError(f"no landmark anchor between {lo} and {hi} m "
                              f"of the kidnap point")
        return best[1]

    rng = np.random.default_rng(base.seed + 101)
    pre = [w for w in base.waypoints if w.arrival_step <= k1]
    pose_k1 = pose_at_step(grid, base, k1)
    t1 = pick(pose_k1, 0.3, short_max)

    def route_from(pose, start_step, horizon):
        cell = grid.world_to_grid(pose.x, pose.y)
        wps, here, step = [], cell, start_step
        while step < horizon:
            targets = _farthest_point_targets(mask, here, 3, rng)
            leg, here, step = plan_route(grid, here, targets, mask, step)
            if not leg:
                break
            wps.extend(leg)
        return [w for w in wps if w.arrival_step <= horizon + 400]

    mid_wps = route_from(t1, k1 + 1, k2)
    mid_scenario = Scenario(map_path=map_path, start=t1, steps=k2 - k1,
                            seed=base.seed, waypoints=[
                                Waypoint(w.pose, w.arrival_step - k1 - 1)
                                for w in mid_wps],
                            odom_noise=(0.0, 0.0),
                            lidar=replace(base.lidar, noise_sigma=0.0, n_beams=1))
    pose_k2 = pose_at_step(grid, mid_scenario, k2 - k1 - 1)
    t2 = pick(pose_k2, long_min, 1e9)
    tail_wps = route_from(t2, k2 + 1, base.steps)
    return replace(base, waypoints=pre + mid_wps + tail_wps,
                   kidnaps=[KidnapEvent(k1, t1), KidnapEvent(k2, t2)])
