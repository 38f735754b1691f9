"""Synthetic maze worlds: map generation, scenario files, and the stepping
robot model with noisy odometry, noisy LiDAR, and kidnap events.

Mazes are carved from a coarse cell lattice with a randomized spanning
tree, then a fraction of the remaining interior walls is removed to create
corridor loops; free space stays connected by construction. An optional
mirrored-wing variant duplicates one half of the maze to stress landmark
and scan ambiguity.

Scenario files are plain key-value text; see ``parse_scenario``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, MapParseError
from .geometry import Pose, PoseDelta, compose_delta, normalize_angle
from .grid_map import OccupancyGrid
from .observation import LidarScan, simulate_scan

TRANS_CAP = 0.05  # meters per step; keeps shifts well inside the trilinear unit
ROT_CAP = 0.05    # radians per step
WAYPOINT_TOL = 0.08


# -- maze generation ----------------------------------------------------------

@dataclass(frozen=True)
class MazeSpec:
    width: float = 15.0
    height: float = 15.0
    resolution: float = 0.1
    cell: float = 1.5   # coarse lattice pitch (corridor plus wall)
    wall: float = 0.2
    loop_fraction: float = 0.15
    symmetric_wings: bool = False


def _maze_layout(spec: MazeSpec):
    if spec.width < 3.0 or spec.height < 3.0:
        raise ConfigError("maze must be at least 3 m x 3 m")
    if spec.resolution <= 0 or spec.cell <= spec.wall or spec.wall <= 0:
        raise ConfigError("need resolution > 0 and cell > wall > 0")
    wall_px = max(1, round(spec.wall / spec.resolution))
    pitch_px = round(spec.cell / spec.resolution)
    corr_px = pitch_px - wall_px
    if corr_px < 2:
        raise ConfigError("corridors narrower than 2 cells are not traversable")
    max_w_px = round(spec.width / spec.resolution)
    max_h_px = round(spec.height / spec.resolution)
    cw = (max_w_px - wall_px) // pitch_px
    ch = (max_h_px - wall_px) // pitch_px
    if cw < 1 or ch < 1:
        raise ConfigError("maze dimensions leave no room for a single cell")
    if spec.symmetric_wings:
        cw -= cw % 2
        if cw < 2:
            raise ConfigError("symmetric wings need at least two columns")
    # the grid fits the walls exactly: beyond the outer wall is off-map,
    # which scores as unknown instead of as endlessly thick masonry
    width_px = cw * pitch_px + wall_px
    height_px = ch * pitch_px + wall_px
    return wall_px, pitch_px, corr_px, cw, ch, 0, 0, width_px, height_px


def _spanning_maze(cw, ch, rng):
    """Randomized depth-first spanning tree over the coarse lattice.

    Returns wall presence arrays: v[i, j] is the wall between cells (i, j)
    and (i+1, j); h[i, j] between (i, j) and (i, j+1).
    """
    v = np.ones((max(cw - 1, 0), ch), dtype=bool)
    h = np.ones((cw, max(ch - 1, 0)), dtype=bool)
    visited = np.zeros((cw, ch), dtype=bool)
    stack = [(0, 0)]
    visited[0, 0] = True
    while stack:
        i, j = stack[-1]
        options = []
        if i + 1 < cw and not visited[i + 1, j]:
            options.append((i + 1, j, "v", i, j))
        if i - 1 >= 0 and not visited[i - 1, j]:
            options.append((i - 1, j, "v", i - 1, j))
        if j + 1 < ch and not visited[i, j + 1]:
            options.append((i, j + 1, "h", i, j))
        if j - 1 >= 0 and not visited[i, j - 1]:
            options.append((i, j - 1, "h", i, j - 1))
        if not options:
            stack.pop()
            continue
        ni, nj, kind, wi, wj = options[rng.integers(0, len(options))]
        if kind == "v":
            v[wi, wj] = False
        else:
            h[wi, wj] = False
        visited[ni, nj] = True
        stack.append((ni, nj))
    return v, h


def generate_maze(spec: MazeSpec, seed=None) -> OccupancyGrid:
    """Occupancy grid of a corridor maze centered on the world origin."""
    wall_px, pitch_px, corr_px, cw, ch, off_x, off_y, width_px, height_px = \
        _maze_layout(spec)
    rng = np.random.default_rng(seed)
    if spec.symmetric_wings:
        half = cw // 2
        v_half, h_half = _spanning_maze(half, ch, rng)
        v = np.ones((cw - 1, ch), dtype=bool)
        h = np.ones((cw, max(ch - 1, 0)), dtype=bool)
        v[:half - 1] = v_half
        h[:half] = h_half
        # mirror: wall between (i, j)-(i+1, j) maps to (cw-2-i, j)
        for i in range(half - 1):
            v[cw - 2 - i] = v[i]
        for i in range(half):
            h[cw - 1 - i] = h[i]
        # seam doors joining the wings (both mirror-symmetric positions)
        doors = rng.choice(ch, size=min(2, ch), replace=False)
        for j in doors:
            v[half - 1, j] = False
    else:
        v, h = _spanning_maze(cw, ch, rng)
        interior = [("v", i, j) for i in range(cw - 1) for j in range(ch) if v[i, j]]
        interior += [("h", i, j) for i in range(cw) for j in range(ch - 1) if h[i, j]]
        rng.shuffle(interior)
        for kind, i, j in interior[:round(spec.loop_fraction * len(interior))]:
            if kind == "v":
                v[i, j] = False
            else:
                h[i, j] = False
    cells = np.ones((height_px, width_px))

    def carve(x0, y0, w, hgt):
        cells[y0:y0 + hgt, x0:x0 + w] = 0.0

    for i in range(cw):
        for j in range(ch):
            carve(off_x + wall_px + i * pitch_px, off_y + wall_px + j * pitch_px,
                  corr_px, corr_px)
    for i in range(cw - 1):
        for j in range(ch):
            if not v[i, j]:
                carve(off_x + wall_px + i * pitch_px + corr_px,
                      off_y + wall_px + j * pitch_px, wall_px, corr_px)
    for i in range(cw):
        for j in range(ch - 1):
            if not h[i, j]:
                carve(off_x + wall_px + i * pitch_px,
                      off_y + wall_px + j * pitch_px + corr_px, corr_px, wall_px)
    origin = Pose(-width_px * spec.resolution / 2,
                  -height_px * spec.resolution / 2, 0.0)
    return OccupancyGrid(width_px, height_px, spec.resolution, origin, cells)


def parse_maze_spec(path) -> MazeSpec:
    """Key-value maze spec file; unknown keys are rejected."""
    spec = MazeSpec()
    fields = {"width": float, "height": float, "resolution": float,
              "cell": float, "wall": float, "loop_fraction": float,
              "symmetric_wings": lambda v: v.lower() in ("1", "true", "yes")}
    path = Path(path)
    if not path.exists():
        raise MapParseError(path, 0, "maze spec file not found")
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not eq or key not in fields:
            raise MapParseError(path, ln, f"unknown maze spec entry {key!r}")
        try:
            spec = replace(spec, **{key: fields[key](value)})
        except ValueError as exc:
            raise MapParseError(path, ln, f"bad value for {key}: {exc}") from exc
    return spec


# -- scenarios ----------------------------------------------------------------

@dataclass(frozen=True)
class LidarSpec:
    n_beams: int = 360
    fov: float = 2.0 * math.pi
    max_range: float = 8.0
    noise_sigma: float = 0.02


@dataclass(frozen=True)
class Waypoint:
    pose: Pose
    arrival_step: int


@dataclass(frozen=True)
class KidnapEvent:
    step: int
    pose: Pose


@dataclass(frozen=True)
class InitSpec:
    """How both localizers seed their initial belief."""

    kind: str = "gaussian"      # "gaussian" or "uniform"
    sigma_xy: float = 0.3
    sigma_theta: float = 0.2
    n_samples: int = 1000
    stride_xy: int = 4          # uniform seeding lattice strides
    stride_theta: int = 4

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform"):
            raise ConfigError(f"unknown init kind {self.kind!r}")


@dataclass
class Scenario:
    map_path: str
    start: Pose
    steps: int
    seed: int = 0
    waypoints: list[Waypoint] = field(default_factory=list)
    kidnaps: list[KidnapEvent] = field(default_factory=list)
    odom_noise: tuple[float, float] = (0.05, 0.05)
    lidar: LidarSpec = LidarSpec()
    init: InitSpec = InitSpec()
    beam_step: int = 1

    def validate_against(self, grid: OccupancyGrid) -> None:
        def check_free(pose, what):
            ix, iy = grid.world_to_grid(pose.x, pose.y)
            if grid.occupancy_at(ix, iy) >= 0.5:
                raise ConfigError(f"{what} ({pose.x:.2f}, {pose.y:.2f}) lies in "
                                  f"occupied space")
        check_free(self.start, "start pose")
        for w in self.waypoints:
            check_free(w.pose, "waypoint")
        for k in self.kidnaps:
            check_free(k.pose, "kidnap target")
            if not 0 <= k.step < self.steps:
                raise ConfigError(f"kidnap step {k.step} outside the scenario")


def parse_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise MapParseError(path, 0, "scenario file not found")
    values = {"seed": 0, "steps": None, "map": None, "start": None,
              "odom_noise": (0.05, 0.05), "beam_step": 1,
              "lidar": LidarSpec(), "init": InitSpec()}
    waypoints, kidnaps = [], []
    for ln, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        parts = value.split()
        try:
            if key == "map":
                values["map"] = value
            elif key == "seed":
                values["seed"] = int(value)
            elif key == "steps":
                values["steps"] = int(value)
            elif key == "beam_step":
                values["beam_step"] = int(value)
            elif key == "start":
                values["start"] = Pose(*(float(v) for v in parts))
            elif key == "odom_noise":
                values["odom_noise"] = (float(parts[0]), float(parts[1]))
            elif key == "lidar":
                values["lidar"] = LidarSpec(int(parts[0]), float(parts[1]),
                                            float(parts[2]), float(parts[3]))
            elif key == "init":
                if parts[0] == "gaussian":
                    values["init"] = InitSpec("gaussian", float(parts[1]),
                                              float(parts[2]), int(parts[3]))
                elif parts[0] == "uniform":
                    values["init"] = InitSpec("uniform",
                                              stride_xy=int(parts[1]),
                                              stride_theta=int(parts[2]))
                else:
                    raise ValueError(f"unknown init kind {parts[0]!r}")
            elif key == "waypoint":
                waypoints.append(Waypoint(Pose(float(parts[0]), float(parts[1]),
                                               float(parts[2])), int(parts[3])))
            elif key == "kidnap":
                kidnaps.append(KidnapEvent(int(parts[0]),
                                           Pose(float(parts[1]), float(parts[2]),
                                                float(parts[3]))))
            else:
                raise ValueError(f"unknown scenario entry {key!r}")
        except (ValueError, TypeError, IndexError) as exc:
            raise MapParseError(path, ln, str(exc)) from exc
    for required in ("map", "steps", "start"):
        if values[required] is None:
            raise MapParseError(path, 0, f"scenario is missing '{required}'")
    return Scenario(map_path=values["map"], start=values["start"],
                    steps=values["steps"], seed=values["seed"],
                    waypoints=waypoints, kidnaps=kidnaps,
                    odom_noise=values["odom_noise"], lidar=values["lidar"],
                    init=values["init"], beam_step=values["beam_step"])


def save_scenario(scenario: Scenario, path) -> None:
    lines = [f"map = {scenario.map_path}",
             f"seed = {scenario.seed}",
             f"steps = {scenario.steps}",
             f"beam_step = {scenario.beam_step}",
             f"start = {scenario.start.x!r} {scenario.start.y!r} "
             f"{scenario.start.theta!r}",
             f"odom_noise = {scenario.odom_noise[0]!r} {scenario.odom_noise[1]!r}",
             f"lidar = {scenario.lidar.n_beams} {scenario.lidar.fov!r} "
             f"{scenario.lidar.max_range!r} {scenario.lidar.noise_sigma!r}"]
    if scenario.init.kind == "gaussian":
        lines.append(f"init = gaussian {scenario.init.sigma_xy!r} "
                     f"{scenario.init.sigma_theta!r} {scenario.init.n_samples}")
    else:
        lines.append(f"init = uniform {scenario.init.stride_xy} "
                     f"{scenario.init.stride_theta}")
    for w in scenario.waypoints:
        lines.append(f"waypoint = {w.pose.x!r} {w.pose.y!r} {w.pose.theta!r} "
                     f"{w.arrival_step}")
    for k in scenario.kidnaps:
        lines.append(f"kidnap = {k.step} {k.pose.x!r} {k.pose.y!r} "
                     f"{k.pose.theta!r}")
    Path(path).write_text("\n".join(lines) + "\n")


# -- the stepping world -------------------------------------------------------

@dataclass(frozen=True)
class SimStep:
    step: int
    true_pose: Pose
    odom_delta: PoseDelta
    scan: LidarScan


class SimulationRun:
    """Deterministic playback of one scenario.

    Each step rotates toward the active waypoint (rate-capped), translates
    forward when roughly aligned (collision-checked), reports the
    noise-corrupted odometry delta of that motion, applies any kidnap event
    scheduled for the step (the jump is invisible to odometry), and returns
    the LiDAR scan taken from the resulting true pose.
    """

    def __init__(self, grid: OccupancyGrid, scenario: Scenario):
        scenario.validate_against(grid)
        self.grid = grid
        self.scenario = scenario
        self.rng = np.random.default_rng(scenario.seed)
        self.true_pose = scenario.start
        self.step_index = 0
        self._wp_index = 0
        self._kidnaps = {k.step: k.pose for k in scenario.kidnaps}

    def _active_waypoint(self):
        wps = self.scenario.waypoints
        while self._wp_index < len(wps):
            wp = wps[self._wp_index]
            dist = math.hypot(wp.pose.x - self.true_pose.x,
                              wp.pose.y - self.true_pose.y)
            if dist < WAYPOINT_TOL or self.step_index > wp.arrival_step:
                self._wp_index += 1
                continue
            return wp
        return None

    def _move(self) -> Pose:
        wp = self._active_waypoint()
        p = self.true_pose
        if wp is None:
            return p
        dist = math.hypot(wp.pose.x - p.x, wp.pose.y - p.y)
        bearing = math.atan2(wp.pose.y - p.y, wp.pose.x - p.x)
        herr = normalize_angle(bearing - p.theta)
        dtheta = max(-ROT_CAP, min(ROT_CAP, herr))
        theta = normalize_angle(p.theta + dtheta)
        x, y = p.x, p.y
        if abs(herr) < 0.3 and dist > 0:
            d = min(TRANS_CAP, dist)
            nx, ny = x + d * math.cos(theta), y + d * math.sin(theta)
            # collision-checked point motion: refuse to enter occupied cells
            mx, my = (x + nx) / 2, (y + ny) / 2
            free = all(self.grid.occupancy_at(*self.grid.world_to_grid(px, py)) < 0.5
                       for px, py in ((nx, ny), (mx, my)))
            if free:
                x, y = nx, ny
        return Pose(x, y, theta)

    def step(self) -> SimStep:
        if self.step_index >= self.scenario.steps:
            raise IndexError("stepped past the end of the scenario")
        prev = self.true_pose
        moved = self._move()
        clean = compose_delta(prev, moved)
        ts, rs = self.scenario.odom_noise
        if ts > 0 or rs > 0:
            noise = self.rng.normal(0.0, 1.0, 3)
            fwd = clean.forward + noise[0] * ts * abs(clean.forward)
            lat = clean.lateral + noise[1] * ts * abs(clean.forward)
            dth = clean.dtheta + noise[2] * rs * abs(clean.dtheta)
            delta = PoseDelta.from_robot_frame(fwd, lat, dth, prev.theta)
        else:
            delta = clean
        # a kidnap teleports the true pose after odometry was produced,
        # so the jump never shows up in the reported delta
        kid = self._kidnaps.get(self.step_index)
        self.true_pose = kid if kid is not None else moved
        lid = self.scenario.lidar
        scan = simulate_scan(self.grid, self.true_pose, lid.n_beams, lid.fov,
                             lid.max_range, lid.noise_sigma, rng_seed=self.rng)
        out = SimStep(self.step_index, self.true_pose, delta, scan)
        self.step_index += 1
        return out

    def run(self):
        """Iterate the full scenario."""
        while self.step_index < self.scenario.steps:
            yield self.step()


def collect_mapping_data(grid: OccupancyGrid, scenario: Scenario,
                         sample_every: int = 10):
    """Noise-free replay of a scenario for the landmark mapping pass.

    Returns (poses, scans) sampled every ``sample_every`` steps; poses are
    ground truth and scans are noiseless, matching the pre-built-map
    assumption of the mapping stage.
    """
    quiet = replace(scenario, odom_noise=(0.0, 0.0),
                    lidar=replace(scenario.lidar, noise_sigma=0.0),
                    kidnaps=[])
    run = SimulationRun(grid, quiet)
    poses, scans = [], []
    for item in run.run():
        if item.step % sample_every == 0:
            poses.append(item.true_pose)
            scans.append(item.scan)
    return poses, scans
