"""Occupancy grid storage, file I/O, world<->grid transforms, and raycasting.

Two on-disk formats are supported:

* ASCII grid: first line ``cols rows resolution origin_x origin_y``, then
  ``rows`` lines of ``cols`` characters from ``#`` (occupied), ``.`` (free)
  and digits ``0``-``9`` (occupancy d/9). Line ``i`` after the header is
  grid row ``iy = i``.
* Binary PGM (P5), dark = occupied (``occ = 1 - gray/maxval``), with a
  sidecar text file ``<stem>.meta`` holding ``resolution: <m>`` and
  ``origin: <x> <y> <theta>`` lines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MapParseError
from .geometry import NetworkGeometry, Pose


@dataclass
class OccupancyGrid:
    """2D occupancy map; ``cells[iy, ix]`` holds occupancy in [0, 1].

    ``origin`` is the world pose of the corner of cell (0, 0); cell (ix, iy)
    covers the world rectangle starting at
    ``(origin.x + ix*resolution, origin.y + iy*resolution)``.
    """

    width: int
    height: int
    resolution: float
    origin: Pose
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        self.cells = np.asarray(self.cells, dtype=np.float64)
        if self.cells.shape != (self.height, self.width):
            raise ValueError(f"cell array shape {self.cells.shape} does not match "
                             f"{self.height}x{self.width}")
        if self.cells.size and (self.cells.min() < 0.0 or self.cells.max() > 1.0):
            raise ValueError("occupancy values must lie in [0, 1]")

    # -- lookups -----------------------------------------------------------

    def occupancy_at(self, ix: int, iy: int) -> float:
        """Stored value for in-bounds indices, 0.0 outside (unknown space
        matches nothing). Total function, never raises."""
        if 0 <= ix < self.width and 0 <= iy < self.height:
            return float(self.cells[iy, ix])
        return 0.0

    def world_to_grid(self, x: float, y: float) -> tuple[int, int]:
        """Floor-quantized cell indices; may be out of bounds."""
        return (math.floor((x - self.origin.x) / self.resolution),
                math.floor((y - self.origin.y) / self.resolution))

    def grid_to_world(self, ix: int, iy: int) -> tuple[float, float]:
        """World coordinates of the center of a cell."""
        return (self.origin.x + (ix + 0.5) * self.resolution,
                self.origin.y + (iy + 0.5) * self.resolution)

    def contains_world(self, x: float, y: float) -> bool:
        ix, iy = self.world_to_grid(x, y)
        return 0 <= ix < self.width and 0 <= iy < self.height

    def free_cells(self, threshold: float = 0.5) -> np.ndarray:
        """(n, 2) array of (ix, iy) for cells with occupancy < threshold."""
        iy, ix = np.nonzero(self.cells < threshold)
        return np.stack([ix, iy], axis=1)


def network_geometry_for(grid: OccupancyGrid, k_xy: float = 0.1,
                         n_theta: int = 36, margin_cells: int = 8) -> NetworkGeometry:
    """Geometry whose planar extent covers the map plus a kernel margin,
    so wrap-mode boundary handling never aliases distinct map locations."""
    reach = max(abs(grid.origin.x), abs(grid.origin.x + grid.width * grid.resolution),
                abs(grid.origin.y), abs(grid.origin.y + grid.height * grid.resolution))
    n_xy = 2 * (math.ceil(reach / k_xy) + margin_cells)
    return NetworkGeometry(k_xy=k_xy, k_theta=2.0 * math.pi / n_theta,
                           n_xy=n_xy, n_theta=n_theta)


# -- file I/O ---------------------------------------------------------------

_ASCII_OCC = {"#": 1.0, ".": 0.0}
_ASCII_OCC.update({str(d): d / 9.0 for d in range(10)})


def load_map(path) -> OccupancyGrid:
    """Load an ASCII grid or binary PGM (sniffed from the magic bytes)."""
    path = Path(path)
    if not path.exists():
        raise MapParseError(path, 0, "file not found")
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P5":
        return _load_pgm(path)
    return _load_ascii(path)


def _load_ascii(path: Path) -> OccupancyGrid:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MapParseError(path, 1, "empty map file")
    header = lines[0].split()
    if len(header) != 5:
        raise MapParseError(path, 1, "header must be 'cols rows resolution "
                                      "origin_x origin_y'")
    try:
        cols, rows = int(header[0]), int(header[1])
        resolution = float(header[2])
        ox, oy = float(header[3]), float(header[4])
    except ValueError as exc:
        raise MapParseError(path, 1, f"bad header field: {exc}") from exc
    if cols <= 0 or rows <= 0 or resolution <= 0:
        raise MapParseError(path, 1, "cols, rows and resolution must be positive")
    if len(lines) - 1 < rows:
        raise MapParseError(path, len(lines), f"expected {rows} data rows, "
                                              f"got {len(lines) - 1}")
    cells = np.zeros((rows, cols))
    for iy in range(rows):
        line = lines[1 + iy]
        if len(line) != cols:
            raise MapParseError(path, 2 + iy, f"row has {len(line)} characters, "
                                              f"expected {cols}")
        for ix, ch in enumerate(line):
            try:
                cells[iy, ix] = _ASCII_OCC[ch]
            except KeyError:
                raise MapParseError(path, 2 + iy,
                                    f"invalid character {ch!r} at column {ix}") from None
    return OccupancyGrid(cols, rows, resolution, Pose(ox, oy, 0.0), cells)


def save_map(grid: OccupancyGrid, path) -> None:
    """Write the ASCII format; values snap to the nearest representable
    character so load_map(save_map(g)) round-trips grids that came from
    ASCII files exactly."""
    path = Path(path)
    out = [f"{grid.width} {grid.height} {grid.resolution!r} "
           f"{grid.origin.x!r} {grid.origin.y!r}"]
    for iy in range(grid.height):
        row = []
        for v in grid.cells[iy]:
            if v <= 0.0:
                row.append(".")
            elif v >= 1.0:
                row.append("#")
            else:
                row.append(str(min(8, max(1, round(v * 9)))))
        out.append("".join(row))
    path.write_text("\n".join(out) + "\n", encoding="ascii")


def _load_pgm(path: Path) -> OccupancyGrid:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos, line = [], 0, 1
    while len(tokens) < 4:
        if pos >= len(data):
            raise MapParseError(path, line, "truncated PGM header")
        ch = data[pos:pos + 1]
        if ch == b"#":  # comment runs to end of line
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        if ch.isspace():
            if ch == b"\n":
                line += 1
            pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    if tokens[0] != "P5":
        raise MapParseError(path, 1, f"not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise MapParseError(path, line, f"bad PGM header token: {exc}") from exc
    if maxval <= 0 or maxval > 255:
        raise MapParseError(path, line, f"unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    raw = data[pos:pos + width * height]
    if len(raw) != width * height:
        raise MapParseError(path, line, f"expected {width * height} pixel bytes, "
                                        f"got {len(raw)}")
    gray = np.frombuffer(raw, dtype=np.uint8).reshape(height, width)
    cells = 1.0 - gray.astype(np.float64) / maxval
    resolution, origin = _load_pgm_meta(path)
    return OccupancyGrid(width, height, resolution, origin, cells)


def _load_pgm_meta(path: Path) -> tuple[float, Pose]:
    meta_path = path.with_suffix(".meta")
    if not meta_path.exists():
        raise MapParseError(meta_path, 0, "missing PGM sidecar metadata file")
    resolution, origin = None, None
    with open(meta_path, "r", encoding="ascii") as fh:
        for ln, text in enumerate(fh, start=1):
            text = text.strip()
            if not text or text.startswith("#"):
                continue
            key, _, value = text.partition(":")
            fieldsv = value.split()
            try:
                if key.strip() == "resolution":
                    resolution = float(fieldsv[0])
                elif key.strip() == "origin":
                    origin = Pose(float(fieldsv[0]), float(fieldsv[1]),
                                  float(fieldsv[2]) if len(fieldsv) > 2 else 0.0)
            except (ValueError, IndexError) as exc:
                raise MapParseError(meta_path, ln, f"bad {key.strip()} line") from exc
    if resolution is None or resolution <= 0:
        raise MapParseError(meta_path, 0, "sidecar must define a positive resolution")
    if origin is None:
        raise MapParseError(meta_path, 0, "sidecar must define an origin")
    return resolution, origin


# -- raycasting -------------------------------------------------------------

def raycast(grid: OccupancyGrid, origin: Pose, bearing: float, max_range: float,
            occ_threshold: float = 0.5) -> float:
    """Distance to the first cell with occupancy >= occ_threshold along the
    world bearing ``origin.theta + bearing``, walked with an exact
    cell-boundary traversal (no fixed-step sampling, so thin walls cannot
    be tunneled through). Returns max_range when nothing is hit.
    """
    if max_range < 0:
        raise ValueError("max_range must be non-negative")
    res = grid.resolution
    lx = (origin.x - grid.origin.x) / res
    ly = (origin.y - grid.origin.y) / res
    ix, iy = math.floor(lx), math.floor(ly)
    if not (0 <= ix < grid.width and 0 <= iy < grid.height):
        raise ValueError("raycast start pose lies outside the grid")
    if grid.cells[iy, ix] >= occ_threshold:
        return 0.0
    ang = origin.theta + bearing
    dx, dy = math.cos(ang), math.sin(ang)
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    # distances (in meters) to the next vertical/horizontal cell boundary
    if dx != 0.0:
        nxt = ix + 1 if dx > 0 else ix
        tmax_x = (nxt - lx) * res / dx
        tdelta_x = res / abs(dx)
    else:
        tmax_x, tdelta_x = math.inf, math.inf
    if dy != 0.0:
        nxt = iy + 1 if dy > 0 else iy
        tmax_y = (nxt - ly) * res / dy
        tdelta_y = res / abs(dy)
    else:
        tmax_y, tdelta_y = math.inf, math.inf
    while True:
        if tmax_x <= tmax_y:
            t = tmax_x
            tmax_x += tdelta_x
            ix += step_x
        else:
            t = tmax_y
            tmax_y += tdelta_y
            iy += step_y
        if t > max_range:
            return max_range
        if not (0 <= ix < grid.width and 0 <= iy < grid.height):
            return max_range  # grid is convex; the ray never re-enters
        if grid.cells[iy, ix] >= occ_threshold:
            return t


def raycast_many(grid: OccupancyGrid, x: float, y: float, angles: np.ndarray,
                 max_range: float, occ_threshold: float = 0.5) -> np.ndarray:
    """Vectorized raycast from one origin along many world angles.

    Performs the same boundary walk as :func:`raycast` in lockstep across
    rays; agrees with it bit for bit.
    """
    angles = np.asarray(angles, dtype=np.float64)
    res = grid.resolution
    lx = (x - grid.origin.x) / res
    ly = (y - grid.origin.y) / res
    ix0, iy0 = math.floor(lx), math.floor(ly)
    if not (0 <= ix0 < grid.width and 0 <= iy0 < grid.height):
        raise ValueError("raycast start pose lies outside the grid")
    n = angles.size
    out = np.full(n, max_range, dtype=np.float64)
    if grid.cells[iy0, ix0] >= occ_threshold:
        out[:] = 0.0
        return out
    dx, dy = np.cos(angles), np.sin(angles)
    step_x = np.where(dx > 0, 1, -1)
    step_y = np.where(dy > 0, 1, -1)
    ix = np.full(n, ix0, dtype=np.int64)
    iy = np.full(n, iy0, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        tmax_x = np.where(dx != 0.0,
                          (np.where(dx > 0, ix0 + 1, ix0) - lx) * res / dx, np.inf)
        tdelta_x = np.where(dx != 0.0, res / np.abs(dx), np.inf)
        tmax_y = np.where(dy != 0.0,
                          (np.where(dy > 0, iy0 + 1, iy0) - ly) * res / dy, np.inf)
        tdelta_y = np.where(dy != 0.0, res / np.abs(dy), np.inf)
    alive = np.ones(n, dtype=bool)
    while alive.any():
        use_x = alive & (tmax_x <= tmax_y)
        use_y = alive & ~use_x
        t = np.where(use_x, tmax_x, tmax_y)
        tmax_x[use_x] += tdelta_x[use_x]
        ix[use_x] += step_x[use_x]
        tmax_y[use_y] += tdelta_y[use_y]
        iy[use_y] += step_y[use_y]
        over = alive & (t > max_range)
        alive &= ~over
        oob = alive & ~((ix >= 0) & (ix < grid.width) & (iy >= 0) & (iy < grid.height))
        alive &= ~oob
        if alive.any():
            hit = np.zeros(n, dtype=bool)
            hit[alive] = grid.cells[iy[alive], ix[alive]] >= occ_threshold
            out[hit] = t[hit]
            alive &= ~hit
    return out
