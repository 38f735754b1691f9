"""Local view cells: corner landmarks linked to pose cells for relocalization.

A landmark is the constellation of corner points extracted from one scan:
the scan is downsampled onto a coarse grid, ordered by bearing, segmented
into polylines by recursive max-deviation splitting, and the segment
junctions become keypoints. The landmark is matched by its signature, the
sorted multiset of pairwise keypoint distances, which is invariant to
rotating or translating the sensor, so a kidnapped robot can still
recognize a stored scene with an unknown heading.

Each stored local view cell is anchored to the pose cell that was dominant
when it was registered. When a landmark is detected again, the cell
activates and injects activity at its anchor, seeding a relocalization
hypothesis that must still out-compete the rest of the belief.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MapParseError
from .geometry import CellIndex
from .observation import LidarScan
from .pose_cells import PoseCellNetwork

MAX_KEYPOINTS = 16
LV_DECAY = 0.5  # per-iteration activity decay applied by the localizer
CORNER_SCALE = 0.35      # meters of chain context when measuring a junction
MIN_CORNER_ANGLE = 0.7   # radians; shallower junctions merge back


def preprocess_scan(scan: LidarScan, cell_size: float) -> np.ndarray:
    """Down-sample a scan to deduplicated sensor-frame points.

    Beams at max range are dropped, endpoints snap to a cell_size grid, and
    the result is sorted by (x, y) so the output order is canonical.
    Returns an (n, 2) array, possibly empty.
    """
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    keep = scan.ranges < scan.max_range
    r = scan.ranges[keep]
    b = scan.bearings[keep]
    if r.size == 0:
        return np.empty((0, 2))
    qx = np.round(r * np.cos(b) / cell_size).astype(np.int64)
    qy = np.round(r * np.sin(b) / cell_size).astype(np.int64)
    snapped = np.unique(np.stack([qx, qy], axis=1), axis=0)  # sorts (x, y)
    return snapped.astype(np.float64) * cell_size


@dataclass(frozen=True)
class Landmark:
    """Corner-point constellation with its rotation-invariant signature."""

    keypoints: np.ndarray = field(repr=False)
    signature: np.ndarray = field(repr=False)

    @classmethod
    def from_keypoints(cls, keypoints: np.ndarray) -> "Landmark":
        kp = np.asarray(keypoints, dtype=np.float64)
        if kp.ndim != 2 or kp.shape[1] != 2 or len(kp) < 2:
            raise ValueError("landmark needs at least two 2D keypoints")
        if len(kp) > MAX_KEYPOINTS:
            raise ValueError(f"landmark exceeds {MAX_KEYPOINTS} keypoints")
        diffs = kp[:, None, :] - kp[None, :, :]
        dists = np.hypot(diffs[..., 0], diffs[..., 1])
        iu = np.triu_indices(len(kp), k=1)
        return cls(kp, np.sort(dists[iu]))

    @property
    def n_keypoints(self) -> int:
        return len(self.keypoints)


def _point_segment_deviations(points, i0, i1):
    """Perpendicular distance of interior points to the chord (i0, i1)."""
    a = points[i0]
    b = points[i1]
    chord = b - a
    norm = math.hypot(chord[0], chord[1])
    rel = points[i0 + 1:i1] - a
    if norm == 0.0:
        return np.hypot(rel[:, 0], rel[:, 1])
    return np.abs(rel[:, 0] * chord[1] - rel[:, 1] * chord[0]) / norm


def _smooth_chain(pts):
    """3-point moving average; suppresses single-point rasterization jags
    without rounding away real corners at the measurement scale."""
    if len(pts) < 3:
        return pts
    sm = pts.copy()
    sm[1:-1] = (pts[:-2] + pts[1:-1] + pts[2:]) / 3.0
    return sm


def _local_turn(pts, m, scale):
    """Direction change at chain position m, measured between the average
    incoming and outgoing directions over roughly ``scale`` meters of chain
    on each side (averaging suppresses the downsampling grid noise)."""
    target = pts[m]

    def window(step):
        out, idx = [], m
        while 0 <= idx + step <= len(pts) - 1:
            idx += step
            out.append(pts[idx])
            if math.hypot(pts[idx][0] - target[0],
                          pts[idx][1] - target[1]) >= scale:
                break
        return out

    before, after = window(-1), window(+1)
    if not before or not after:
        return 0.0
    pa = np.mean(before, axis=0)
    pb = np.mean(after, axis=0)
    ca = math.atan2(target[1] - pa[1], target[0] - pa[0])
    cb = math.atan2(pb[1] - target[1], pb[0] - target[0])
    return abs(math.remainder(cb - ca, 2.0 * math.pi))


def extract_landmark(points: np.ndarray, tolerance: float,
                     max_keypoints: int = MAX_KEYPOINTS):
    """Split-and-merge corner extraction over bearing-ordered points.

    The split stage recursively breaks the chain at the point of maximum
    chord deviation; the merge stage discards junctions whose local turn is
    shallow, so smooth curves (which splitting approximates with many
    near-collinear chords) contribute no keypoints. Returns a Landmark, or
    None when fewer than two corners survive. When more corners than
    max_keypoints remain, the largest-deviation ones win.
    """
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 3:
        return None
    order = np.argsort(np.arctan2(points[:, 1], points[:, 0]), kind="stable")
    pts = points[order]
    junctions = []  # (deviation, chain position)

    def split(i0, i1):
        if i1 - i0 < 2:
            return
        dev = _point_segment_deviations(pts, i0, i1)
        j = int(np.argmax(dev))
        if dev[j] > tolerance:
            mid = i0 + 1 + j
            split(i0, mid)
            junctions.append((float(dev[j]), mid))
            split(mid, i1)

    split(0, len(pts) - 1)
    smooth = _smooth_chain(pts)
    corners = [(dev, pos) for dev, pos in junctions
               if _local_turn(smooth, pos, CORNER_SCALE) >= MIN_CORNER_ANGLE]
    if len(corners) < 2:
        return None
    corners.sort(key=lambda d: (-d[0], d[1]))
    chosen = sorted(pos for _, pos in corners[:max_keypoints])
    return Landmark.from_keypoints(pts[chosen])


@dataclass
class LocalViewCell:
    id: int
    landmark: Landmark
    activity: float = 0.0


class LocalViewStore:
    """Registered local view cells with their activity levels."""

    def __init__(self):
        self.cells: list[LocalViewCell] = []

    def __len__(self):
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)

    def get(self, lv_id: int) -> LocalViewCell:
        if not 0 <= lv_id < len(self.cells):
            raise KeyError(f"unknown local view cell id {lv_id}")
        return self.cells[lv_id]

    def append(self, landmark: Landmark) -> int:
        lv_id = len(self.cells)
        self.cells.append(LocalViewCell(lv_id, landmark))
        return lv_id

    def set_activation(self, lv_id: int, level: float) -> None:
        if not 0.0 <= level <= 1.0:
            raise ValueError("activation level must lie in [0, 1]")
        self.get(lv_id).activity = level

    def decay_activities(self, factor: float = LV_DECAY, skip=()) -> None:
        """Geometric decay applied once per localization iteration; cells
        activated during the current iteration are exempt."""
        for cell in self.cells:
            if cell.id not in skip:
                cell.activity *= factor


class Adjacency:
    """Sparse weights linking local view cells to pose cells."""

    def __init__(self):
        self._links: dict[tuple[int, tuple[int, int, int]], float] = {}

    def __len__(self):
        return len(self._links)

    def add(self, lv_id: int, cell: CellIndex, weight: float) -> None:
        if weight < 0:
            raise ValueError("adjacency weight must be non-negative")
        key = (lv_id, cell.as_tuple())
        self._links[key] = self._links.get(key, 0.0) + weight

    def weight(self, lv_id: int, cell: CellIndex) -> float:
        return self._links.get((lv_id, cell.as_tuple()), 0.0)

    def links(self, lv_id: int):
        """(CellIndex, weight) pairs for one local view cell."""
        return [(CellIndex(*cell), w) for (i, cell), w in self._links.items()
                if i == lv_id]

    def items(self):
        return self._links.items()


def match_landmark(store: LocalViewStore, probe: Landmark,
                   threshold: float = 0.9):
    """Best stored landmark for a probe, or None below the threshold.

    Signatures are compared over their shared prefix; candidates whose
    keypoint counts differ from the probe by more than one are skipped.
    Score is 1 / (1 + mean absolute signature difference in meters), so an
    exact copy scores 1.0. Ties break toward the lowest id.
    """
    best = None
    for cell in store:
        if abs(cell.landmark.n_keypoints - probe.n_keypoints) > 1:
            continue
        n = min(len(cell.landmark.signature), len(probe.signature))
        diff = float(np.mean(np.abs(cell.landmark.signature[:n]
                                    - probe.signature[:n])))
        score = 1.0 / (1.0 + diff)
        if best is None or score > best[1]:
            best = (cell.id, score)
    if best is not None and best[1] >= threshold:
        return best
    return None


def register_landmark(store: LocalViewStore, adjacency: Adjacency,
                      landmark: Landmark, anchor: CellIndex) -> int:
    """Add a landmark anchored at a pose cell; an exact duplicate
    (match score 1.0) returns the existing id without a new cell."""
    existing = match_landmark(store, landmark, threshold=1.0)
    if existing is not None:
        return existing[0]
    lv_id = store.append(landmark)
    adjacency.add(lv_id, anchor, 1.0)
    return lv_id


def inject(net: PoseCellNetwork, store: LocalViewStore, adjacency: Adjacency,
           s_v: float) -> float:
    """Add s_v * weight * activity to every pose cell linked from an active
    local view cell; returns the total mass injected. Normalization is left
    to the iteration's normalize step."""
    if s_v < 0:
        raise ValueError("s_v must be non-negative")
    additions: dict[tuple[int, int, int], float] = {}
    for cell in store:
        if cell.activity <= 0.0:
            continue
        for target, weight in adjacency.links(cell.id):
            gain = s_v * weight * cell.activity
            key = target.as_tuple()
            additions[key] = additions.get(key, 0.0) + gain
    if not additions:
        return 0.0
    merged = net.as_dict()
    for key, gain in additions.items():
        merged[key] = merged.get(key, 0.0) + gain
    net.seed_cells(merged)
    return float(math.fsum(additions.values()))


# -- store file format --------------------------------------------------------

def save_store(store: LocalViewStore, adjacency: Adjacency, path) -> None:
    """One record per line:
    ``id; kp_count; x0 y0 ...; anchor_xp anchor_yp anchor_tp; weight``."""
    lines = []
    for cell in store:
        links = adjacency.links(cell.id)
        if len(links) != 1:
            raise ValueError(f"cell {cell.id} must have exactly one anchor link")
        anchor, weight = links[0]
        kps = " ".join(f"{float(x)!r} {float(y)!r}"
                       for x, y in cell.landmark.keypoints)
        lines.append(f"{cell.id}; {cell.landmark.n_keypoints}; {kps}; "
                     f"{anchor.xp} {anchor.yp} {anchor.tp}; {float(weight)!r}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                          encoding="ascii")


def load_store(path) -> tuple[LocalViewStore, Adjacency]:
    store = LocalViewStore()
    adjacency = Adjacency()
    path = Path(path)
    if not path.exists():
        raise MapParseError(path, 0, "landmark store file not found")
    for ln, line in enumerate(path.read_text(encoding="ascii").splitlines(), 1):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(";")]
        if len(parts) != 5:
            raise MapParseError(path, ln, "expected 5 ';'-separated fields")
        try:
            lv_id = int(parts[0])
            count = int(parts[1])
            flat = [float(v) for v in parts[2].split()]
            anchor = CellIndex(*(int(v) for v in parts[3].split()))
            weight = float(parts[4])
        except (ValueError, TypeError) as exc:
            raise MapParseError(path, ln, f"bad field: {exc}") from exc
        if len(flat) != 2 * count:
            raise MapParseError(path, ln, f"expected {2 * count} coordinates, "
                                          f"got {len(flat)}")
        if lv_id != len(store):
            raise MapParseError(path, ln, f"ids must be sequential, got {lv_id}")
        landmark = Landmark.from_keypoints(np.array(flat).reshape(count, 2))
        store.append(landmark)
        adjacency.add(lv_id, anchor, weight)
    return store, adjacency
