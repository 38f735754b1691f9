"""Sparse 3D continuous attractor network over pose cells.

The belief over (x, y, theta) lives in a sparse map from cell index to a
non-negative activity level. One localization iteration shifts the activity
by odometry (path integration), multiplies it by the scan likelihood,
spreads it with local excitation, sharpens it with local and global
inhibition, and renormalizes. The centroid of the dominant activity packet
is the pose estimate.

Design notes
------------
* Storage is a dict keyed by the linearized cell index; all heavy updates
  run vectorized over (key, value) arrays and accumulate scattered
  contributions with ``np.bincount`` into a dense scratch vector, which is
  both fast and deterministic.
* The theta axis always wraps. Planar axes wrap or clamp according to
  ``boundary_mode``; in clamp mode, mass shifted or excited past the edge
  is dropped.
* Kernels are separable Gaussians truncated at 3 sigma (hard-capped by
  ``truncation_radius``) and scaled so their total weight equals the
  configured coefficient, which makes the excitation mass law exact:
  in wrap mode one excitation pass multiplies the total by 1 + coeff_exc.
* Excitation and path integration do not prune (they must conserve mass to
  numerical precision); observation, local inhibition, and global
  inhibition prune cells at or below ``prune_epsilon``. Scattered
  contributions smaller than 1e-12 are never stored at all, which bounds
  the active set without measurably breaking the mass laws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBeliefError
from .geometry import (CellIndex, NetworkGeometry, Pose, PoseDelta,
                       normalize_angle, normalize_angles)

# scatter results below this are dropped instead of stored
_CREATION_FLOOR = 1e-12

PACKET_RADIUS_XY = 4
PACKET_RADIUS_THETA = 2


@dataclass(frozen=True)
class KernelConfig:
    """Excitation/inhibition kernel shapes and the global decay rate.

    Excitation must dominate inhibition slightly (coeff_exc > coeff_inh) so
    activity can still spread when the average confidence is low instead of
    locking into a local optimum.
    """

    sigma_exc_xy: float = 1.0
    sigma_exc_theta: float = 1.0
    coeff_exc: float = 0.10
    sigma_inh_xy: float = 2.0
    sigma_inh_theta: float = 2.0
    coeff_inh: float = 0.08
    truncation_radius: int = 6
    s_g: float = 1e-4

    def __post_init__(self):
        if min(self.sigma_exc_xy, self.sigma_exc_theta,
               self.sigma_inh_xy, self.sigma_inh_theta) <= 0:
            raise ValueError("kernel sigmas must be positive")
        if not self.coeff_exc > self.coeff_inh > 0:
            raise ValueError("need coeff_exc > coeff_inh > 0")
        if self.truncation_radius < 1:
            raise ValueError("truncation_radius must be at least 1 cell")
        if self.s_g < 0:
            raise ValueError("s_g must be non-negative")


def _axis_taps(sigma: float, radius: int, n: int, wrap: bool):
    """Offsets and normalized (sum=1) Gaussian weights for one axis.

    Truncates at ceil(3*sigma) capped by ``radius``; on wrapping axes the
    support is further capped so no two taps alias to the same cell.
    """
    r = min(radius, math.ceil(3.0 * sigma))
    if wrap:
        r = min(r, (n - 1) // 2)
    offs = np.arange(-r, r + 1)
    w = np.exp(-(offs.astype(np.float64) ** 2) / (2.0 * sigma * sigma))
    return offs, w / w.sum()


class PoseCellNetwork:
    """Sparse activity map over a :class:`NetworkGeometry`."""

    def __init__(self, geometry: NetworkGeometry, prune_epsilon: float = 1e-6,
                 boundary_mode: str = "wrap"):
        if prune_epsilon < 0:
            raise ValueError("prune_epsilon must be non-negative")
        if boundary_mode not in ("wrap", "clamp"):
            raise ValueError(f"unknown boundary_mode {boundary_mode!r}")
        self.geometry = geometry
        self.prune_epsilon = prune_epsilon
        self.boundary_mode = boundary_mode
        self._act: dict[int, float] = {}
        self._size = geometry.n_xy * geometry.n_xy * geometry.n_theta

    # -- indexing ----------------------------------------------------------

    def _encode(self, xp, yp, tp):
        return (xp * self.geometry.n_xy + yp) * self.geometry.n_theta + tp

    def _decode(self, keys: np.ndarray):
        plane, tp = np.divmod(keys, self.geometry.n_theta)
        xp, yp = np.divmod(plane, self.geometry.n_xy)
        return xp, yp, tp

    def _decode_one(self, key: int) -> CellIndex:
        plane, tp = divmod(key, self.geometry.n_theta)
        xp, yp = divmod(plane, self.geometry.n_xy)
        return CellIndex(xp, yp, tp)

    def _arrays(self):
        keys = np.fromiter(self._act.keys(), dtype=np.int64, count=len(self._act))
        vals = np.fromiter(self._act.values(), dtype=np.float64, count=len(self._act))
        return keys, vals

    def _store(self, keys: np.ndarray, vals: np.ndarray):
        self._act = dict(zip(keys.tolist(), vals.tolist()))

    def _merge(self, keys: np.ndarray, vals: np.ndarray):
        """Sum values of duplicate keys. Sort-based for sparse batches,
        dense bincount when the batch rivals the full network size."""
        if keys.size == 0:
            return keys, vals
        if keys.size * 8 > self._size:
            acc = np.bincount(keys, weights=vals, minlength=self._size)
            nz = np.nonzero(acc)[0]
            return nz, acc[nz]
        order = np.argsort(keys, kind="stable")
        k = keys[order]
        v = vals[order]
        starts = np.empty(k.size, dtype=bool)
        starts[0] = True
        np.not_equal(k[1:], k[:-1], out=starts[1:])
        idx = np.nonzero(starts)[0]
        return k[idx], np.add.reduceat(v, idx)

    def _accumulate(self, keys: np.ndarray, vals: np.ndarray):
        """Merge duplicate keys and drop entries below the creation floor."""
        k, v = self._merge(keys, vals)
        keep = v >= _CREATION_FLOOR
        return k[keep], v[keep]

    # -- inspection ---------------------------------------------------------

    def __len__(self) -> int:
        return len(self._act)

    def activity(self, c: CellIndex) -> float:
        return self._act.get(self._encode(c.xp, c.yp, c.tp), 0.0)

    def active_cells(self):
        """Iterate (CellIndex, activity) in canonical (xp, yp, tp) order."""
        for key in sorted(self._act):
            yield self._decode_one(key), self._act[key]

    def total_activity(self) -> float:
        return float(math.fsum(self._act.values()))

    def as_dict(self) -> dict[tuple[int, int, int], float]:
        keys, vals = self._arrays()
        xp, yp, tp = self._decode(keys)
        return {(int(a), int(b), int(c)): float(v)
                for a, b, c, v in zip(xp, yp, tp, vals)}

    def seed_cells(self, activities: dict) -> None:
        """Replace the state with an explicit {CellIndex|tuple: activity} map."""
        self._act = {}
        for c, v in activities.items():
            if isinstance(c, CellIndex):
                c = c.as_tuple()
            if v < 0:
                raise ValueError("activity must be non-negative")
            if v > 0:
                self._act[self._encode(*c)] = float(v)

    def dump_csv(self, fh) -> None:
        """Debug dump, one ``xp,yp,tp,activity`` line per active cell."""
        close = False
        if isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__"):
            fh = open(fh, "w", encoding="ascii")
            close = True
        try:
            fh.write("xp,yp,tp,activity\n")
            for c, v in self.active_cells():
                fh.write(f"{c.xp},{c.yp},{c.tp},{v!r}\n")
        finally:
            if close:
                fh.close()

    # -- initialization ------------------------------------------------------

    def initialize_gaussian(self, p0: Pose, sigma_xy: float, sigma_theta: float,
                            n: int, rng_seed=None) -> None:
        """Seed the belief with n Gaussian pose samples of 1/n activity each.

        Samples whose planar coordinates fall outside the network extent are
        redrawn, up to 100*n attempts in total.
        """
        if n < 1:
            raise ValueError("sample count must be at least 1")
        g = self.geometry
        g.pose_to_cell(p0)  # p0 itself must be inside the extent
        rng = np.random.default_rng(rng_seed)
        xs = np.empty(n)
        ys = np.empty(n)
        ts = np.empty(n)
        got, attempts = 0, 0
        while got < n:
            want = n - got
            if attempts + want > 100 * n:
                raise ValueError("too many initialization samples fell outside "
                                 "the network extent")
            attempts += want
            x = p0.x + rng.normal(0.0, sigma_xy, want) if sigma_xy > 0 else np.full(want, p0.x)
            y = p0.y + rng.normal(0.0, sigma_xy, want) if sigma_xy > 0 else np.full(want, p0.y)
            t = p0.theta + rng.normal(0.0, sigma_theta, want) if sigma_theta > 0 \
                else np.full(want, p0.theta)
            half = g.half_extent
            ok = (np.abs(x) < half) & (np.abs(y) < half)
            k = int(ok.sum())
            xs[got:got + k] = x[ok]
            ys[got:got + k] = y[ok]
            ts[got:got + k] = t[ok]
            got += k
        xp, yp, tp, _ = g.quantize_arrays(xs, ys, normalize_angles(ts))
        keys, vals = self._accumulate(self._encode(xp, yp, tp), np.full(n, 1.0 / n))
        self._store(keys, vals)

    def initialize_uniform(self, free_cells) -> None:
        """Spread activity evenly over an explicit list of cells."""
        cells = list(free_cells)
        if not cells:
            raise ValueError("free cell list is empty")
        share = 1.0 / len(cells)
        keys = np.array([self._encode(*(c.as_tuple() if isinstance(c, CellIndex) else tuple(c)))
                         for c in cells], dtype=np.int64)
        keys, vals = self._accumulate(keys, np.full(len(cells), share))
        self._store(keys, vals)

    # -- dynamics ------------------------------------------------------------

    def path_integrate(self, delta: PoseDelta, mode: str = "per_heading") -> None:
        """Shift the whole activity field by one odometry delta.

        ``literal`` applies the same world-frame (dx, dy, dtheta) to every
        cell. ``per_heading`` (default) rotates the robot-frame
        (forward, lateral) motion by each theta layer's center heading
        before shifting that layer, so heading hypotheses move along their
        own directions. The non-integer part of the scaled shift spreads
        each cell's activity over the 2x2x2 block of adjacent cells with
        trilinear residual weights, which conserves mass in wrap mode.
        """
        if mode not in ("literal", "per_heading"):
            raise ValueError(f"unknown path integration mode {mode!r}")
        g = self.geometry
        bound = g.n_xy * g.k_xy / 4.0
        if max(abs(delta.dx), abs(delta.dy), delta.translation) >= bound:
            raise ValueError("odometry delta exceeds the safe shift bound")
        if not self._act:
            return
        keys, vals = self._arrays()
        xp, yp, tp = self._decode(keys)
        ft = delta.dtheta / g.k_theta
        out_keys, out_vals = [], []
        if mode == "literal":
            fx = delta.dx / g.k_xy
            fy = delta.dy / g.k_xy
            ok, ov = self._trilinear_shift(xp, yp, tp, vals, fx, fy, ft)
            out_keys.append(ok)
            out_vals.append(ov)
        else:
            for layer in np.unique(tp):
                sel = tp == layer
                h = g.layer_heading(int(layer))
                c, s = math.cos(h), math.sin(h)
                fx = (delta.forward * c - delta.lateral * s) / g.k_xy
                fy = (delta.forward * s + delta.lateral * c) / g.k_xy
                ok, ov = self._trilinear_shift(xp[sel], yp[sel], tp[sel],
                                               vals[sel], fx, fy, ft)
                out_keys.append(ok)
                out_vals.append(ov)
        keys, vals = self._accumulate(np.concatenate(out_keys),
                                      np.concatenate(out_vals))
        self._store(keys, vals)

    def _trilinear_shift(self, xp, yp, tp, vals, fx, fy, ft):
        g = self.geometry
        dx0, dy0, dt0 = math.floor(fx), math.floor(fy), math.floor(ft)
        wx = (1.0 - (fx - dx0), fx - dx0)
        wy = (1.0 - (fy - dy0), fy - dy0)
        wt = (1.0 - (ft - dt0), ft - dt0)
        keys_out, vals_out = [], []
        wrap = self.boundary_mode == "wrap"
        for i in (0, 1):
            if wx[i] == 0.0:
                continue
            nx = xp + (dx0 + i)
            for j in (0, 1):
                if wy[j] == 0.0:
                    continue
                ny = yp + (dy0 + j)
                for k in (0, 1):
                    w = wx[i] * wy[j] * wt[k]
                    if w == 0.0:
                        continue
                    nt = (tp + (dt0 + k)) % g.n_theta
                    if wrap:
                        keys_out.append(self._encode(nx % g.n_xy, ny % g.n_xy, nt))
                        vals_out.append(vals * w)
                    else:
                        keep = (nx >= 0) & (nx < g.n_xy) & (ny >= 0) & (ny < g.n_xy)
                        keys_out.append(self._encode(nx[keep], ny[keep], nt[keep]))
                        vals_out.append(vals[keep] * w)
        if not keys_out:
            return np.empty(0, dtype=np.int64), np.empty(0)
        return np.concatenate(keys_out), np.concatenate(vals_out)

    def _convolved(self, sigma_xy: float, sigma_theta: float, coeff: float,
                   radius: int):
        """Gaussian-weighted neighborhood sums with total kernel weight
        ``coeff``, as (keys, values) arrays."""
        g = self.geometry
        keys, vals = self._arrays()
        xp, yp, tp = self._decode(keys)
        wrap = self.boundary_mode == "wrap"
        for axis in ("x", "y", "t"):
            if axis == "t":
                offs, w = _axis_taps(sigma_theta, radius, g.n_theta, True)
                w = w * coeff  # fold the coefficient into the last pass
            else:
                offs, w = _axis_taps(sigma_xy, radius, g.n_xy, wrap)
            parts_k, parts_v = [], []
            for off, weight in zip(offs, w):
                if axis == "x":
                    nx = xp + off
                    if wrap:
                        parts_k.append(self._encode(nx % g.n_xy, yp, tp))
                        parts_v.append(vals * weight)
                    else:
                        keep = (nx >= 0) & (nx < g.n_xy)
                        parts_k.append(self._encode(nx[keep], yp[keep], tp[keep]))
                        parts_v.append(vals[keep] * weight)
                elif axis == "y":
                    ny = yp + off
                    if wrap:
                        parts_k.append(self._encode(xp, ny % g.n_xy, tp))
                        parts_v.append(vals * weight)
                    else:
                        keep = (ny >= 0) & (ny < g.n_xy)
                        parts_k.append(self._encode(xp[keep], ny[keep], tp[keep]))
                        parts_v.append(vals[keep] * weight)
                else:
                    nt = (tp + off) % g.n_theta
                    parts_k.append(self._encode(xp, yp, nt))
                    parts_v.append(vals * weight)
            keys, vals = self._accumulate(np.concatenate(parts_k),
                                          np.concatenate(parts_v))
            xp, yp, tp = self._decode(keys)
        return keys, vals

    def excite(self, k: KernelConfig) -> None:
        """Add the excitation-kernel-weighted neighborhood sum to each cell
        (the original activity is retained)."""
        if not self._act:
            return
        ck, cv = self._convolved(k.sigma_exc_xy, k.sigma_exc_theta, k.coeff_exc,
                                 k.truncation_radius)
        keys, vals = self._arrays()
        keys, vals = self._accumulate(np.concatenate([keys, ck]),
                                      np.concatenate([vals, cv]))
        self._store(keys, vals)

    def inhibit(self, k: KernelConfig) -> None:
        """Subtract the inhibition-kernel-weighted neighborhood sum, clamp
        at zero, and prune."""
        if not self._act:
            return
        ck, cv = self._convolved(k.sigma_inh_xy, k.sigma_inh_theta, k.coeff_inh,
                                 k.truncation_radius)
        keys, vals = self._arrays()
        mk, mv = self._merge(np.concatenate([keys, ck]),
                             np.concatenate([vals, -cv]))
        keep = mv > self.prune_epsilon  # clamp at zero and prune in one pass
        self._store(mk[keep], mv[keep])

    def global_inhibit(self, s_g: float) -> None:
        """Fixed-rate decay: every active cell loses min(activity, s_g)."""
        if s_g < 0:
            raise ValueError("s_g must be non-negative")
        if s_g == 0.0 or not self._act:
            return
        keys, vals = self._arrays()
        vals = vals - np.minimum(vals, s_g)
        keep = vals > self.prune_epsilon
        self._store(keys[keep], vals[keep])

    def apply_observation(self, likelihood) -> None:
        """Multiply each active cell by ``likelihood(CellIndex) in [0, 1]``
        and prune the cells that fall to or below prune_epsilon."""
        updated = {}
        for key, val in self._act.items():
            lk = float(likelihood(self._decode_one(key)))
            if not 0.0 <= lk <= 1.0:
                raise ValueError(f"likelihood {lk!r} outside [0, 1]")
            v = val * lk
            if v > self.prune_epsilon:
                updated[key] = v
        self._act = updated

    def apply_observation_values(self, batch_likelihood) -> None:
        """Vectorized observation update: ``batch_likelihood(xp, yp, tp)``
        receives index arrays and returns one likelihood per active cell."""
        if not self._act:
            return
        keys, vals = self._arrays()
        xp, yp, tp = self._decode(keys)
        lk = np.asarray(batch_likelihood(xp, yp, tp), dtype=np.float64)
        if lk.shape != vals.shape:
            raise ValueError("likelihood batch has the wrong length")
        if np.any(~np.isfinite(lk)) or lk.min() < 0.0 or lk.max() > 1.0:
            raise ValueError("likelihood outside [0, 1]")
        vals = vals * lk
        keep = vals > self.prune_epsilon
        self._store(keys[keep], vals[keep])

    def normalize(self) -> None:
        """Rescale so the total activity is exactly one. Cells at or below
        prune_epsilon are dropped before rescaling, so the post-total is
        not disturbed by pruning."""
        if not self._act:
            raise DegenerateBeliefError("no active pose cells to normalize")
        keys, vals = self._arrays()
        keep = vals > self.prune_epsilon
        keys, vals = keys[keep], vals[keep]
        total = vals.sum()
        if total <= 0.0:
            raise DegenerateBeliefError("total pose cell activity is zero")
        self._store(keys, vals / total)

    # -- readout --------------------------------------------------------------

    def estimate(self, packet_radius_xy: int = PACKET_RADIUS_XY,
                 packet_radius_theta: int = PACKET_RADIUS_THETA) -> tuple[Pose, float]:
        """Centroid of the dominant activity packet and its share of mass.

        The packet is every active cell within the given per-axis radii of
        the global argmax cell (circular distance on theta, and on the
        planar axes too in wrap mode). The centroid averages cell-center
        poses weighted by activity; the heading uses the circular mean.
        """
        if not self._act:
            raise DegenerateBeliefError("cannot estimate from an empty network")
        g = self.geometry
        keys, vals = self._arrays()
        xp, yp, tp = self._decode(keys)
        best = int(np.argmax(vals))
        ax, ay, at = int(xp[best]), int(yp[best]), int(tp[best])
        dx = xp - ax
        dy = yp - ay
        if self.boundary_mode == "wrap":
            dx = (dx + g.n_xy // 2) % g.n_xy - g.n_xy // 2
            dy = (dy + g.n_xy // 2) % g.n_xy - g.n_xy // 2
        dt = (tp - at + g.n_theta // 2) % g.n_theta - g.n_theta // 2
        packet = (np.abs(dx) <= packet_radius_xy) & (np.abs(dy) <= packet_radius_xy) \
            & (np.abs(dt) <= packet_radius_theta)
        w = vals[packet]
        mass = w.sum()
        cx = float(np.dot(w, (xp[packet] + 0.5 - g.n_xy / 2) * g.k_xy) / mass)
        cy = float(np.dot(w, (yp[packet] + 0.5 - g.n_xy / 2) * g.k_xy) / mass)
        ang = (tp[packet] + 0.5 - g.n_theta / 2) * g.k_theta
        ct = math.atan2(float(np.dot(w, np.sin(ang))), float(np.dot(w, np.cos(ang))))
        confidence = float(mass / vals.sum())
        return Pose(cx, cy, normalize_angle(ct)), confidence

    def is_converged(self, threshold: float = 0.8) -> bool:
        """True when the dominant packet holds at least ``threshold`` of the
        total activity. False for an empty network."""
        if not 0.0 < threshold <= 1.0:
            raise ValueError("threshold must lie in (0, 1]")
        if not self._act:
            return False
        return self.estimate()[1] >= threshold
