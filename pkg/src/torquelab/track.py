"""Track geometry: arc-length parameterized centerline with per-point half-width.

The track is a piecewise-linear centerline densified to short segments
(<= 0.5 m) at construction. All downstream geometry (progress, lateral
position, lidar) is exact polyline math on that representation:

- ``project``    nearest-point projection onto the centerline -> (s, offset)
- ``frame``      projection plus heading error relative to the local tangent
- ``raycast``    first intersection of body-frame rays with the edge polylines

Sign conventions: lateral offset is measured in local half-widths and is
positive to the LEFT of the direction of travel (+1 = left edge, -1 = right
edge); heading error is car heading minus centerline tangent, wrapped to
(-pi, pi].

Tracks are immutable after construction and safe to query concurrently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

MAX_SEGMENT_LENGTH = 0.5  # m, centerline densification target
_GRID_CELL = 4.0          # m, raycast acceleration grid cell size


class TrackError(ValueError):
    """Base class for track construction problems."""


class TrackSchemaError(TrackError):
    """Track file does not match the documented JSON schema."""


class TrackValidationError(TrackError):
    """Track geometry violates an invariant (width, intersection, ...)."""


@dataclass(frozen=True)
class TrackFrame:
    """Car pose expressed in track coordinates.

    Attributes
    ----------
    s : float
        Arc length of the nearest centerline point, in [0, L) for closed
        tracks.
    lateral_offset : float
        Signed perpendicular distance in local half-widths; +1 on the left
        edge, -1 on the right edge, unbounded off-track.
    heading_error : float
        Car heading minus centerline tangent, wrapped to (-pi, pi].
    """

    s: float
    lateral_offset: float
    heading_error: float


# ---------------------------------------------------------------------------
# njit kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _project_kernel(px, py, sx, sy, sdx, sdy, slen, cum_s):
    """Nearest point on the centerline polyline.

    Ties in distance are broken toward the smaller arc length. Returns
    (segment index, segment parameter t, arc length s, squared distance).
    """
    best_d2 = np.inf
    best_i = 0
    best_t = 0.0
    best_s = 0.0
    for i in range(sx.shape[0]):
        rx = px - sx[i]
        ry = py - sy[i]
        t = (rx * sdx[i] + ry * sdy[i]) / (slen[i] * slen[i])
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        qx = rx - t * sdx[i]
        qy = ry - t * sdy[i]
        d2 = qx * qx + qy * qy
        s = cum_s[i] + t * slen[i]
        if d2 < best_d2 or (d2 == best_d2 and s < best_s):
            best_d2 = d2
            best_i = i
            best_t = t
            best_s = s
    return best_i, best_t, best_s, best_d2


@njit(cache=True)
def _ray_segment_t(px, py, dx, dy, ax, ay, bx, by, best):
    """Ray/segment intersection parameter, or `best` if none closer."""
    ex = bx - ax
    ey = by - ay
    den = dx * ey - dy * ex
    if abs(den) < 1e-15:
        return best
    wx = ax - px
    wy = ay - py
    t = (wx * ey - wy * ex) / den
    if t < 0.0 or t >= best:
        return best
    u = (wx * dy - wy * dx) / den
    if u < 0.0 or u > 1.0:
        return best
    return t


@njit(cache=True)
def _raycast_brute(px, py, dirs_x, dirs_y, max_range, ax, ay, bx, by, out):
    for r in range(dirs_x.shape[0]):
        best = max_range
        for i in range(ax.shape[0]):
            best = _ray_segment_t(px, py, dirs_x[r], dirs_y[r],
                                  ax[i], ay[i], bx[i], by[i], best)
        out[r] = best


@njit(cache=True)
def _raycast_grid(px, py, dirs_x, dirs_y, max_range,
                  ax, ay, bx, by,
                  gox, goy, cell, ncx, ncy, cell_start, items, out):
    """Grid-accelerated raycast (DDA cell walk, identical hit rule to brute)."""
    for r in range(dirs_x.shape[0]):
        dx = dirs_x[r]
        dy = dirs_y[r]
        best = max_range

        # enter the grid bounding box (origins on-track are always inside)
        t0 = 0.0
        x = px
        y = py
        inside = (gox <= x < gox + ncx * cell) and (goy <= y < goy + ncy * cell)
        if not inside:
            t_lo = 0.0
            t_hi = max_range
            for axis in range(2):
                d = dx if axis == 0 else dy
                o = x if axis == 0 else y
                lo = gox if axis == 0 else goy
                hi = lo + (ncx if axis == 0 else ncy) * cell
                if abs(d) < 1e-15:
                    if o < lo or o > hi:
                        t_lo = max_range + 1.0
                else:
                    ta = (lo - o) / d
                    tb = (hi - o) / d
                    if ta > tb:
                        ta, tb = tb, ta
                    if ta > t_lo:
                        t_lo = ta
                    if tb < t_hi:
                        t_hi = tb
            if t_lo > t_hi or t_lo > max_range:
                out[r] = max_range
                continue
            t0 = t_lo + 1e-9
            x = px + t0 * dx
            y = py + t0 * dy

        cx = int(math.floor((x - gox) / cell))
        cy = int(math.floor((y - goy) / cell))
        if cx < 0:
            cx = 0
        if cx > ncx - 1:
            cx = ncx - 1
        if cy < 0:
            cy = 0
        if cy > ncy - 1:
            cy = ncy - 1

        if dx > 0.0:
            step_x = 1
            tmax_x = t0 + (gox + (cx + 1) * cell - x) / dx
            tdel_x = cell / dx
        elif dx < 0.0:
            step_x = -1
            tmax_x = t0 + (gox + cx * cell - x) / dx
            tdel_x = -cell / dx
        else:
            step_x = 0
            tmax_x = np.inf
            tdel_x = np.inf
        if dy > 0.0:
            step_y = 1
            tmax_y = t0 + (goy + (cy + 1) * cell - y) / dy
            tdel_y = cell / dy
        elif dy < 0.0:
            step_y = -1
            tmax_y = t0 + (goy + cy * cell - y) / dy
            tdel_y = -cell / dy
        else:
            step_y = 0
            tmax_y = np.inf
            tdel_y = np.inf

        while True:
            c = cy * ncx + cx
            for k in range(cell_start[c], cell_start[c + 1]):
                i = items[k]
                best = _ray_segment_t(px, py, dx, dy,
                                      ax[i], ay[i], bx[i], by[i], best)
            t_exit = tmax_x if tmax_x < tmax_y else tmax_y
            if best <= t_exit + 1e-9 or t_exit > max_range:
                break
            if tmax_x < tmax_y:
                cx += step_x
                tmax_x += tdel_x
                if cx < 0 or cx >= ncx:
                    break
            else:
                cy += step_y
                tmax_y += tdel_y
                if cy < 0 or cy >= ncy:
                    break
        out[r] = best


@njit(cache=True)
def _self_intersects(x, y):
    """Proper or touching intersection between non-adjacent closed-polyline
    segments. Points include the closing duplicate (x[-1] == x[0])."""
    n = x.shape[0] - 1  # number of segments
    for i in range(n):
        ax0, ay0 = x[i], y[i]
        ax1, ay1 = x[i + 1], y[i + 1]
        lo_x = min(ax0, ax1)
        hi_x = max(ax0, ax1)
        lo_y = min(ay0, ay1)
        hi_y = max(ay0, ay1)
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue  # closing segment is adjacent to the first
            bx0, by0 = x[j], y[j]
            bx1, by1 = x[j + 1], y[j + 1]
            if max(bx0, bx1) < lo_x or min(bx0, bx1) > hi_x:
                continue
            if max(by0, by1) < lo_y or min(by0, by1) > hi_y:
                continue
            d1 = (ax1 - ax0) * (by0 - ay0) - (ay1 - ay0) * (bx0 - ax0)
            d2 = (ax1 - ax0) * (by1 - ay0) - (ay1 - ay0) * (bx1 - ax0)
            d3 = (bx1 - bx0) * (ay0 - by0) - (by1 - by0) * (ax0 - bx0)
            d4 = (bx1 - bx0) * (ay1 - by0) - (by1 - by0) * (ax1 - bx0)
            if d1 * d2 <= 0.0 and d3 * d4 <= 0.0:
                return True
    return False


# ---------------------------------------------------------------------------
# Track
# ---------------------------------------------------------------------------

def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


class Track:
    """Immutable planar race track.

    Parameters
    ----------
    name : str
        Identifier, carried through save/load.
    closed : bool
        Lap circuit (the polyline is closed back to the first point).
    points : array-like, shape (N, 3)
        Ordered (x, y, half_width) rows in meters. For closed tracks the
        closing duplicate of the first point is appended automatically when
        missing. Segments longer than 0.5 m are densified in place.
    """

    def __init__(self, name: str, closed: bool, points):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise TrackSchemaError("points must have shape (N, 3): x, y, half_width")
        if not np.all(np.isfinite(pts)):
            raise TrackValidationError("points contain non-finite values")
        if pts.shape[0] < 2:
            raise TrackValidationError("track needs at least 2 points")
        if np.any(pts[:, 2] <= 0.0):
            i = int(np.argmin(pts[:, 2]))
            raise TrackValidationError(f"half_width must be > 0 (point {i})")

        if closed:
            gap = math.hypot(pts[-1, 0] - pts[0, 0], pts[-1, 1] - pts[0, 1])
            if gap < 1e-6:
                pts = pts.copy()
                pts[-1] = pts[0]  # snap near-closures exactly onto the start
            else:
                pts = np.vstack([pts, pts[0]])

        seg = np.diff(pts[:, :2], axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len < 1e-9):
            i = int(np.argmin(seg_len))
            raise TrackValidationError(f"consecutive points {i} and {i + 1} coincide")

        pts = _densify(pts, seg_len, MAX_SEGMENT_LENGTH)

        self.name = str(name)
        self.closed = bool(closed)
        self.points = pts
        self.points.setflags(write=False)

        d = np.diff(pts[:, :2], axis=0)
        self._seg_dx = np.ascontiguousarray(d[:, 0])
        self._seg_dy = np.ascontiguousarray(d[:, 1])
        self._seg_len = np.hypot(self._seg_dx, self._seg_dy)
        self._seg_x = np.ascontiguousarray(pts[:-1, 0])
        self._seg_y = np.ascontiguousarray(pts[:-1, 1])
        self.cumulative_s = np.concatenate([[0.0], np.cumsum(self._seg_len)])
        self.cumulative_s.setflags(write=False)
        self.total_length = float(self.cumulative_s[-1])

        if self.closed and _self_intersects(np.ascontiguousarray(pts[:, 0]),
                                            np.ascontiguousarray(pts[:, 1])):
            raise TrackValidationError("closed centerline is self-intersecting")

        self.left_boundary, self.right_boundary = self._edge_polylines()
        self._build_ray_segments()
        self._build_ray_grid()

    # -- construction helpers ------------------------------------------------

    def _edge_polylines(self):
        pts = self.points
        n = pts.shape[0]
        tang = np.zeros((n, 2))
        tang[:-1] = np.column_stack([self._seg_dx, self._seg_dy])
        tang[:-1] /= self._seg_len[:, None]
        if self.closed:
            tang[-1] = tang[0]
            # average adjacent segment tangents at interior joints
            prev = np.roll(tang[:-1], 1, axis=0)
            avg = tang[:-1] + prev
        else:
            tang[-1] = tang[-2]
            avg = tang.copy()[:-1]
            avg[1:] = tang[1:-1] + tang[:-2]
        norm = np.hypot(avg[:, 0], avg[:, 1])
        norm[norm < 1e-12] = 1.0
        avg /= norm[:, None]
        point_tang = np.vstack([avg, avg[0] if self.closed else tang[-1]])
        normals = np.column_stack([-point_tang[:, 1], point_tang[:, 0]])
        left = pts[:, :2] + normals * pts[:, 2:3]
        right = pts[:, :2] - normals * pts[:, 2:3]
        left.setflags(write=False)
        right.setflags(write=False)
        return left, right

    def _build_ray_segments(self):
        polys = [self.left_boundary, self.right_boundary]
        if not self.closed:
            # cap the corridor at both open ends so rays cannot escape
            caps = [np.vstack([self.left_boundary[0], self.right_boundary[0]]),
                    np.vstack([self.left_boundary[-1], self.right_boundary[-1]])]
            polys.extend(caps)
        a_list, b_list = [], []
        for p in polys:
            a_list.append(p[:-1])
            b_list.append(p[1:])
        a = np.vstack(a_list)
        b = np.vstack(b_list)
        self._ray_ax = np.ascontiguousarray(a[:, 0])
        self._ray_ay = np.ascontiguousarray(a[:, 1])
        self._ray_bx = np.ascontiguousarray(b[:, 0])
        self._ray_by = np.ascontiguousarray(b[:, 1])

    def _build_ray_grid(self):
        ax, ay, bx, by = self._ray_ax, self._ray_ay, self._ray_bx, self._ray_by
        lo_x = min(ax.min(), bx.min()) - 1.0
        lo_y = min(ay.min(), by.min()) - 1.0
        hi_x = max(ax.max(), bx.max()) + 1.0
        hi_y = max(ay.max(), by.max()) + 1.0
        cell = _GRID_CELL
        ncx = max(1, int(math.ceil((hi_x - lo_x) / cell)))
        ncy = max(1, int(math.ceil((hi_y - lo_y) / cell)))
        c0x = np.clip(np.floor((np.minimum(ax, bx) - lo_x) / cell).astype(np.int64), 0, ncx - 1)
        c1x = np.clip(np.floor((np.maximum(ax, bx) - lo_x) / cell).astype(np.int64), 0, ncx - 1)
        c0y = np.clip(np.floor((np.minimum(ay, by) - lo_y) / cell).astype(np.int64), 0, ncy - 1)
        c1y = np.clip(np.floor((np.maximum(ay, by) - lo_y) / cell).astype(np.int64), 0, ncy - 1)
        cells: list[list[int]] = [[] for _ in range(ncx * ncy)]
        for i in range(ax.shape[0]):
            for cy in range(c0y[i], c1y[i] + 1):
                base = cy * ncx
                for cx in range(c0x[i], c1x[i] + 1):
                    cells[base + cx].append(i)
        counts = np.array([len(c) for c in cells], dtype=np.int64)
        self._grid_start = np.concatenate([[0], np.cumsum(counts)])
        self._grid_items = np.array([i for c in cells for i in c], dtype=np.int64) \
            if counts.sum() else np.zeros(0, dtype=np.int64)
        self._grid_origin = (lo_x, lo_y)
        self._grid_cell = cell
        self._grid_ncx = ncx
        self._grid_ncy = ncy

    # -- queries ---------------------------------------------------------------

    @property
    def length(self) -> float:
        return self.total_length

    def project(self, position) -> tuple[float, float]:
        """Project a planar point onto the centerline.

        Returns
        -------
        (s, lateral_offset) : tuple of float
            Arc length of the nearest centerline point (in [0, L) for closed
            tracks) and the signed offset in local half-widths (left
            positive). Total over the whole plane; equidistant candidates
            resolve to the smallest s.
        """
        px, py = float(position[0]), float(position[1])
        i, t, s, _ = _project_kernel(px, py, self._seg_x, self._seg_y,
                                     self._seg_dx, self._seg_dy,
                                     self._seg_len, self.cumulative_s)
        qx = self._seg_x[i] + t * self._seg_dx[i]
        qy = self._seg_y[i] + t * self._seg_dy[i]
        tx = self._seg_dx[i] / self._seg_len[i]
        ty = self._seg_dy[i] / self._seg_len[i]
        signed = tx * (py - qy) - ty * (px - qx)
        hw = self.points[i, 2] + t * (self.points[i + 1, 2] - self.points[i, 2])
        if self.closed and s >= self.total_length:
            s -= self.total_length
        return s, signed / hw

    def frame(self, position, heading: float) -> TrackFrame:
        """Full track-frame pose: projection plus wrapped heading error."""
        px, py = float(position[0]), float(position[1])
        i, t, s, _ = _project_kernel(px, py, self._seg_x, self._seg_y,
                                     self._seg_dx, self._seg_dy,
                                     self._seg_len, self.cumulative_s)
        qx = self._seg_x[i] + t * self._seg_dx[i]
        qy = self._seg_y[i] + t * self._seg_dy[i]
        tx = self._seg_dx[i] / self._seg_len[i]
        ty = self._seg_dy[i] / self._seg_len[i]
        signed = tx * (py - qy) - ty * (px - qx)
        hw = self.points[i, 2] + t * (self.points[i + 1, 2] - self.points[i, 2])
        if self.closed and s >= self.total_length:
            s -= self.total_length
        err = wrap_angle(heading - math.atan2(ty, tx))
        return TrackFrame(s, signed / hw, err)

    def _segment_at(self, s: float) -> tuple[int, float]:
        if self.closed:
            s = s % self.total_length
        s = min(max(s, 0.0), self.total_length)
        i = int(np.searchsorted(self.cumulative_s, s, side="right")) - 1
        i = min(max(i, 0), self._seg_len.shape[0] - 1)
        return i, (s - self.cumulative_s[i]) / self._seg_len[i]

    def point_at(self, s: float) -> np.ndarray:
        """Centerline point at arc length s (wrapped on closed tracks)."""
        i, t = self._segment_at(s)
        return np.array([self._seg_x[i] + t * self._seg_dx[i],
                         self._seg_y[i] + t * self._seg_dy[i]])

    def tangent_at(self, s: float) -> float:
        """Centerline tangent angle (rad) at arc length s."""
        i, _ = self._segment_at(s)
        return math.atan2(self._seg_dy[i], self._seg_dx[i])

    def half_width_at(self, s: float) -> float:
        i, t = self._segment_at(s)
        return float(self.points[i, 2] + t * (self.points[i + 1, 2] - self.points[i, 2]))

    def raycast(self, position, heading: float, ray_angles, max_range: float,
                brute: bool = False) -> np.ndarray:
        """Distances to the first edge-polyline hit along body-frame rays.

        Each ray angle is relative to `heading` (positive = left). Distances
        are clamped to `max_range`; rays originating outside the track
        boundaries (|lateral offset| > 1) return 0 for every ray.
        """
        px, py = float(position[0]), float(position[1])
        angles = np.asarray(ray_angles, dtype=np.float64)
        out = np.zeros(angles.shape[0])
        _, offset = self.project(position)
        if abs(offset) > 1.0:
            return out
        dirs_x = np.cos(heading + angles)
        dirs_y = np.sin(heading + angles)
        if brute:
            _raycast_brute(px, py, dirs_x, dirs_y, float(max_range),
                           self._ray_ax, self._ray_ay, self._ray_bx, self._ray_by, out)
        else:
            _raycast_grid(px, py, dirs_x, dirs_y, float(max_range),
                          self._ray_ax, self._ray_ay, self._ray_bx, self._ray_by,
                          self._grid_origin[0], self._grid_origin[1],
                          self._grid_cell, self._grid_ncx, self._grid_ncy,
                          self._grid_start, self._grid_items, out)
        return out

    def curvature(self) -> np.ndarray:
        """Unsigned discrete curvature estimate per centerline point (1/m)."""
        p = self.points[:, :2]
        if self.closed:
            prev = np.vstack([p[-2], p[:-1]])[: p.shape[0]]
            nxt = np.vstack([p[1:], p[1]])
        else:
            prev = np.vstack([p[0], p[:-1]])
            nxt = np.vstack([p[1:], p[-1]])
        a = p - prev
        b = nxt - p
        c = nxt - prev
        cross = np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
        den = np.hypot(*a.T) * np.hypot(*b.T) * np.hypot(*c.T)
        k = np.zeros(p.shape[0])
        ok = den > 1e-12
        k[ok] = 2.0 * cross[ok] / den[ok]
        return k

    def __eq__(self, other) -> bool:
        return (isinstance(other, Track)
                and self.name == other.name
                and self.closed == other.closed
                and self.points.shape == other.points.shape
                and np.array_equal(self.points, other.points))

    def __repr__(self) -> str:
        return (f"Track(name={self.name!r}, closed={self.closed}, "
                f"points={self.points.shape[0]}, length={self.total_length:.2f} m)")


def _densify(pts: np.ndarray, seg_len: np.ndarray, max_len: float) -> np.ndarray:
    """Subdivide long segments in place on the polyline.

    Idempotent: segments already within tolerance of max_len are kept, so a
    save/load cycle reproduces the same point set bit for bit.
    """
    ratio = seg_len / max_len - 1e-9
    if np.all(ratio <= 1.0):
        return np.ascontiguousarray(pts)
    out = [pts[0]]
    for i in range(seg_len.shape[0]):
        n = max(1, int(math.ceil(ratio[i])))
        for k in range(1, n + 1):
            t = k / n
            out.append(pts[i] * (1.0 - t) + pts[i + 1] * t)
    return np.ascontiguousarray(np.array(out))


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------
# Track file schema (JSON):
#   {"name": str, "closed": bool,
#    "points": [{"x": m, "y": m, "half_width": m}, ...]}
# Closed tracks are stored without the closing duplicate point.

def load_track(path) -> Track:
    """Load and validate a track from a JSON file (schema above)."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise TrackSchemaError(f"not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise TrackSchemaError("top-level value must be an object")
    for field, kind in (("name", str), ("closed", bool), ("points", list)):
        if field not in doc:
            raise TrackSchemaError(f"missing field '{field}'")
        if not isinstance(doc[field], kind):
            raise TrackSchemaError(f"field '{field}' must be {kind.__name__}")
    rows = []
    for i, p in enumerate(doc["points"]):
        if not isinstance(p, dict):
            raise TrackSchemaError(f"points[{i}] must be an object")
        try:
            rows.append((float(p["x"]), float(p["y"]), float(p["half_width"])))
        except KeyError as exc:
            raise TrackSchemaError(f"points[{i}] missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError):
            raise TrackSchemaError(f"points[{i}] has a non-numeric field") from None
    return Track(doc["name"], doc["closed"], np.array(rows))


def validate_track_file(path) -> list[str]:
    """Collect as many schema/invariant problems as possible for one file.
    Empty list means the track loads cleanly."""
    problems: list[str] = []
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        return [f"unreadable: {exc}"]
    if not isinstance(doc, dict):
        return ["top-level value must be an object"]
    for field_name, kind in (("name", str), ("closed", bool), ("points", list)):
        if field_name not in doc:
            problems.append(f"missing field '{field_name}'")
        elif not isinstance(doc[field_name], kind):
            problems.append(f"field '{field_name}' must be {kind.__name__}")
    pts = doc.get("points")
    if isinstance(pts, list):
        for i, p in enumerate(pts):
            if not isinstance(p, dict) or not all(k in p for k in ("x", "y", "half_width")):
                problems.append(f"points[{i}] must have x, y, half_width")
                continue
            try:
                hw = float(p["half_width"])
                float(p["x"]), float(p["y"])
            except (TypeError, ValueError):
                problems.append(f"points[{i}] has a non-numeric field")
                continue
            if hw <= 0:
                problems.append(f"points[{i}].half_width must be > 0 (got {hw})")
    if not problems:
        try:
            load_track(path)
        except TrackError as exc:
            problems.append(str(exc))
    return problems


def save_track(track: Track, path) -> None:
    """Write a track to JSON (inverse of load_track)."""
    pts = track.points[:-1] if track.closed else track.points
    doc = {
        "name": track.name,
        "closed": track.closed,
        "points": [{"x": float(x), "y": float(y), "half_width": float(w)}
                   for x, y, w in pts],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def _turtle(segments, step: float = 0.4):
    """Emit polyline points for a list of ('s', length) straights and
    ('a', radius, angle) arcs (angle > 0 turns left). Starts at the origin
    heading +x."""
    x, y, h = 0.0, 0.0, 0.0
    pts = [(x, y)]
    for seg in segments:
        if seg[0] == "s":
            length = seg[1]
            x += length * math.cos(h)
            y += length * math.sin(h)
            pts.append((x, y))
        else:
            _, radius, angle = seg
            n = max(2, int(math.ceil(abs(angle) * radius / step)))
            side = 1.0 if angle > 0 else -1.0
            # arc center sits perpendicular to the heading: left for side=+1
            cx = x - side * radius * math.sin(h)
            cy = y + side * radius * math.cos(h)
            a0 = math.atan2(y - cy, x - cx)
            for k in range(1, n + 1):
                a = a0 + angle * k / n
                pts.append((cx + radius * math.cos(a), cy + radius * math.sin(a)))
            h += angle
            x, y = pts[-1]
    return np.array(pts), h


def generate_oval(straight_length: float, corner_radius: float, width: float,
                  name: str = "oval") -> Track:
    """Closed stadium: two straights joined by semicircular ends.

    Length = 2 * straight_length + 2 * pi * corner_radius (up to polyline
    chord shortening, < 0.01%).
    """
    if straight_length <= 0 or corner_radius <= 0 or width <= 0:
        raise TrackError("oval dimensions must be positive")
    segs = [("s", straight_length), ("a", corner_radius, math.pi),
            ("s", straight_length), ("a", corner_radius, math.pi)]
    pts, _ = _turtle(segs)
    hw = np.full((pts.shape[0], 1), width / 2.0)
    return Track(name, True, np.hstack([pts[:-1], hw[:-1]]))


# paper-scale circuit: two straight lengths ('u', 'v') are solved for exact
# closure. Turn list mixes a fast sweeper (R 150), medium corners (R 45-70)
# and a hairpin (R 18); angles sum to -360 deg so heading closes exactly.
_PAPER_SCALE_TURNS = [
    ("s", "u"),                       # start/finish straight (solved ~489 m)
    ("a", 150.0, math.radians(-70)),  # T1 fast sweeper
    ("s", "v"),                       # link straight (solved ~396 m)
    ("a", 55.0, math.radians(-110)),  # T2 medium
    ("s", 1600.0),                    # back straight
    ("a", 18.0, math.radians(-180)),  # T3 hairpin
    ("s", 700.0),
    ("a", 70.0, math.radians(80)),    # T4 medium-fast left
    ("s", 420.0),
    ("a", 45.0, math.radians(-80)),   # T5 medium
]


def generate_paper_scale(width: float = 11.0, min_length: float = 3900.0,
                         name: str = "paper_scale") -> Track:
    """Closed mixed circuit of at least `min_length` meters.

    Contains a fast sweeper, a hairpin, and medium-speed corners. The two
    symbolic straight lengths are solved so the polyline closes exactly;
    both are then stretched uniformly until the total length requirement is
    met.
    """
    if width <= 0 or min_length <= 0:
        raise TrackError("paper_scale dimensions must be positive")
    scale = 1.0
    for _ in range(60):
        segs, ok = _solve_closure(_PAPER_SCALE_TURNS, base_scale=scale)
        if not ok:
            raise TrackError("paper_scale closure failed")  # pragma: no cover
        pts, _ = _turtle(segs)
        hw = np.full((pts.shape[0] - 1, 1), width / 2.0)
        track = Track(name, True, np.hstack([pts[:-1], hw]))
        if track.total_length >= min_length:
            return track
        scale *= max(1.02, min_length / track.total_length * 0.9 + 0.1)
    raise TrackError("paper_scale could not reach the requested length")


def _solve_closure(spec, base_scale: float = 1.0):
    """Resolve the two symbolic straight lengths so the path closes."""
    # walk once with unknowns set to zero, recording their headings
    x, y, h = 0.0, 0.0, 0.0
    unknown_dirs = {}
    fixed = []
    for seg in spec:
        if seg[0] == "s":
            if isinstance(seg[1], str):
                unknown_dirs[seg[1]] = (math.cos(h), math.sin(h))
                fixed.append(("s", seg[1]))
            else:
                length = seg[1] * base_scale
                x += length * math.cos(h)
                y += length * math.sin(h)
                fixed.append(("s", length))
        else:
            _, radius, angle = seg
            side = 1.0 if angle > 0 else -1.0
            cxc = x - side * radius * math.sin(h)
            cyc = y + side * radius * math.cos(h)
            a0 = math.atan2(y - cyc, x - cxc)
            a1 = a0 + angle
            x = cxc + radius * math.cos(a1)
            y = cyc + radius * math.sin(a1)
            h += angle
            fixed.append(("a", radius, angle))
    names = list(unknown_dirs)
    if len(names) != 2:
        return None, False
    d1 = unknown_dirs[names[0]]
    d2 = unknown_dirs[names[1]]
    det = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(det) < 1e-9:
        return None, False
    rx, ry = -x, -y
    u = (rx * d2[1] - ry * d2[0]) / det
    v = (d1[0] * ry - d1[1] * rx) / det
    vals = {names[0]: u, names[1]: v}
    if u < 50.0 or v < 50.0:
        return None, False
    return [("s", vals[s[1]]) if (s[0] == "s" and isinstance(s[1], str)) else s
            for s in fixed], True


def generate_circuit(kind: str, **params) -> Track:
    """Generate a circuit by kind: 'oval' or 'paper_scale'.

    oval params: straight_length, corner_radius, width (all m).
    paper_scale params: width (default 11 m), min_length (default 3900 m).
    """
    if kind == "oval":
        return generate_oval(params.get("straight_length", 100.0),
                             params.get("corner_radius", 30.0),
                             params.get("width", 10.0),
                             name=params.get("name", "oval"))
    if kind == "paper_scale":
        return generate_paper_scale(params.get("width", 11.0),
                                    params.get("min_length", 3900.0),
                                    name=params.get("name", "paper_scale"))
    raise TrackError(f"unknown circuit kind {kind!r}")


def generate_straight(length: float, width: float, name: str = "straight") -> Track:
    """Open straight along +x, used for drag-strip style tests."""
    if length <= 0 or width <= 0:
        raise TrackError("straight dimensions must be positive")
    pts = np.array([[0.0, 0.0, width / 2.0],
                    [length / 3.0, 0.0, width / 2.0],
                    [2.0 * length / 3.0, 0.0, width / 2.0],
                    [length, 0.0, width / 2.0]])
    return Track(name, False, pts)
