"""Binarization, outer-border tracing, contour metrics and min-area rotated rectangles.

Coordinate conventions used everywhere in this package:

* image pixels, origin top-left, x to the right, y downward;
* contour points sit on pixel centers, so a filled w x h block traces to a
  polygon spanning (w-1) x (h-1);
* angles are degrees clockwise from image-up; undirected axes are reported
  modulo 180.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DegenerateContour, NoContours


class Orientation(Enum):
    CW = "cw"
    CCW = "ccw"


@dataclass(frozen=True, eq=False)
class Contour:
    """Closed pixel polyline; the last point implicitly connects to the first.

    Components thinner than 3 px trace to fewer than 3 points; the metric
    operations reject those with DegenerateContour.
    """

    points: np.ndarray  # (n, 2) array of x, y
    orientation: Orientation

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class RotatedRect:
    """Minimum-area enclosing rectangle. width_px <= length_px by construction;
    angle_deg is the image angle of the length axis in [0, 180)."""

    center: tuple[float, float]
    width_px: float
    length_px: float
    angle_deg: float

    @property
    def area(self) -> float:
        return self.width_px * self.length_px


def binarize(raster: np.ndarray, threshold: int = 40, max_value: int = 255) -> np.ndarray:
    """Invert (v -> 255-v) then threshold (v > threshold -> max_value else 0)."""
    raster = np.asarray(raster)
    inverted = 255 - raster.astype(np.int16)
    return np.where(inverted > threshold, max_value, 0).astype(np.uint8)


# Neighbor ring in clockwise screen order starting west: W NW N NE E SE S SW.
_RING = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))
_DIR_INDEX = {d: k for k, d in enumerate(_RING)}


def _label_components(fg: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected component labeling via union-find over row runs."""
    h, w = fg.shape
    labels = np.zeros((h, w), dtype=np.int32)
    parent: list[int] = [0]

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    prev_runs: list[tuple[int, int, int]] = []
    for i in range(h):
        row = fg[i]
        if not row.any():
            prev_runs = []
            continue
        d = np.diff(row.astype(np.int8))
        starts = np.flatnonzero(d == 1) + 1
        ends = np.flatnonzero(d == -1) + 1
        if row[0]:
            starts = np.concatenate(([0], starts))
        if row[-1]:
            ends = np.concatenate((ends, [w]))
        runs: list[tuple[int, int, int]] = []
        for s, e in zip(starts.tolist(), ends.tolist()):
            lbl = 0
            for ps, pe, pl in prev_runs:
                if ps <= e and pe >= s:  # includes diagonal touch
                    root = find(pl)
                    if lbl == 0:
                        lbl = root
                    elif root != lbl:
                        lo, hi = (lbl, root) if lbl < root else (root, lbl)
                        parent[hi] = lo
                        lbl = lo
            if lbl == 0:
                lbl = len(parent)
                parent.append(lbl)
            labels[i, s:e] = lbl
            runs.append((s, e, lbl))
        prev_runs = runs

    lut = np.zeros(len(parent), dtype=np.int32)
    compact: dict[int, int] = {}
    for a in range(1, len(parent)):
        root = find(a)
        if root not in compact:
            compact[root] = len(compact) + 1
        lut[a] = compact[root]
    return lut[labels], len(compact)


def _trace_border(mask: np.ndarray, i0: int, j0: int) -> list[tuple[int, int]]:
    """Follow the outer border of the component containing (i0, j0).

    (i0, j0) must be the component's first pixel in raster order, which
    guarantees its west neighbor is outside the component. mask must be
    padded so neighbor lookups never leave the array.
    """
    k1 = None
    for k in range(8):
        di, dj = _RING[k]
        if mask[i0 + di, j0 + dj]:
            k1 = k
            break
    if k1 is None:
        return [(i0, j0)]

    path = [(i0, j0)]
    di, dj = _RING[k1]
    i1, j1 = i0 + di, j0 + dj
    i2, j2 = i1, j1
    i3, j3 = i0, j0
    limit = 4 * int(mask.sum()) + 8
    for _ in range(limit):
        d = _DIR_INDEX[(i2 - i3, j2 - j3)]
        i4 = j4 = -1
        for step in range(1, 9):
            k = (d - step) % 8  # counterclockwise scan
            di, dj = _RING[k]
            ni, nj = i3 + di, j3 + dj
            if mask[ni, nj]:
                i4, j4 = ni, nj
                break
        if (i4, j4) == (i0, j0) and (i3, j3) == (i1, j1):
            return path
        i2, j2 = i3, j3
        i3, j3 = i4, j4
        path.append((i3, j3))
    raise RuntimeError("border following did not terminate")  # pragma: no cover


def _compress_chain(path: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Drop interior points of straight runs (exact integer collinearity on
    the closed cycle)."""
    n = len(path)
    if n < 3:
        return path
    keep = []
    for k in range(n):
        pa = path[k - 1]
        pb = path[k]
        pc = path[(k + 1) % n]
        if (pb[0] - pa[0], pb[1] - pa[1]) != (pc[0] - pb[0], pc[1] - pb[1]):
            keep.append(pb)
    return keep if keep else [path[0]]


def _signed_area(points: np.ndarray) -> float:
    x = points[:, 0]
    y = points[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def trace_outer_contours(binary: np.ndarray) -> list[Contour]:
    """Trace the outermost border of every foreground component.

    Holes are never traced. Straight runs are compressed to their endpoints.
    Components are reported in raster order of their first pixel.
    """
    fg = np.asarray(binary) > 0
    if not fg.any():
        return []
    labels, n = _label_components(fg)

    flat = labels.ravel()
    fg_idx = np.flatnonzero(flat)
    vals, first = np.unique(flat[fg_idx], return_index=True)
    first_idx = {int(v): int(fg_idx[f]) for v, f in zip(vals, first)}

    h, w = fg.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    contours = []
    for lbl in sorted(first_idx, key=first_idx.get):
        idx = first_idx[lbl]
        i0, j0 = divmod(idx, w)
        padded[1:-1, 1:-1] = labels == lbl
        path = _trace_border(padded, i0 + 1, j0 + 1)
        path = _compress_chain(path)
        pts = np.array([(j - 1, i - 1) for i, j in path], dtype=np.int64)
        if len(pts) >= 3 and _signed_area(pts.astype(float)) < 0:
            orient = Orientation.CCW
        else:
            orient = Orientation.CW
        contours.append(Contour(points=pts, orientation=orient))
    return contours


def contour_pixels(contour: Contour) -> list[tuple[int, int]]:
    """Expand a compressed contour back to the full border pixel sequence."""
    pts = np.asarray(contour.points, dtype=np.int64)
    out: list[tuple[int, int]] = []
    n = len(pts)
    for k in range(n):
        x0, y0 = pts[k]
        x1, y1 = pts[(k + 1) % n]
        steps = max(abs(int(x1 - x0)), abs(int(y1 - y0)))
        if steps == 0:
            out.append((int(x0), int(y0)))
            continue
        sx = (x1 - x0) // steps
        sy = (y1 - y0) // steps
        for t in range(steps):
            out.append((int(x0 + sx * t), int(y0 + sy * t)))
    return out if out else [tuple(map(int, pts[0]))]


def polygon_metrics(contour: Contour | np.ndarray) -> dict[str, float]:
    """Shoelace area and closed arc length of a contour."""
    pts = np.asarray(contour.points if isinstance(contour, Contour) else contour, dtype=float)
    if len(pts) < 3:
        raise DegenerateContour(f"need at least 3 points, got {len(pts)}")
    area = abs(_signed_area(pts))
    segs = np.roll(pts, -1, axis=0) - pts
    arc = float(np.hypot(segs[:, 0], segs[:, 1]).sum())
    return {"area_px2": area, "arc_length_px": arc}


def largest_contour(contours: list[Contour]) -> Contour:
    """Contour with maximal closed perimeter; ties broken by larger area,
    then first occurrence."""
    if not contours:
        raise NoContours("empty contour list")
    best = None
    best_key = None
    for c in contours:
        pts = np.asarray(c.points, dtype=float)
        segs = np.roll(pts, -1, axis=0) - pts
        arc = float(np.hypot(segs[:, 0], segs[:, 1]).sum())
        area = abs(_signed_area(pts)) if len(pts) >= 3 else 0.0
        key = (arc, area)
        if best_key is None or key > best_key:
            best, best_key = c, key
    return best


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull, counterclockwise in y-down coordinates."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) < 3:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def half(seq):
        out: list[np.ndarray] = []
        for p in seq:
            while len(out) >= 2:
                a = out[-1] - out[-2]
                b = p - out[-2]
                if a[0] * b[1] - a[1] * b[0] > 0:
                    break
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def _axis_image_angle(dx: float, dy: float) -> float:
    """Image angle (deg clockwise from up) of an undirected axis, in [0, 180)."""
    ang = math.degrees(math.atan2(dx, -dy)) % 180.0
    return 0.0 if ang >= 180.0 - 1e-12 else ang


def min_area_rect(contour: Contour | np.ndarray) -> RotatedRect:
    """Minimum-area enclosing rectangle by rotating calipers over the hull."""
    pts = np.asarray(contour.points if isinstance(contour, Contour) else contour, dtype=float)
    if len(pts) < 3:
        raise DegenerateContour(f"need at least 3 points, got {len(pts)}")
    hull = convex_hull(pts)
    if len(hull) < 3:
        raise DegenerateContour("contour points are collinear")

    edges = np.roll(hull, -1, axis=0) - hull
    norms = np.hypot(edges[:, 0], edges[:, 1])
    units = edges / norms[:, None]

    best = None
    for ux, uy in units:
        u = np.array([ux, uy])
        v = np.array([-uy, ux])
        pu = hull @ u
        pv = hull @ v
        du = pu.max() - pu.min()
        dv = pv.max() - pv.min()
        area = du * dv
        if best is None or area < best[0]:
            cu = (pu.max() + pu.min()) / 2.0
            cv = (pv.max() + pv.min()) / 2.0
            best = (area, du, dv, u, v, cu, cv)

    _, du, dv, u, v, cu, cv = best
    center = cu * u + cv * v
    if du >= dv:
        length, width, axis = du, dv, u
    else:
        length, width, axis = dv, du, v
    if width <= 1e-12:
        raise DegenerateContour("zero-width enclosing rectangle")
    return RotatedRect(
        center=(float(center[0]), float(center[1])),
        width_px=float(width),
        length_px=float(length),
        angle_deg=_axis_image_angle(float(axis[0]), float(axis[1])),
    )


def rotate_points(points: np.ndarray, delta_deg: float) -> np.ndarray:
    """Rotate points so every image angle increases by delta_deg."""
    rad = math.radians(delta_deg)
    c, s = math.cos(rad), math.sin(rad)
    rot = np.array([[c, -s], [s, c]])
    return np.asarray(points, dtype=float) @ rot.T
