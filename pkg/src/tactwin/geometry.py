"""Oriented boxes, rotated IoU via convex clipping, and the angle-error metric.

Angles are degrees in the half-open range [0, 180); a box is the five-tuple
(cx, cy, w, h, theta) in mm/degrees. All functions are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Vertices closer than this (mm) are merged during clipping.
MERGE_EPS = 1e-9


def normalize_angle(raw: float) -> float:
    """Reduce an angle in degrees to the canonical [0, 180) range."""
    raw = float(raw)
    if not math.isfinite(raw):
        raise ValueError(f"angle must be finite, got {raw}")
    out = math.fmod(raw, 180.0)
    if out < 0.0:
        out += 180.0
    return out if out < 180.0 else 0.0


def rotation_matrix(theta_deg: float) -> np.ndarray:
    """2x2 counter-clockwise rotation matrix for an angle in degrees."""
    t = math.radians(theta_deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s], [s, c]])


def angle_error(pred_deg: float, gt_deg: float) -> float:
    """Pose-angle error in degrees, in [0, 90].

    Builds the two rotation matrices, forms M = R_pred @ R_gt^-1, and folds
    the 180-degree ambiguity of the box representation by taking absolute
    values, so (1, 179) gives 2 rather than 178. Mathematically this is
    arccos(|trace(M) / 2|); it is evaluated as atan2(|sin|, |cos|) of the
    same matrix entries because arccos loses ~6 digits next to 0 and 90
    degrees where its derivative blows up.
    """
    r_pred = rotation_matrix(normalize_angle(pred_deg))
    r_gt = rotation_matrix(normalize_angle(gt_deg))
    rel = r_pred @ r_gt.T  # inverse of a rotation is its transpose
    cos_d = (rel[0, 0] + rel[1, 1]) / 2.0
    sin_d = (rel[1, 0] - rel[0, 1]) / 2.0
    return math.degrees(math.atan2(abs(sin_d), abs(cos_d)))


@dataclass(frozen=True)
class OrientedBox:
    """Five-parameter oriented rectangle: center (mm), size (mm), angle (deg)."""

    cx: float
    cy: float
    w: float
    h: float
    theta_deg: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box dimensions must be positive, got w={self.w} h={self.h}")
        object.__setattr__(self, "theta_deg", normalize_angle(self.theta_deg))

    @property
    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> np.ndarray:
        """Corner coordinates, shape (4, 2), counter-clockwise."""
        t = math.radians(self.theta_deg)
        c, s = math.cos(t), math.sin(t)
        hw, hh = self.w / 2.0, self.h / 2.0
        local = np.array([[hw, hh], [-hw, hh], [-hw, -hh], [hw, -hh]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h, self.theta_deg])


@dataclass(frozen=True)
class ConvexPolygon:
    """Counter-clockwise convex polygon; may be empty (no vertices)."""

    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "vertices", v)

    def __len__(self) -> int:
        return self.vertices.shape[0]

    @property
    def area(self) -> float:
        return polygon_area(self)


def box_to_polygon(box: OrientedBox) -> ConvexPolygon:
    return ConvexPolygon(box.corners())


def polygon_area(poly: ConvexPolygon) -> float:
    """Shoelace area; nonnegative for CCW input, clipped at zero."""
    v = poly.vertices
    if v.shape[0] < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    rx, ry = np.roll(x, -1), np.roll(y, -1)
    return max(0.5 * float(np.sum(x * ry - rx * y)), 0.0)


def _dedupe_vertices(verts: list) -> np.ndarray:
    """Drop consecutive (and wrap-around) vertices closer than MERGE_EPS."""
    out = []
    for p in verts:
        if not out or abs(p[0] - out[-1][0]) + abs(p[1] - out[-1][1]) > MERGE_EPS:
            out.append(p)
    while len(out) > 1 and abs(out[0][0] - out[-1][0]) + abs(out[0][1] - out[-1][1]) <= MERGE_EPS:
        out.pop()
    return np.array(out).reshape(-1, 2)


def polygon_clip(subject: ConvexPolygon, clip: ConvexPolygon) -> ConvexPolygon:
    """Intersection of two convex CCW polygons (Sutherland-Hodgman).

    Degenerate contact (shared edges or vertices) yields a zero-area result;
    an empty polygon is returned when the inputs do not overlap.
    """
    verts = [tuple(p) for p in subject.vertices]
    cv = clip.vertices
    n_clip = cv.shape[0]
    if len(verts) == 0 or n_clip < 3:
        return ConvexPolygon()
    for k in range(n_clip):
        if not verts:
            break
        ax, ay = cv[k]
        bx, by = cv[(k + 1) % n_clip]
        ex, ey = bx - ax, by - ay
        out = []
        prev = verts[-1]
        prev_side = ex * (prev[1] - ay) - ey * (prev[0] - ax)
        for cur in verts:
            side = ex * (cur[1] - ay) - ey * (cur[0] - ax)
            if side >= -MERGE_EPS:
                if prev_side < -MERGE_EPS:
                    t = prev_side / (prev_side - side)
                    out.append((prev[0] + t * (cur[0] - prev[0]),
                                prev[1] + t * (cur[1] - prev[1])))
                out.append(cur)
            elif prev_side >= -MERGE_EPS:
                t = prev_side / (prev_side - side)
                out.append((prev[0] + t * (cur[0] - prev[0]),
                            prev[1] + t * (cur[1] - prev[1])))
            prev, prev_side = cur, side
        verts = out
    merged = _dedupe_vertices(verts)
    if merged.shape[0] < 3:
        return ConvexPolygon()
    return ConvexPolygon(merged)


def rotated_iou(a: OrientedBox, b: OrientedBox) -> float:
    """Intersection-over-union of two oriented boxes, in [0, 1].

    The pair is ordered canonically before clipping so the result is exactly
    symmetric in its arguments.
    """
    first, second = sorted((a, b), key=lambda bx: (bx.cx, bx.cy, bx.w, bx.h, bx.theta_deg))
    pa, pb = box_to_polygon(first), box_to_polygon(second)
    inter = polygon_area(polygon_clip(pa, pb))
    union = polygon_area(pa) + polygon_area(pb) - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


# ---------------------------------------------------------------------------
# Vectorized pairwise path used by the assignment and evaluation hot loops.
# ---------------------------------------------------------------------------

# A rectangle clipped by 4 half-planes has at most 8 vertices; the extra room
# absorbs spurious eps-tolerance crossings at near-degenerate contacts.
_BUF = 16


def boxes_to_corners(boxes: np.ndarray) -> np.ndarray:
    """Corners of (N, 5) boxes as (N, 4, 2), counter-clockwise."""
    boxes = np.asarray(boxes, dtype=float)
    t = np.radians(boxes[:, 4])
    c, s = np.cos(t), np.sin(t)
    hw, hh = boxes[:, 2] / 2.0, boxes[:, 3] / 2.0
    lx = np.stack([hw, -hw, -hw, hw], axis=1)
    ly = np.stack([hh, hh, -hh, -hh], axis=1)
    x = lx * c[:, None] - ly * s[:, None] + boxes[:, 0:1]
    y = lx * s[:, None] + ly * c[:, None] + boxes[:, 1:2]
    return np.stack([x, y], axis=2)


def _polygon_areas_padded(pts: np.ndarray) -> np.ndarray:
    x, y = pts[..., 0], pts[..., 1]
    rx, ry = np.roll(x, -1, axis=1), np.roll(y, -1, axis=1)
    return np.maximum(0.5 * np.sum(x * ry - rx * y, axis=1), 0.0)


def rotated_iou_pairs(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Elementwise rotated IoU of two (N, 5) box arrays.

    Batched Sutherland-Hodgman over fixed-size vertex buffers; rows past each
    polygon's vertex count replicate the last valid vertex so the wrap edge
    stays correct without per-row loops.
    """
    boxes_a = np.asarray(boxes_a, dtype=float).reshape(-1, 5)
    boxes_b = np.asarray(boxes_b, dtype=float).reshape(-1, 5)
    n = boxes_a.shape[0]
    if n == 0:
        return np.zeros(0)
    sub = boxes_to_corners(boxes_a)
    clip = boxes_to_corners(boxes_b)

    pts = np.concatenate([sub, sub[:, 3:4].repeat(_BUF - 4, axis=1)], axis=1)
    counts = np.full(n, 4, dtype=int)
    rows = np.arange(n)
    slot = np.arange(_BUF)

    for k in range(4):
        a = clip[:, k]
        b = clip[:, (k + 1) % 4]
        ex = (b[:, 0] - a[:, 0])[:, None]
        ey = (b[:, 1] - a[:, 1])[:, None]
        side = ex * (pts[..., 1] - a[:, 1][:, None]) - ey * (pts[..., 0] - a[:, 0][:, None])
        valid = slot[None, :] < counts[:, None]
        geo_inside = side >= -MERGE_EPS
        # Slot 0's predecessor is the replicated last valid vertex, so rolling
        # the unmasked state keeps the wrap edge geometrically correct.
        prev_pts = np.roll(pts, 1, axis=1)
        prev_side = np.roll(side, 1, axis=1)
        prev_geo = np.roll(geo_inside, 1, axis=1)
        inside = geo_inside & valid
        crossing = (geo_inside != prev_geo) & valid

        denom = prev_side - side
        safe = np.where(np.abs(denom) < 1e-300, 1.0, denom)
        t = np.clip(prev_side / safe, 0.0, 1.0)
        ipts = prev_pts + t[..., None] * (pts - prev_pts)

        emit = crossing.astype(int) + inside.astype(int)
        pos = np.cumsum(emit, axis=1) - emit
        out = np.zeros((n, 2 * _BUF + 2, 2))
        r_ix = np.broadcast_to(rows[:, None], (n, _BUF))
        out[r_ix[crossing], pos[crossing]] = ipts[crossing]
        cur_pos = pos + crossing.astype(int)
        out[r_ix[inside], cur_pos[inside]] = pts[inside]
        # Slots beyond _BUF can only hold eps-duplicate vertices; drop them.
        counts = np.minimum(emit.sum(axis=1), _BUF)
        pad_ix = np.minimum(slot[None, :], np.maximum(counts - 1, 0)[:, None])
        pts = out[rows[:, None], pad_ix]

    inter = np.where(counts >= 3, _polygon_areas_padded(pts), 0.0)
    area_a = _polygon_areas_padded(np.concatenate(
        [sub, sub[:, 3:4].repeat(_BUF - 4, axis=1)], axis=1))
    area_b = _polygon_areas_padded(np.concatenate(
        [clip, clip[:, 3:4].repeat(_BUF - 4, axis=1)], axis=1))
    union = area_a + area_b - inter
    iou = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return np.clip(iou, 0.0, 1.0)


def points_in_box(points: np.ndarray, box: OrientedBox) -> np.ndarray:
    """Boolean mask of (M, 2) points inside (or on) an oriented box."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    t = math.radians(box.theta_deg)
    c, s = math.cos(t), math.sin(t)
    dx = points[:, 0] - box.cx
    dy = points[:, 1] - box.cy
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (np.abs(u) <= box.w / 2.0) & (np.abs(v) <= box.h / 2.0)
