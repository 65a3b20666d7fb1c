import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tactwin.geometry import (ConvexPolygon, OrientedBox, angle_error,
                              box_to_polygon, boxes_to_corners, normalize_angle,
                              points_in_box, polygon_area, polygon_clip,
                              rotated_iou, rotated_iou_pairs)


def random_boxes(rng, n, span=5.0, size=(0.5, 8.0)):
    return np.column_stack([
        rng.uniform(-span, span, n),
        rng.uniform(-span, span, n),
        rng.uniform(size[0], size[1], n),
        rng.uniform(size[0], size[1], n),
        rng.uniform(0.0, 180.0, n),
    ])


def mc_iou(a: OrientedBox, b: OrientedBox, n_samples: int, seed: int) -> float:
    """Monte-Carlo point-sampling oracle, independent of the clipping path."""
    rng = np.random.default_rng(seed)
    ca, cb = a.corners(), b.corners()
    lo = np.minimum(ca.min(axis=0), cb.min(axis=0))
    hi = np.maximum(ca.max(axis=0), cb.max(axis=0))
    pts = rng.uniform(lo, hi, size=(n_samples, 2))

    def inside(box):
        t = math.radians(box.theta_deg)
        c, s = math.cos(t), math.sin(t)
        dx, dy = pts[:, 0] - box.cx, pts[:, 1] - box.cy
        u = dx * c + dy * s
        v = -dx * s + dy * c
        return (np.abs(u) <= box.w / 2) & (np.abs(v) <= box.h / 2)

    in_a, in_b = inside(a), inside(b)
    either = np.count_nonzero(in_a | in_b)
    if either == 0:
        return 0.0
    return np.count_nonzero(in_a & in_b) / either


class TestNormalizeAngle:
    def test_identity(self):
        assert normalize_angle(0) == 0.0

    def test_modular_reduction(self):
        assert normalize_angle(185) == pytest.approx(5.0)

    def test_negative(self):
        # -30 + 180 = 150, re-adding multiples of 180 stays in class
        assert normalize_angle(-30) == pytest.approx(150.0)
        assert normalize_angle(-30 + 5 * 180) == pytest.approx(150.0)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            normalize_angle(float("nan"))
        with pytest.raises(ValueError):
            normalize_angle(float("inf"))

    @given(st.floats(-1e6, 1e6))
    def test_idempotent_and_in_range(self, raw):
        out = normalize_angle(raw)
        assert 0.0 <= out < 180.0
        assert normalize_angle(out) == out


class TestAngleError:
    def test_paper_wraparound_case(self):
        assert angle_error(1, 179) == pytest.approx(2.0, abs=1e-9)

    def test_identity_rotation(self):
        assert angle_error(37.25, 37.25) == 0.0

    def test_quarter_turn(self):
        assert angle_error(30, 120) == pytest.approx(90.0, abs=1e-9)

    @given(st.floats(0, 180, exclude_max=True), st.floats(0, 180, exclude_max=True))
    @settings(max_examples=200)
    def test_matches_closed_form_and_symmetric(self, a, b):
        d = abs(a - b) % 180.0
        expected = min(d, 180.0 - d)
        assert angle_error(a, b) == pytest.approx(expected, abs=1e-9)
        assert angle_error(a, b) == angle_error(b, a)
        assert 0.0 <= angle_error(a, b) <= 90.0


class TestBoxToPolygon:
    def test_axis_aligned_vertices(self):
        poly = box_to_polygon(OrientedBox(0, 0, 4, 2, 0))
        got = {(round(x, 9), round(y, 9)) for x, y in poly.vertices}
        assert got == {(2, 1), (-2, 1), (-2, -1), (2, -1)}

    def test_rotated_square_hits_axes(self):
        poly = box_to_polygon(OrientedBox(0, 0, 2, 2, 45))
        for x, y in poly.vertices:
            assert math.hypot(x, y) == pytest.approx(math.sqrt(2))
            assert min(abs(x), abs(y)) == pytest.approx(0.0, abs=1e-12)

    def test_square_90_degrees_same_point_set(self):
        a = box_to_polygon(OrientedBox(1, 1, 2, 2, 90)).vertices
        b = box_to_polygon(OrientedBox(1, 1, 2, 2, 0)).vertices
        sa = {(round(x, 9), round(y, 9)) for x, y in a}
        sb = {(round(x, 9), round(y, 9)) for x, y in b}
        assert sa == sb

    def test_area_reproduces_w_times_h(self, rng):
        for row in random_boxes(rng, 100):
            box = OrientedBox(*row)
            assert polygon_area(box_to_polygon(box)) == pytest.approx(
                box.w * box.h, rel=1e-12)


class TestPolygonOps:
    def test_self_intersection(self):
        poly = box_to_polygon(OrientedBox(0.5, -0.25, 3, 2, 33))
        inter = polygon_clip(poly, poly)
        assert polygon_area(inter) == pytest.approx(polygon_area(poly), rel=1e-12)

    def test_disjoint_is_empty(self):
        a = box_to_polygon(OrientedBox(0, 0, 1, 1, 0))
        b = box_to_polygon(OrientedBox(5, 5, 1, 1, 30))
        assert len(polygon_clip(a, b)) == 0

    def test_offset_unit_squares(self):
        a = box_to_polygon(OrientedBox(0, 0, 1, 1, 0))
        b = box_to_polygon(OrientedBox(0.5, 0, 1, 1, 0))
        assert polygon_area(polygon_clip(a, b)) == pytest.approx(0.5, rel=1e-12)

    def test_touching_edge_zero_area(self):
        a = box_to_polygon(OrientedBox(0, 0, 2, 2, 0))
        b = box_to_polygon(OrientedBox(2, 0, 2, 2, 0))
        assert polygon_area(polygon_clip(a, b)) == pytest.approx(0.0, abs=1e-12)

    def test_area_examples(self):
        assert polygon_area(ConvexPolygon()) == 0.0
        unit = ConvexPolygon(np.array([[0, 0], [1, 0], [1, 1], [0, 1]]))
        assert polygon_area(unit) == pytest.approx(1.0)
        tri = ConvexPolygon(np.array([[0, 0], [2, 0], [0, 2]]))
        assert polygon_area(tri) == pytest.approx(2.0)


class TestRotatedIoU:
    def test_identical_boxes(self):
        box = OrientedBox(1, -2, 3, 5, 71)
        assert rotated_iou(box, box) == 1.0

    def test_axis_aligned_closed_form(self):
        a = OrientedBox(0, 0, 4, 2, 0)
        b = OrientedBox(2, 0, 4, 2, 0)
        assert rotated_iou(a, b) == pytest.approx(1 / 3, abs=1e-12)

    def test_rotated_square_octagon_case(self):
        a = OrientedBox(0, 0, 2, 2, 0)
        b = OrientedBox(0, 0, 2, 2, 45)
        inter = 8 * (math.sqrt(2) - 1)
        expected = inter / (8 - inter)
        assert rotated_iou(a, b) == pytest.approx(expected, abs=1e-9)

    def test_symmetric_exactly(self, rng):
        for row_a, row_b in zip(random_boxes(rng, 50), random_boxes(rng, 50)):
            a, b = OrientedBox(*row_a), OrientedBox(*row_b)
            assert rotated_iou(a, b) == rotated_iou(b, a)

    def test_disjoint_zero(self):
        assert rotated_iou(OrientedBox(0, 0, 1, 1, 10),
                           OrientedBox(9, 9, 1, 1, 80)) == 0.0

    def test_scale_invariance(self, rng):
        for row_a, row_b in zip(random_boxes(rng, 40), random_boxes(rng, 40)):
            a, b = OrientedBox(*row_a), OrientedBox(*row_b)
            base = rotated_iou(a, b)
            for s in (0.125, 3.0, 1e3):
                sa = OrientedBox(a.cx * s, a.cy * s, a.w * s, a.h * s, a.theta_deg)
                sb = OrientedBox(b.cx * s, b.cy * s, b.w * s, b.h * s, b.theta_deg)
                assert rotated_iou(sa, sb) == pytest.approx(base, abs=1e-12)

    def test_axis_aligned_matches_interval_formula(self, rng):
        for row_a, row_b in zip(random_boxes(rng, 50), random_boxes(rng, 50)):
            row_a[4] = row_b[4] = 0.0
            a, b = OrientedBox(*row_a), OrientedBox(*row_b)
            ox = max(0.0, min(a.cx + a.w / 2, b.cx + b.w / 2) - max(a.cx - a.w / 2, b.cx - b.w / 2))
            oy = max(0.0, min(a.cy + a.h / 2, b.cy + b.h / 2) - max(a.cy - a.h / 2, b.cy - b.h / 2))
            inter = ox * oy
            union = a.area + b.area - inter
            assert rotated_iou(a, b) == pytest.approx(inter / union, abs=1e-12)

    def test_monte_carlo_oracle_small(self, rng):
        boxes_a = random_boxes(rng, 30)
        boxes_b = random_boxes(rng, 30)
        for i, (ra, rb) in enumerate(zip(boxes_a, boxes_b)):
            a, b = OrientedBox(*ra), OrientedBox(*rb)
            approx = mc_iou(a, b, 200_000, seed=i)
            assert rotated_iou(a, b) == pytest.approx(approx, abs=0.02)

    def test_batched_matches_scalar(self, rng):
        a = random_boxes(rng, 300)
        b = random_boxes(rng, 300)
        batch = rotated_iou_pairs(a, b)
        scalar = [rotated_iou(OrientedBox(*ra), OrientedBox(*rb))
                  for ra, rb in zip(a, b)]
        assert np.allclose(batch, scalar, atol=1e-12)

    def test_batched_corners_ccw(self, rng):
        rows = random_boxes(rng, 20)
        corners = boxes_to_corners(rows)
        for row, quad in zip(rows, corners):
            assert np.allclose(quad, OrientedBox(*row).corners())


class TestPointsInBox:
    def test_center_and_outside(self):
        box = OrientedBox(1, 1, 4, 2, 30)
        res = points_in_box(np.array([[1, 1], [50, 50]]), box)
        assert res.tolist() == [True, False]

    def test_matches_corner_containment(self, rng):
        box = OrientedBox(0.5, -1, 5, 3, 67)
        pts = rng.uniform(-5, 5, size=(500, 2))
        got = points_in_box(pts, box)
        t = math.radians(box.theta_deg)
        c, s = math.cos(t), math.sin(t)
        for (x, y), flag in zip(pts, got):
            u = (x - box.cx) * c + (y - box.cy) * s
            v = -(x - box.cx) * s + (y - box.cy) * c
            assert flag == (abs(u) <= 2.5 and abs(v) <= 1.5)
