import math

import numpy as np
import pytest
from conftest import angle_distance, random_box, rotated_boxes
from hypothesis import given, settings
from hypothesis import strategies as st

from arbitext_utils.errors import DegenerateBox, DegenerateQuad, NonConvexQuad, NonFinite, ShapeMismatch
from arbitext_utils.geometry_utils import (
    Point2,
    Quad,
    RotatedBox,
    clip_polygon,
    fold_angle,
    iou,
    min_area_rect,
    normalize_quad,
    polygon_area,
    polygon_intersection_area,
    quad_area,
    quad_from_rbox,
    rbox_from_quad,
    signed_area,
)


def axis_quad(x0: float, y0: float, x1: float, y1: float) -> Quad:
    return Quad([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])


def grid_iou(a: Quad, b: Quad, n: int = 317) -> float:
    """在兩者聯集的外接矩形上以規則格點估計 IoU。"""
    pts = np.vstack([a.points, b.points])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    xs = lo[0] + (np.arange(n) + 0.5) * (hi[0] - lo[0]) / n
    ys = lo[1] + (np.arange(n) + 0.5) * (hi[1] - lo[1]) / n
    gx, gy = np.meshgrid(xs, ys)

    def inside(q: Quad) -> np.ndarray:
        p = normalize_quad(q).points
        mask = np.ones_like(gx, dtype=bool)
        for k in range(4):
            ax, ay = p[k]
            bx, by = p[(k + 1) % 4]
            mask &= (bx - ax) * (gy - ay) - (by - ay) * (gx - ax) >= 0
        return mask

    in_a, in_b = inside(a), inside(b)
    union = np.count_nonzero(in_a | in_b)
    return np.count_nonzero(in_a & in_b) / union if union else 0.0


class TestFoldAngle:
    def test_in_range_is_unchanged(self):
        assert fold_angle(0.3) == 0.3
        assert fold_angle(math.pi / 2) == math.pi / 2

    def test_lower_bound_maps_to_upper(self):
        assert fold_angle(-math.pi / 2) == pytest.approx(math.pi / 2)

    def test_periodic(self):
        assert fold_angle(0.3 + math.pi) == pytest.approx(0.3)
        assert fold_angle(0.3 - 3 * math.pi) == pytest.approx(0.3)


class TestQuad:
    def test_rejects_wrong_shape(self):
        with pytest.raises(ShapeMismatch):
            Quad([1.0, 2.0, 3.0])

    def test_rejects_non_finite(self):
        with pytest.raises(NonFinite):
            Quad([0, 0, 1, 0, 1, math.nan, 0, 1])

    def test_points_are_read_only(self):
        q = axis_quad(0, 0, 1, 1)
        with pytest.raises(ValueError):
            q.points[0, 0] = 5.0

    def test_flat_and_center(self):
        q = Quad([0, 0, 4, 0, 4, 2, 0, 2])
        assert q.flat() == [0, 0, 4, 0, 4, 2, 0, 2]
        assert q.center == Point2(2.0, 1.0)

    def test_signed_area_positive_for_clockwise_on_screen(self):
        q = axis_quad(0, 0, 4, 2)
        assert signed_area(q) == 8.0
        assert signed_area(Quad(q.points[::-1])) == -8.0
        assert quad_area(Quad(q.points[::-1])) == 8.0

    def test_equality_is_exact(self):
        assert axis_quad(0, 0, 1, 1) == axis_quad(0, 0, 1, 1)
        assert axis_quad(0, 0, 1, 1) != axis_quad(0, 0, 1, 1 + 1e-12)

    def test_point_rejects_nan(self):
        with pytest.raises(NonFinite):
            Point2(math.nan, 0.0)


class TestRotatedBox:
    def test_swaps_to_keep_long_edge(self):
        b = RotatedBox(0, 0, 2, 4, 0.0)
        assert (b.w, b.h) == (4, 2)
        assert b.theta == pytest.approx(math.pi / 2)

    def test_square_prefers_small_angle(self):
        b = RotatedBox(0, 0, 3, 3, 1.2)
        assert b.theta == pytest.approx(1.2 - math.pi / 2)
        assert RotatedBox(0, 0, 3, 3, -math.pi / 4).theta == pytest.approx(math.pi / 4)

    @pytest.mark.parametrize("w,h", [(0, 1), (1, -2)])
    def test_rejects_non_positive_size(self, w, h):
        with pytest.raises(DegenerateBox):
            RotatedBox(0, 0, w, h, 0.0)


class TestQuadFromRbox:
    def test_corner_order_tl_tr_br_bl(self):
        q = quad_from_rbox(RotatedBox(0, 0, 4, 2, 0.0))
        np.testing.assert_allclose(q.points, [[-2, -1], [2, -1], [2, 1], [-2, 1]])

    def test_positive_angle_is_clockwise_on_screen(self):
        q = quad_from_rbox(RotatedBox(0, 0, 4, 2, math.pi / 2))
        # 長邊轉成垂直，原本的左上角跑到右上
        np.testing.assert_allclose(q.points[0], [1, -2], atol=1e-12)

    def test_area_matches(self, rng):
        for _ in range(100):
            b = random_box(rng)
            assert quad_area(quad_from_rbox(b)) == pytest.approx(b.w * b.h, rel=1e-9)


class TestRboxFromQuad:
    def test_roundtrip(self, rng):
        for _ in range(1000):
            b = random_box(rng)
            if abs(b.w - b.h) < 1e-3 * b.w:
                continue
            back = rbox_from_quad(quad_from_rbox(b))
            assert back.cx == pytest.approx(b.cx, abs=1e-9)
            assert back.cy == pytest.approx(b.cy, abs=1e-9)
            assert back.w == pytest.approx(b.w, rel=1e-9)
            assert back.h == pytest.approx(b.h, rel=1e-9)
            assert angle_distance(back.theta, b.theta) < 1e-9

    def test_square_is_canonical(self):
        b = rbox_from_quad(quad_from_rbox(RotatedBox(1, 2, 5, 5, 0.3)))
        assert b.w == pytest.approx(5) and b.h == pytest.approx(5)
        assert b.theta == pytest.approx(0.3)

    def test_degenerate_edge(self):
        with pytest.raises(DegenerateQuad):
            rbox_from_quad(Quad([0, 0, 0, 0, 1, 1, 0, 1]))

    def test_tolerance_rejects_trapezoid(self):
        trapezoid = Quad([0, 0, 10, 0, 8, 4, 2, 4])
        rbox_from_quad(trapezoid)
        with pytest.raises(DegenerateQuad):
            rbox_from_quad(trapezoid, tolerance=0.01)


class TestNormalizeQuad:
    def test_reverses_negative_orientation(self):
        q = normalize_quad(Quad(axis_quad(0, 0, 2, 1).points[::-1]))
        assert q.signed_area() == pytest.approx(2.0)

    def test_untangles_bow_tie(self):
        bow_tie = Quad([0, 0, 2, 1, 2, 0, 0, 1])
        q = normalize_quad(bow_tie)
        assert q.signed_area() == pytest.approx(2.0)

    def test_rejects_concave(self):
        with pytest.raises(NonConvexQuad):
            normalize_quad(Quad([0, 0, 4, 0, 1, 1, 0, 4]))


class TestIntersection:
    def test_identical_quads(self, rng):
        for _ in range(50):
            q = quad_from_rbox(random_box(rng))
            assert polygon_intersection_area(q, q) == quad_area(q)
            assert iou(q, q) == 1.0

    def test_disjoint(self):
        assert iou(axis_quad(0, 0, 1, 1), axis_quad(5, 5, 6, 6)) == 0.0

    def test_half_overlap(self):
        assert iou(axis_quad(0, 0, 2, 1), axis_quad(1, 0, 3, 1)) == pytest.approx(1 / 3)

    def test_containment(self):
        assert iou(axis_quad(0, 0, 4, 4), axis_quad(1, 1, 3, 3)) == pytest.approx(0.25)

    def test_orientation_does_not_matter(self):
        a, b = axis_quad(0, 0, 2, 2), axis_quad(1, 1, 3, 3)
        assert iou(a, Quad(b.points[::-1])) == pytest.approx(iou(a, b))

    def test_degenerate_pair(self):
        line = Quad([0, 0, 1, 0, 1, 0, 0, 0])
        assert iou(line, line) == 0.0

    @settings(max_examples=200, deadline=None)
    @given(rotated_boxes(extent=50.0), rotated_boxes(extent=50.0))
    def test_symmetric_and_bounded(self, a, b):
        qa, qb = quad_from_rbox(a), quad_from_rbox(b)
        value = iou(qa, qb)
        assert value == iou(qb, qa)
        assert 0.0 <= value <= 1.0

    @settings(max_examples=200, deadline=None)
    @given(
        rotated_boxes(extent=50.0),
        rotated_boxes(extent=50.0),
        st.floats(min_value=-math.pi, max_value=math.pi),
        st.floats(min_value=-1e3, max_value=1e3),
        st.floats(min_value=-1e3, max_value=1e3),
    )
    def test_rigid_motion_invariance(self, a, b, phi, tx, ty):
        c, s = math.cos(phi), math.sin(phi)
        rotation = np.array([[c, -s], [s, c]])

        def move(q: Quad) -> Quad:
            return Quad(q.points @ rotation.T + (tx, ty))

        qa, qb = quad_from_rbox(a), quad_from_rbox(b)
        assert iou(move(qa), move(qb)) == pytest.approx(iou(qa, qb), abs=1e-9)

    def test_matches_grid_oracle(self, rng):
        for _ in range(200):
            a = random_box(rng, 20, 100, 40)
            b = random_box(rng, 20, 100, 40)
            qa, qb = quad_from_rbox(a), quad_from_rbox(b)
            assert iou(qa, qb) == pytest.approx(grid_iou(qa, qb), abs=0.01)

    @pytest.mark.slow
    def test_matches_grid_oracle_full_suite(self, rng):
        for _ in range(1000):
            qa = quad_from_rbox(random_box(rng, 20, 100, 40))
            qb = quad_from_rbox(random_box(rng, 20, 100, 40))
            assert iou(qa, qb) == pytest.approx(grid_iou(qa, qb), abs=0.01)


class TestClipPolygon:
    def test_clip_square_by_square(self):
        out = clip_polygon(axis_quad(0, 0, 2, 2).points, axis_quad(1, 1, 3, 3).points)
        assert polygon_area(out) == pytest.approx(1.0)
        np.testing.assert_allclose(out.min(axis=0), [1.0, 1.0])

    def test_disjoint_is_empty(self):
        out = clip_polygon(axis_quad(0, 0, 1, 1).points, axis_quad(2, 2, 3, 3).points)
        assert len(out) == 0
        assert polygon_area(out) == 0.0

    def test_triangle_clip(self):
        triangle = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
        out = clip_polygon(triangle, axis_quad(0, 0, 2, 2).points)
        assert polygon_area(out) == pytest.approx(4.0)


class TestMinAreaRect:
    def test_recovers_rotated_rectangle(self, rng):
        for _ in range(100):
            b = random_box(rng)
            fit = min_area_rect(quad_from_rbox(b).points)
            assert fit.w * fit.h == pytest.approx(b.w * b.h, rel=1e-4)
            assert fit.cx == pytest.approx(b.cx, abs=1e-3)
            assert fit.cy == pytest.approx(b.cy, abs=1e-3)
            if b.w > 1.1 * b.h:
                assert angle_distance(fit.theta, b.theta) < 1e-4

    def test_polygon(self):
        hexagon = np.array([[1, 0], [2, 0], [3, 1], [2, 2], [1, 2], [0, 1]], dtype=float)
        fit = min_area_rect(hexagon)
        # 沿對角邊方向的外接矩形 (3/√2)² 比軸對齊的 3×2 小
        assert fit.w * fit.h == pytest.approx(4.5, rel=1e-5)

    def test_collinear(self):
        with pytest.raises(DegenerateQuad):
            min_area_rect(np.array([[0, 0], [1, 1], [2, 2]], dtype=float))
