import math

import numpy as np
import pytest
from conftest import random_box
from pydantic import ValidationError

from arbitext_utils.anchor_utils import (
    AnchorDelta,
    CircleAnchor,
    GridSpec,
    apply_delta,
    compute_delta,
    decode_circle_anchor,
    encode_circle_anchor,
    vertical_flag,
)
from arbitext_utils.errors import InvalidAnchor, NonFinite, NonPositive, ShapeMismatch
from arbitext_utils.geometry_utils import Quad, RotatedBox, quad_from_rbox

# da 讓 a = (r_a/w)²，dr = 0 時 a ≤ 2r² 成立
DA_SQUARE_SCALE = math.log(1.5 / 48)


def decode_unflipped_p3(c: CircleAnchor) -> Quad:
    """p3 第二分量不取負號的解碼：p3 = (r·cos(α−θ), r·sin(α−θ))。"""
    alpha = 0.5 * math.asin(c.a / (2 * c.r ** 2))
    p2 = (c.r * math.cos(alpha + c.theta), c.r * math.sin(alpha + c.theta))
    p3 = (c.r * math.cos(alpha - c.theta), c.r * math.sin(alpha - c.theta))
    return Quad(np.array([[-p2[0], -p2[1]], [p3[0], p3[1]], [p2[0], p2[1]], [-p3[0], -p3[1]]]) + (c.x, c.y))


# ==================================================================== #
# CircleAnchor / encode / decode
# ==================================================================== #

class TestCircleAnchor:
    """CircleAnchor 建構時的檢查。"""

    def test_rejects_area_larger_than_square(self):
        with pytest.raises(InvalidAnchor):
            CircleAnchor(0, 0, a=2.1, r=1.0)

    def test_accepts_square_limit(self):
        assert CircleAnchor(0, 0, a=2.0, r=1.0).a == 2.0

    @pytest.mark.parametrize("a,r", [(0.0, 1.0), (1.0, 0.0), (-1.0, 2.0)])
    def test_rejects_non_positive(self, a, r):
        with pytest.raises(NonPositive):
            CircleAnchor(0, 0, a=a, r=r)

    def test_rejects_nan(self):
        with pytest.raises(NonFinite):
            CircleAnchor(math.nan, 0, 1.0, 1.0)

    def test_folds_theta(self):
        assert CircleAnchor(0, 0, 1.0, 1.0, theta=math.pi + 0.2).theta == pytest.approx(0.2)


class TestEncode:
    """RotatedBox → CircleAnchor。"""

    def test_axis_aligned(self):
        c = encode_circle_anchor(RotatedBox(0, 0, 4, 2, 0.0))
        assert (c.x, c.y, c.a, c.theta) == (0.0, 0.0, 8.0, 0.0)
        assert c.r == pytest.approx(math.sqrt(5))

    def test_square(self):
        c = encode_circle_anchor(RotatedBox(0, 0, math.sqrt(2), math.sqrt(2), 0.0))
        assert c.a == pytest.approx(2.0)
        assert c.r == pytest.approx(1.0)


class TestDecode:
    """CircleAnchor → Quad。"""

    def test_axis_aligned(self):
        q = decode_circle_anchor(CircleAnchor(0, 0, a=8, r=math.sqrt(5)))
        np.testing.assert_allclose(q.points, [[-2, -1], [2, -1], [2, 1], [-2, 1]], atol=1e-12)

    def test_quarter_turn(self):
        q = decode_circle_anchor(CircleAnchor(0, 0, a=8, r=math.sqrt(5), theta=math.pi / 2))
        # (2, 1) 轉 90° 到 (-1, 2)
        np.testing.assert_allclose(q.points[2], [-1, 2], atol=1e-12)

    def test_matches_rbox_corners(self):
        b = RotatedBox(5, 3, 4, 2, 0.3)
        assert decode_circle_anchor(encode_circle_anchor(b)).allclose(quad_from_rbox(b), atol=1e-9)

    def test_square_limit(self):
        q = decode_circle_anchor(CircleAnchor(0, 0, a=2.0, r=1.0))
        assert q.area() == pytest.approx(2.0)

    def test_roundtrip_10k(self, rng):
        worst = 0.0
        for _ in range(10_000):
            b = random_box(rng)
            q = decode_circle_anchor(encode_circle_anchor(b))
            worst = max(worst, float(np.abs(q.points - quad_from_rbox(b).points).max()))
        assert worst < 1e-6

    def test_unflipped_p3_sign_does_not_roundtrip(self, rng):
        """p3 第二分量不取負號時，旋轉框無法還原。"""
        errors = []
        for _ in range(100):
            b = random_box(rng)
            q = decode_unflipped_p3(encode_circle_anchor(b))
            errors.append(float(np.abs(q.points - quad_from_rbox(b).points).max()))
        assert max(errors) > 1.0


# ==================================================================== #
# grid deltas
# ==================================================================== #

class TestGridSpec:
    def test_anchor_scale(self):
        assert GridSpec(size=48).anchor_scale == pytest.approx(0.03125)

    def test_rejects_zero_size(self):
        with pytest.raises(ValidationError):
            GridSpec(size=0)

    def test_frozen(self):
        g = GridSpec(size=4)
        with pytest.raises(ValidationError):
            g.size = 8


class TestApplyDelta:
    def test_zero_offset_is_cell_center(self):
        c = apply_delta(AnchorDelta(0, 0, DA_SQUARE_SCALE, 0, 0), 3, 7, GridSpec(size=48))
        assert c.x == pytest.approx(7.5 / 48)
        assert c.y == pytest.approx(3.5 / 48)

    def test_zero_radius_delta(self):
        c = apply_delta(AnchorDelta(0, 0, DA_SQUARE_SCALE, 0, 0), 0, 0, GridSpec(size=48))
        assert c.r == pytest.approx(0.03125)
        assert c.a == pytest.approx(0.03125 ** 2)

    def test_all_zero_delta_is_invalid(self):
        # a = r = r_a/w 時 a > 2r²
        with pytest.raises(InvalidAnchor):
            apply_delta(AnchorDelta(0, 0, 0, 0, 0), 0, 0, GridSpec(size=48))

    def test_cell_out_of_range(self):
        with pytest.raises(ShapeMismatch):
            apply_delta(AnchorDelta(0, 0, 0, 0, 0), 48, 0, GridSpec(size=48))

    def test_overflow_is_non_finite(self):
        with pytest.raises(NonFinite):
            apply_delta(AnchorDelta(0, 0, 0, 1e4, 0), 0, 0, GridSpec(size=48))

    def test_theta_is_folded(self):
        c = apply_delta(AnchorDelta(0, 0, -0.5, 0, 2.0), 0, 0, GridSpec(size=4))
        assert c.theta == pytest.approx(2.0 - math.pi)


class TestComputeDelta:
    def test_identity_at_cell_center(self):
        g = GridSpec(size=48)
        anchor = CircleAnchor(10.5 / 48, 4.5 / 48, a=g.anchor_scale ** 2, r=g.anchor_scale)
        d = compute_delta(anchor, 4, 10, g)
        assert d.regression == pytest.approx((0, 0, DA_SQUARE_SCALE, 0, 0), abs=1e-12)

    def test_radius_e(self):
        g = GridSpec(size=48)
        d = compute_delta(CircleAnchor(0.5 / 48, 0.5 / 48, a=g.anchor_scale ** 2, r=math.e * g.anchor_scale), 0, 0, g)
        assert d.dr == pytest.approx(1.0)

    def test_roundtrip(self, rng):
        g = GridSpec(size=12)
        for _ in range(1000):
            b = random_box(rng, 0.01, 0.5, 0.5)
            anchor = encode_circle_anchor(RotatedBox(b.cx + 0.5, b.cy + 0.5, b.w, b.h, b.theta))
            i, j = (int(v) for v in rng.integers(0, g.size, size=2))
            back = apply_delta(compute_delta(anchor, i, j, g), i, j, g)
            assert back.x == pytest.approx(anchor.x, abs=1e-12)
            assert back.y == pytest.approx(anchor.y, abs=1e-12)
            assert back.a == pytest.approx(anchor.a, rel=1e-12)
            assert back.r == pytest.approx(anchor.r, rel=1e-12)
            assert back.theta == anchor.theta


class TestAnchorDelta:
    def test_vertical_from_logits(self):
        assert AnchorDelta(0, 0, 0, 0, 0, vertical_logits=(0.1, 2.0)).vertical == 1
        assert AnchorDelta(0, 0, 0, 0, 0).vertical is None

    def test_rejects_inf(self):
        with pytest.raises(NonFinite):
            AnchorDelta(0, 0, 0, 0, 0, confidence=(math.inf, 0.0))


class TestVerticalFlag:
    @pytest.mark.parametrize(
        "degrees,expected",
        [(0, 0), (30, 0), (-30, 0), (45, 0), (-45, 0), (60, 1), (-60, 1), (90, 1)],
    )
    def test_rule(self, degrees, expected):
        assert vertical_flag(math.radians(degrees)) == expected
