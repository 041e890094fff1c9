import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import hand_iou, raster_iou
from valid_fusion.geometry import (
    Box2D,
    ImageDims,
    NormalizedBox,
    area,
    denormalize,
    intersection,
    iou,
    normalize,
)

coord = st.floats(min_value=-2000, max_value=2000, allow_nan=False, allow_infinity=False)
extent = st.floats(min_value=0, max_value=800, allow_nan=False, allow_infinity=False)


@st.composite
def boxes(draw, min_extent=0.0):
    x0, y0 = draw(coord), draw(coord)
    w = draw(extent.filter(lambda v: v >= min_extent))
    h = draw(extent.filter(lambda v: v >= min_extent))
    return Box2D(x0, y0, x0 + w, y0 + h)


class TestBox2D:
    def test_rejects_negative_extent(self):
        with pytest.raises(ValueError):
            Box2D(10, 0, 5, 5)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Box2D(0, 0, math.inf, 5)
        with pytest.raises(ValueError):
            Box2D(0, math.nan, 1, 5)

    def test_zero_area_is_legal(self):
        b = Box2D(3, 3, 3, 9)
        assert area(b) == 0.0

    def test_width_height(self):
        b = Box2D(1.5, 2, 4, 10)
        assert (b.width, b.height) == (2.5, 8)


class TestImageDims:
    @pytest.mark.parametrize("w,h", [(0, 375), (1242, -1), (12.5, 375)])
    def test_rejects_bad_dims(self, w, h):
        with pytest.raises(ValueError):
            ImageDims(w, h)


class TestIou:
    def test_half_overlap(self):
        # intersection 50, union 150
        assert iou(Box2D(0, 0, 10, 10), Box2D(5, 0, 15, 10)) == pytest.approx(1 / 3, abs=1e-12)

    def test_disjoint_and_touching(self):
        assert iou(Box2D(0, 0, 10, 10), Box2D(20, 20, 30, 30)) == 0.0
        assert iou(Box2D(0, 0, 10, 10), Box2D(10, 0, 20, 10)) == 0.0

    def test_contained(self):
        assert iou(Box2D(0, 0, 10, 10), Box2D(2, 2, 7, 7)) == pytest.approx(0.25)

    def test_degenerate_is_zero(self):
        z = Box2D(5, 5, 5, 5)
        assert iou(z, z) == 0.0
        assert iou(z, Box2D(0, 0, 10, 10)) == 0.0

    def test_intersection_area(self):
        assert intersection(Box2D(0, 0, 10, 10), Box2D(5, 2, 15, 8)) == 30

    def test_no_inclusive_pixel_convention(self):
        # a 1x1 box at integer corners has area 1, not 4
        assert area(Box2D(0, 0, 1, 1)) == 1.0

    @given(boxes(), boxes())
    def test_symmetric(self, a, b):
        assert iou(a, b) == iou(b, a)

    @given(boxes(), boxes())
    def test_bounded(self, a, b):
        assert 0.0 <= iou(a, b) <= 1.0

    @given(boxes(min_extent=1e-3))
    def test_self_iou_is_one(self, a):
        assert iou(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_matches_oracles_on_integer_boxes(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            a = _int_box(rng)
            b = _int_box(rng)
            got = iou(Box2D(*a), Box2D(*b))
            assert abs(got - hand_iou(a, b)) <= 1e-9
            assert abs(got - raster_iou(a, b)) <= 0.02


def _int_box(rng):
    x0, y0 = rng.integers(0, 60, size=2)
    w, h = rng.integers(1, 40, size=2)
    return (int(x0), int(y0), int(x0 + w), int(y0 + h))


class TestNormalize:
    dims = ImageDims(1242, 375)

    def test_center_form(self):
        n = normalize(Box2D(100, 50, 300, 150), self.dims)
        assert n.as_tuple() == pytest.approx((200 / 1242, 100 / 375, 200 / 1242, 100 / 375))
        assert n.within_image()

    def test_outside_image_flagged(self):
        assert not NormalizedBox(0.99, 0.5, 0.1, 0.1).within_image()

    @given(boxes())
    def test_round_trip(self, b):
        back = denormalize(normalize(b, self.dims), self.dims)
        for got, want in zip(back.as_tuple(), b.as_tuple()):
            assert abs(got - want) <= 1e-9 * max(1.0, abs(want))
