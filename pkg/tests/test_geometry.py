"""Box overlap measures: IoU, complete IoU, containment ratio."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpjdet.geometry import BBox, ciou, inner_overlap, iou

from conftest import as_bbox, random_boxes


def test_bbox_corners_ordered():
    b = BBox(5.0, 3.0, 4.0, 2.0)
    assert b.corners == (3.0, 2.0, 7.0, 4.0)
    assert b.area == 8.0


def test_bbox_rejects_negative_sides():
    with pytest.raises(ValueError):
        BBox(0, 0, -1.0, 2.0)


def test_bbox_from_corners_roundtrip():
    b = BBox(5.0, 3.0, 4.0, 2.0)
    assert BBox.from_corners(*b.corners) == b


def test_bbox_clipped_to_image():
    b = BBox(0.0, 0.0, 10.0, 10.0).clipped(100, 100)
    assert b.corners == (0.0, 0.0, 5.0, 5.0)
    with pytest.raises(ValueError):
        BBox(-50.0, -50.0, 10.0, 10.0).clipped(100, 100)


def test_iou_identical_boxes():
    a = BBox(5, 5, 2, 2)
    assert iou(a, a) == 1.0


def test_iou_disjoint():
    assert iou(BBox(0, 0, 2, 2), BBox(10, 10, 2, 2)) == 0.0


def test_iou_hand_case():
    # intersection 1, union 4 + 4 - 1 = 7
    v = iou(BBox(1, 1, 2, 2), BBox(2, 2, 2, 2))
    assert abs(v - 1.0 / 7.0) < 1e-12


def test_iou_zero_area_union():
    z = BBox(3, 3, 0, 0)
    assert iou(z, z) == 0.0


def test_frame_mismatch_rejected():
    a = BBox(1, 1, 2, 2)
    g = BBox(1, 1, 2, 2, "grid-units")
    for op in (iou, inner_overlap, ciou):
        with pytest.raises(ValueError):
            op(a, g)


def test_ciou_coincident_is_one():
    a = BBox(5, 5, 2, 2)
    assert ciou(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ciou_shifted_below_iou():
    # same shape, different center: aspect term vanishes, center term > 0
    a = BBox(1, 1, 2, 2)
    b = BBox(2, 2, 2, 2)
    assert ciou(a, b) < iou(a, b)


def test_ciou_hand_case():
    # 1/7 - 2/18, aspect term zero for equal aspect ratios
    v = ciou(BBox(1, 1, 2, 2), BBox(2, 2, 2, 2))
    assert v == pytest.approx(0.031746031746031744, abs=1e-12)


def test_ciou_degenerate_target_rejected():
    with pytest.raises(ValueError):
        ciou(BBox(1, 1, 2, 2), BBox(1, 1, 0, 2))


def test_ciou_zero_size_prediction_finite():
    v = ciou(BBox(1, 1, 0, 0), BBox(2, 2, 4, 4))
    assert math.isfinite(v)
    assert v < 0  # no overlap and center penalty


def test_inner_overlap_containment():
    part = BBox(1, 1, 2, 2)
    body = BBox(2, 2, 4, 4)
    assert inner_overlap(part, body) == 1.0


def test_inner_overlap_partial():
    # part [1,3]x[1,3], body [2,6]x[2,6]: intersection 1, part area 4
    part = BBox(2, 2, 2, 2)
    body = BBox(4, 4, 4, 4)
    assert inner_overlap(part, body) == pytest.approx(0.25)


def test_inner_overlap_disjoint():
    assert inner_overlap(BBox(0, 0, 2, 2), BBox(10, 10, 4, 4)) == 0.0


def test_inner_overlap_zero_area_part():
    assert inner_overlap(BBox(3, 3, 0, 0), BBox(3, 3, 4, 4)) == 0.0


def test_iou_symmetric(rng):
    boxes = random_boxes(rng, 40)
    for i in range(0, 40, 2):
        a, b = as_bbox(boxes[i]), as_bbox(boxes[i + 1])
        assert iou(a, b) == pytest.approx(iou(b, a), abs=1e-15)


def test_inner_overlap_at_least_iou(rng):
    boxes = random_boxes(rng, 60)
    for i in range(0, 60, 2):
        p, b = as_bbox(boxes[i]), as_bbox(boxes[i + 1])
        assert inner_overlap(p, b) >= iou(p, b) - 1e-12


coord = st.floats(-50, 50)
side = st.floats(0.1, 30)


@settings(max_examples=200, deadline=None)
@given(coord, coord, side, side, coord, coord, side, side,
       st.floats(0.1, 10), st.floats(-20, 20), st.floats(-20, 20))
def test_overlap_measures_scale_shift_invariant(ax, ay, aw, ah, bx, by, bw, bh, k, dx, dy):
    """Applying one positive scale plus shift to both boxes changes nothing."""
    a, b = BBox(ax, ay, aw, ah), BBox(bx, by, bw, bh)
    a2 = BBox(ax * k + dx, ay * k + dy, aw * k, ah * k)
    b2 = BBox(bx * k + dx, by * k + dy, bw * k, bh * k)
    assert iou(a2, b2) == pytest.approx(iou(a, b), abs=1e-9)
    assert inner_overlap(a2, b2) == pytest.approx(inner_overlap(a, b), abs=1e-9)
    assert ciou(a2, b2) == pytest.approx(ciou(a, b), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(coord, coord, side, side, coord, coord, side, side)
def test_ciou_never_exceeds_iou(ax, ay, aw, ah, bx, by, bw, bh):
    a, b = BBox(ax, ay, aw, ah), BBox(bx, by, bw, bh)
    assert ciou(a, b) <= iou(a, b) + 1e-12
