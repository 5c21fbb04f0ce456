"""Grid layout, codecs, target assignment, and annotation/grid file IO."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpjdet.geometry import BBox
from bpjdet.representation import (
    ANCHOR_RATIO_LIMIT,
    DEFAULT_ANCHORS,
    Body,
    Dataset,
    GridSpec,
    OrphanPart,
    PartSchema,
    SceneAnnotation,
    assign_targets,
    channels_per_anchor,
    class_channels,
    decode_box,
    decode_box_array,
    decode_offsets,
    encode_box,
    encode_offsets,
    load_dataset,
    load_grids,
    offset_channels,
    offset_targets,
    save_dataset,
    save_grids,
)

SIG = lambda x: 1.0 / (1.0 + math.exp(-x))  # noqa: E731 - scalar oracle


# ---------------------------------------------------------------------------
# Schema and grid plumbing.
# ---------------------------------------------------------------------------


def test_channel_layout_arithmetic():
    for k in (1, 2, 5):
        assert channels_per_anchor(k) == 3 * k + 6
        assert class_channels(k) == slice(5, 6 + k)
        assert offset_channels(k) == slice(6 + k, 6 + 3 * k)


def test_part_schema_basics():
    schema = PartSchema.for_parts("face")
    assert schema.k == 1
    assert schema.num_classes == 2
    assert schema.channels == 9
    assert schema.class_of_slot(0) == 1
    hands = PartSchema.for_parts("left_hand", "right_hand")
    assert hands.k == 2 and hands.channels == 12
    with pytest.raises(ValueError):
        hands.class_of_slot(2)


def test_part_schema_validation():
    with pytest.raises(ValueError):
        PartSchema(("body",))  # no parts
    with pytest.raises(ValueError):
        PartSchema.for_parts("face", "face")  # duplicate


def test_grid_spec_defaults():
    grid = GridSpec(256, 256)
    assert grid.strides == (8, 16, 32, 64)
    assert grid.num_anchors == 3
    assert grid.anchors[64][0] == (142.0 * 1.8, 110.0 * 1.8)
    assert grid.grid_hw(8) == (32, 32)


def test_grid_spec_validation():
    with pytest.raises(ValueError):
        GridSpec(250, 256)  # not divisible by 64
    with pytest.raises(ValueError):
        GridSpec(256, 256, strides=(16, 8))
    with pytest.raises(ValueError):
        GridSpec(256, 256, strides=(8,), anchors={16: ((4.0, 4.0),)})
    with pytest.raises(ValueError):
        GridSpec(256, 256, strides=(8,), anchors={8: ((0.0, 4.0),)})


def test_new_grids_shape_and_init():
    schema = PartSchema.for_parts("face")
    grid = GridSpec(64, 128, strides=(8, 16))
    grids = grid.new_grids(schema, obj_logit=-5.0)
    assert grids[8].shape == (3, 9, 8, 16)
    assert np.all(grids[8][:, 0] == -5.0)
    assert np.all(grids[8][:, 1:] == 0.0)


# ---------------------------------------------------------------------------
# Codecs.
# ---------------------------------------------------------------------------


def test_decode_box_at_zero_logits():
    b = decode_box(np.zeros(4), (16.0, 16.0), 8)
    assert (b.cx, b.cy, b.w, b.h) == (0.5, 0.5, 2.0, 2.0)
    assert b.frame == "grid-units"


def test_decode_box_scalar_oracle():
    # independent scalar evaluation of the decode transform
    raw = np.array([1.2, -0.7, 0.3, -2.1])
    b = decode_box(raw, (32.0, 64.0), 16)
    assert b.cx == pytest.approx(2 * SIG(1.2) - 0.5, abs=1e-12)
    assert b.cy == pytest.approx(2 * SIG(-0.7) - 0.5, abs=1e-12)
    assert b.w == pytest.approx((32 / 16) * (2 * SIG(0.3)) ** 2, abs=1e-12)
    assert b.h == pytest.approx((64 / 16) * (2 * SIG(-2.1)) ** 2, abs=1e-12)
    # frozen values of the same expressions
    assert b.cx == pytest.approx(1.037049566998035, abs=1e-12)
    assert b.h == pytest.approx(0.1904338623198006, abs=1e-12)


def test_decode_box_saturation_bounds():
    lo = decode_box(np.array([-1e6, -1e6, -1e6, -1e6]), (16.0, 16.0), 8)
    hi = decode_box(np.array([1e6, 1e6, 1e6, 1e6]), (16.0, 16.0), 8)
    assert -0.5 < lo.cx < hi.cx < 1.5
    assert 0.0 < lo.w < hi.w < 4.0 * 16.0 / 8.0


def test_decode_offsets_zero_and_oracle():
    assert decode_offsets(np.zeros(2), (32.0, 32.0), 8).tolist() == [[0.0, 0.0]]
    d = decode_offsets(np.array([0.4, -1.1]), (32.0, 32.0), 8)[0]
    assert d[0] == pytest.approx((32 / 8) * (4 * SIG(0.4) - 2), abs=1e-12)
    assert d[1] == pytest.approx((32 / 8) * (4 * SIG(-1.1) - 2), abs=1e-12)
    assert d[0] == pytest.approx(1.579002561799232, abs=1e-12)
    assert d[1] == pytest.approx(-4.004161689521883, abs=1e-12)


def test_decode_offsets_saturation_bounds():
    bound = 2.0 * 32.0 / 8.0
    d = decode_offsets(np.array([1e6, -1e6]), (32.0, 32.0), 8)[0]
    assert -bound < d[1] < 0 < d[0] < bound


def test_encode_box_inverse_of_trivial_decode():
    b = BBox(0.5, 0.5, 19.0 / 8.0, 36.0 / 8.0, "grid-units")
    np.testing.assert_allclose(encode_box(b, (19.0, 36.0), 8), 0.0, atol=1e-12)


def test_encode_box_range_errors():
    anchor = (16.0, 16.0)
    with pytest.raises(ValueError, match="cx"):
        encode_box(BBox(1.5, 0.5, 2.0, 2.0, "grid-units"), anchor, 8)
    with pytest.raises(ValueError, match="w"):
        encode_box(BBox(0.5, 0.5, 8.0, 2.0, "grid-units"), anchor, 8)  # ratio 4 exactly
    with pytest.raises(ValueError, match="frame"):
        encode_box(BBox(0.5, 0.5, 2.0, 2.0), anchor, 8)


def test_encode_offsets_range_errors():
    anchor = (32.0, 32.0)
    with pytest.raises(ValueError, match="dx"):
        encode_offsets([[8.0, 0.0]], anchor, 8)  # exactly +2B/s
    encoded = encode_offsets([[0.0, 0.0]], anchor, 8)
    np.testing.assert_allclose(encoded, 0.0, atol=1e-12)


def test_offset_targets_formula():
    t = offset_targets([[4.0, -4.0]], (32.0, 32.0), 8)[0]
    # d / (B/s) ranges over (-2, 2); targets (d/(B/s) + 2) / 4
    assert t.tolist() == [0.75, 0.25]


@settings(max_examples=300, deadline=None)
@given(
    st.floats(-0.499, 1.499),
    st.floats(-0.499, 1.499),
    st.floats(0.01, 3.99),
    st.floats(0.01, 3.99),
    st.sampled_from([8, 16, 32, 64]),
    st.integers(0, 2),
)
def test_box_roundtrip_property(cx, cy, wr, hr, stride, a_i):
    anchor = DEFAULT_ANCHORS[stride][a_i]
    box = BBox(cx, cy, wr * anchor[0] / stride, hr * anchor[1] / stride, "grid-units")
    back = decode_box(encode_box(box, anchor, stride), anchor, stride)
    for got, want in zip((back.cx, back.cy, back.w, back.h), (box.cx, box.cy, box.w, box.h)):
        assert abs(got - want) < 1e-9


@settings(max_examples=300, deadline=None)
@given(
    st.floats(-1.999, 1.999),
    st.floats(-1.999, 1.999),
    st.sampled_from([8, 16, 32, 64]),
    st.integers(0, 2),
)
def test_offset_roundtrip_property(fx, fy, stride, a_i):
    anchor = DEFAULT_ANCHORS[stride][a_i]
    d = np.array([[fx * anchor[0] / stride, fy * anchor[1] / stride]])
    back = decode_offsets(encode_offsets(d, anchor, stride), anchor, stride)
    np.testing.assert_allclose(back, d, atol=1e-9)


def test_decode_box_array_shape():
    raw = np.zeros((5, 7, 4))
    out = decode_box_array(raw, (16.0, 16.0), 8)
    assert out.shape == (5, 7, 4)
    assert np.all(out[..., 0] == 0.5)


# ---------------------------------------------------------------------------
# Target assignment.
# ---------------------------------------------------------------------------


FACE = PartSchema.for_parts("face")


def one_body_scene_at(cx, cy, w=24.0, h=24.0, part=None):
    parts = (part,) if part is not None else (None,)
    return SceneAnnotation("t", 128, 128, (Body(BBox(cx, cy, w, h), parts),))


def test_assign_centered_body():
    # center exactly on a cell center: single cell, b = (0.5, 0.5, ...)
    grid = GridSpec(128, 128, strides=(8,), anchors={8: ((24.0, 24.0),)})
    scene = one_body_scene_at(44.0, 44.0)
    result = assign_targets(scene, grid, FACE)
    assert result.dropped_offsets == 0
    assert len(result.assignments) == 1
    a = result.assignments[0]
    assert a.cell == (5, 5)
    assert (a.box.cx, a.box.cy) == (0.5, 0.5)
    assert a.box.w == 3.0 and a.class_index == 0 and a.kind == "body"


def test_assign_neighbor_cells_for_fractional_center():
    # fractional center (0.3, 0.8): the left and lower neighbors join in
    grid = GridSpec(128, 128, strides=(8,), anchors={8: ((24.0, 24.0),)})
    scene = one_body_scene_at(42.4, 78.4)  # grid center (5.3, 9.8)
    cells = {a.cell for a in assign_targets(scene, grid, FACE).assignments}
    assert cells == {(5, 9), (4, 9), (5, 10)}


def test_assign_ratio_gate():
    # w is 5x the anchor width: that anchor must not fire
    grid = GridSpec(128, 128, strides=(8,), anchors={8: ((24.0, 24.0), (120.0, 24.0))})
    scene = one_body_scene_at(60.0, 60.0, w=120.0, h=24.0)
    anchors_hit = {a.anchor_index for a in assign_targets(scene, grid, FACE).assignments}
    assert anchors_hit == {1}
    assert 120.0 / 24.0 >= ANCHOR_RATIO_LIMIT


def test_assign_gate_is_strict_at_four():
    grid = GridSpec(128, 128, strides=(8,), anchors={8: ((24.0, 24.0),)})
    scene = one_body_scene_at(60.0, 60.0, w=96.0, h=24.0)  # ratio exactly 4.0
    assert assign_targets(scene, grid, FACE).assignments == ()


def test_assign_parts_and_orphans_become_objects():
    grid = GridSpec(128, 128, strides=(8,), anchors={8: ((24.0, 24.0), (8.0, 8.0))})
    face = BBox(46.0, 40.0, 8.0, 8.0)
    scene = SceneAnnotation(
        "t",
        128,
        128,
        (Body(BBox(44.0, 44.0, 24.0, 24.0), (face,)),),
        (OrphanPart(0, BBox(100.0, 100.0, 8.0, 8.0)),),
    )
    result = assign_targets(scene, grid, FACE)
    kinds = {(a.kind, a.class_index) for a in result.assignments}
    assert ("body", 0) in kinds and ("part", 1) in kinds
    orphan_slots = [a for a in result.assignments if a.kind == "part" and a.cell[0] > 10]
    assert orphan_slots and all(a.visibility.sum() == 0 for a in orphan_slots)
    body_slots = [a for a in result.assignments if a.kind == "body"]
    assert all(a.visibility[0] == 1 for a in body_slots)


def test_assign_offset_targets_point_at_partner():
    grid = GridSpec(128, 128, strides=(8,), anchors={8: ((24.0, 24.0), (8.0, 8.0))})
    face = BBox(46.0, 40.0, 8.0, 8.0)
    body = Body(BBox(44.0, 44.0, 24.0, 24.0), (face,))
    scene = SceneAnnotation("t", 128, 128, (body,))
    for a in assign_targets(scene, grid, FACE).assignments:
        if not a.visibility[0]:
            continue
        anchor = grid.anchors[8][a.anchor_index]
        # invert the stored sigmoid-space target back to a pixel point
        d = (a.offsets[0] * 4.0 - 2.0) * np.array([anchor[0] / 8, anchor[1] / 8])
        px = (a.cell[0] + d[0]) * 8, (a.cell[1] + d[1]) * 8
        want = (face.cx, face.cy) if a.kind == "body" else (body.box.cx, body.box.cy)
        assert px[0] == pytest.approx(want[0], abs=1e-9)
        assert px[1] == pytest.approx(want[1], abs=1e-9)


def test_assign_out_of_range_offset_masked_not_fatal():
    # part center far beyond +-2B/s from the body cell: dropped, not an error
    grid = GridSpec(256, 256, strides=(8,), anchors={8: ((24.0, 24.0), (8.0, 8.0))})
    face = BBox(200.0, 44.0, 8.0, 8.0)
    scene = SceneAnnotation("t", 256, 256, (Body(BBox(44.0, 44.0, 24.0, 24.0), (face,)),))
    result = assign_targets(scene, grid, FACE)
    assert result.dropped_offsets > 0
    body_assignments = [a for a in result.assignments if a.kind == "body"]
    assert body_assignments and all(a.visibility[0] == 0 for a in body_assignments)


def test_assign_slot_contention_keeps_nearer_center():
    grid = GridSpec(128, 128, strides=(8,), anchors={8: ((24.0, 24.0),)})
    # both centers in cell (2,2); the first sits exactly at the cell center
    scene = SceneAnnotation(
        "t",
        128,
        128,
        (
            Body(BBox(20.0, 20.0, 24.0, 24.0), (None,)),
            Body(BBox(22.0, 22.0, 24.0, 24.0), (None,)),
        ),
    )
    result = assign_targets(scene, grid, FACE)
    shared = [a for a in result.assignments if a.cell == (2, 2)]
    assert len(shared) == 1
    assert shared[0].box.cx == 0.5  # the exactly-centered body kept the slot


def test_assign_determinism_and_bounds():
    grid = GridSpec(128, 128)
    face = BBox(46.0, 40.0, 8.0, 8.0)
    scene = SceneAnnotation("t", 128, 128, (Body(BBox(44.0, 44.0, 24.0, 24.0), (face,)),))
    r1 = assign_targets(scene, grid, FACE)
    r2 = assign_targets(scene, grid, FACE)
    assert len(r1.assignments) == len(r2.assignments)
    per_object_cap = 3 * grid.num_anchors * len(grid.strides)
    assert 0 < len(r1.assignments) <= 2 * per_object_cap  # 2 objects in the scene
    for a, b in zip(r1.assignments, r2.assignments):
        assert (a.stride, a.anchor_index, a.cell) == (b.stride, b.anchor_index, b.cell)
        np.testing.assert_array_equal(a.offsets, b.offsets)
        gh, gw = grid.grid_hw(a.stride)
        assert 0 <= a.cell[0] < gw and 0 <= a.cell[1] < gh


def test_assignment_box_is_cell_relative():
    grid = GridSpec(128, 128)
    face = BBox(46.0, 40.0, 8.0, 8.0)
    scene = SceneAnnotation("t", 128, 128, (Body(BBox(44.0, 44.0, 24.0, 24.0), (face,)),))
    for a in assign_targets(scene, grid, FACE).assignments:
        absolute = ((a.cell[0] + a.box.cx) * a.stride, (a.cell[1] + a.box.cy) * a.stride)
        if a.kind == "body":
            assert absolute == pytest.approx((44.0, 44.0))
        else:
            assert absolute == pytest.approx((46.0, 40.0))


# ---------------------------------------------------------------------------
# File IO.
# ---------------------------------------------------------------------------


def test_dataset_roundtrip(tmp_path):
    schema = PartSchema.for_parts("left_hand", "right_hand")
    body = Body(BBox(50.0, 60.0, 30.0, 40.0), (BBox(42.0, 55.0, 8.0, 8.0), None))
    scene = SceneAnnotation(
        "img-0", 128, 128, (body,), (OrphanPart(1, BBox(100.0, 20.0, 9.0, 9.0)),)
    )
    path = tmp_path / "ann.json"
    save_dataset(path, Dataset(schema, (scene,)))
    loaded = load_dataset(path)
    assert loaded.schema == schema
    img = loaded.images[0]
    assert img.image_id == "img-0"
    assert img.bodies[0].box == body.box
    assert img.bodies[0].parts[0] == body.parts[0]
    assert img.bodies[0].parts[1] is None
    assert img.orphans[0].slot == 1


def test_dataset_load_validation(tmp_path):
    import json

    base = {
        "schema": {"k": 1, "parts": ["face"]},
        "images": [
            {
                "id": "x",
                "width": 64,
                "height": 64,
                "bodies": [
                    {
                        "box": [30, 30, 20, 20],
                        "parts": [
                            {"slot": 0, "box": [28, 26, 6, 6]},
                            {"slot": 0, "box": [32, 26, 6, 6]},
                        ],
                    }
                ],
            }
        ],
    }
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(base))
    with pytest.raises(ValueError, match="twice"):
        load_dataset(p)
    base["images"][0]["bodies"][0]["parts"] = [{"slot": 0, "box": [28, 26, 6, 6], "visible": 0}]
    p.write_text(json.dumps(base))
    with pytest.raises(ValueError, match="invisible"):
        load_dataset(p)


def test_dataset_duplicate_image_id_rejected():
    schema = PartSchema.for_parts("face")
    scene = SceneAnnotation("same", 64, 64, ())
    with pytest.raises(ValueError, match="duplicate"):
        Dataset(schema, (scene, scene))


def test_grid_file_roundtrip(tmp_path, rng):
    schema = PartSchema.for_parts("face")
    grid = GridSpec(64, 64, strides=(8, 16))
    grids = {s: rng.normal(0, 5, grid.grid_shape(s, schema)) for s in grid.strides}
    path = tmp_path / "g.bin"
    save_grids(path, grids, schema.k, 64, 64)
    meta, loaded = load_grids(path)
    assert meta == {"k": 1, "image_h": 64, "image_w": 64}
    for s in grid.strides:
        assert loaded[s].dtype == np.float64
        np.testing.assert_allclose(loaded[s], grids[s], rtol=1e-6, atol=1e-5)


def test_grid_file_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(ValueError, match="magic"):
        load_grids(path)
