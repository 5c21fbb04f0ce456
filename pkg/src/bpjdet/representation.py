"""Extended-object target representation.

A detector output grid carries, per anchor and cell, one objectness logit,
four box logits, k+1 class logits (body plus k part categories), and 2k
offset logits pointing from a body to each of its parts (or from a part back
to its body).  This module owns that layout: schemas, the raw<->geometry
codecs, annotation records, and the assignment of annotations to grid slots.

Channel layout per anchor: ``[obj, bx, by, bw, bh, cls_0..cls_k, dx_0, dy_0,
.., dx_{k-1}, dy_{k-1}]`` for a total of 3k+6 channels.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import kernels
from .geometry import BBox

OBJ_CHANNEL = 0
BOX_CHANNELS = slice(1, 5)

# Anchor sizes in pixels, three per stride; the stride-64 row is the
# stride-32 row scaled by 1.8.
DEFAULT_ANCHORS: dict[int, tuple[tuple[float, float], ...]] = {
    8: ((12.0, 16.0), (19.0, 36.0), (40.0, 28.0)),
    16: ((36.0, 75.0), (76.0, 55.0), (72.0, 146.0)),
    32: ((142.0, 110.0), (192.0, 243.0), (459.0, 401.0)),
    64: ((255.6, 198.0), (345.6, 437.4), (826.2, 721.8)),
}

DEFAULT_STRIDES = (8, 16, 32, 64)

# Objects only match an anchor when max(w/Bw, Bw/w, h/Bh, Bh/h) stays below
# this; beyond it the box is not representable within the decode range.
ANCHOR_RATIO_LIMIT = 4.0


def class_channels(k: int) -> slice:
    return slice(5, 6 + k)


def offset_channels(k: int) -> slice:
    return slice(6 + k, 6 + 3 * k)


def channels_per_anchor(k: int) -> int:
    return 3 * k + 6


@dataclass(frozen=True)
class PartSchema:
    """Category layout: class 0 is the body, class 1+j is part slot j."""

    part_names: tuple[str, ...]
    visibility_required: bool = False

    def __post_init__(self):
        if len(self.part_names) < 2:
            raise ValueError("part_names needs the body name plus at least one part")
        if len(set(self.part_names)) != len(self.part_names):
            raise ValueError(f"duplicate names in {self.part_names}")
        object.__setattr__(self, "part_names", tuple(self.part_names))

    @classmethod
    def for_parts(cls, *parts: str, visibility_required: bool = False) -> "PartSchema":
        return cls(("body",) + tuple(parts), visibility_required)

    @property
    def k(self) -> int:
        return len(self.part_names) - 1

    @property
    def num_classes(self) -> int:
        return len(self.part_names)

    @property
    def channels(self) -> int:
        return channels_per_anchor(self.k)

    def class_of_slot(self, slot: int) -> int:
        if not 0 <= slot < self.k:
            raise ValueError(f"slot {slot} out of range for k={self.k}")
        return 1 + slot


@dataclass(frozen=True)
class GridSpec:
    """Image size plus the stride pyramid and per-stride anchor boxes."""

    image_h: int
    image_w: int
    strides: tuple[int, ...] = DEFAULT_STRIDES
    anchors: Mapping[int, tuple[tuple[float, float], ...]] | None = None

    def __post_init__(self):
        strides = tuple(self.strides)
        if not strides or list(strides) != sorted(set(strides)):
            raise ValueError(f"strides must be strictly increasing, got {self.strides}")
        if any(s <= 0 for s in strides):
            raise ValueError(f"strides must be positive, got {self.strides}")
        object.__setattr__(self, "strides", strides)
        if self.image_h <= 0 or self.image_w <= 0:
            raise ValueError(f"image size must be positive, got {self.image_h}x{self.image_w}")
        top = strides[-1]
        if self.image_h % top or self.image_w % top:
            raise ValueError(
                f"image size {self.image_h}x{self.image_w} not divisible by stride {top}"
            )
        anchors = self.anchors
        if anchors is None:
            if any(s not in DEFAULT_ANCHORS for s in strides):
                raise ValueError(f"no default anchors for strides {strides}")
            anchors = {s: DEFAULT_ANCHORS[s] for s in strides}
        anchors = {int(s): tuple((float(w), float(h)) for w, h in a) for s, a in anchors.items()}
        if set(anchors) != set(strides):
            raise ValueError(f"anchor strides {sorted(anchors)} != strides {strides}")
        counts = {len(a) for a in anchors.values()}
        if len(counts) != 1 or counts == {0}:
            raise ValueError("every stride needs the same non-zero anchor count")
        for s, pairs in anchors.items():
            for w, h in pairs:
                if w <= 0 or h <= 0:
                    raise ValueError(f"anchor ({w}, {h}) at stride {s} must be positive")
        object.__setattr__(self, "anchors", anchors)

    @property
    def num_anchors(self) -> int:
        return len(next(iter(self.anchors.values())))

    def grid_hw(self, stride: int) -> tuple[int, int]:
        return self.image_h // stride, self.image_w // stride

    def grid_shape(self, stride: int, schema: PartSchema) -> tuple[int, int, int, int]:
        h, w = self.grid_hw(stride)
        return self.num_anchors, schema.channels, h, w

    def new_grids(self, schema: PartSchema, obj_logit: float = 0.0) -> dict[int, np.ndarray]:
        grids = {}
        for s in self.strides:
            g = np.zeros(self.grid_shape(s, schema), dtype=np.float64)
            g[:, OBJ_CHANNEL] = obj_logit
            grids[s] = g
        return grids


# ---------------------------------------------------------------------------
# Raw <-> geometry codecs.
#
# Box decode, cell-relative grid units: centers 2*sig(x)-0.5 in (-0.5, 1.5),
# sides (B/s)*(2*sig(x))^2 in (0, 4B/s).  Offset decode: (B/s)*(4*sig(x)-2)
# in (-2B/s, 2B/s).  The sigmoids saturate at 1e-12 from either end so the
# open bounds hold for any finite raw input; encode is the exact inverse via
# the logit and rejects values outside the open intervals.
# ---------------------------------------------------------------------------


def _logit(t: np.ndarray) -> np.ndarray:
    return np.log(t) - np.log1p(-t)


def decode_box_array(raw, anchor: tuple[float, float], stride: int) -> np.ndarray:
    """Vectorized box decode, raw (..., 4) logits -> (..., 4) grid units."""
    raw = np.asarray(raw, dtype=np.float64)
    s = kernels.sigmoid_saturating(raw)
    out = np.empty_like(s)
    out[..., 0] = 2.0 * s[..., 0] - 0.5
    out[..., 1] = 2.0 * s[..., 1] - 0.5
    out[..., 2] = (anchor[0] / stride) * (2.0 * s[..., 2]) ** 2
    out[..., 3] = (anchor[1] / stride) * (2.0 * s[..., 3]) ** 2
    return out


def decode_box(raw, anchor: tuple[float, float], stride: int) -> BBox:
    """Decode one box; the result is cell-relative, in grid units."""
    raw = np.asarray(raw, dtype=np.float64).reshape(4)
    b = decode_box_array(raw, anchor, stride)
    return BBox(float(b[0]), float(b[1]), float(b[2]), float(b[3]), "grid-units")


def encode_box(box: BBox, anchor: tuple[float, float], stride: int) -> np.ndarray:
    """Exact inverse of decode_box; raises on values outside the open ranges."""
    if box.frame != "grid-units":
        raise ValueError(f"encode_box expects a grid-units box, got frame {box.frame!r}")
    for name, value in (("cx", box.cx), ("cy", box.cy)):
        if not -0.5 < value < 1.5:
            raise ValueError(f"{name}={value} outside the encodable open interval (-0.5, 1.5)")
    ratios = []
    for name, value, a in (("w", box.w, anchor[0]), ("h", box.h, anchor[1])):
        r = value / (a / stride)
        if not 0.0 < r < 4.0:
            raise ValueError(
                f"{name}={value} is {r} times the anchor side {a}/{stride}; "
                f"the encodable ratio interval is (0, 4)"
            )
        ratios.append(r)
    t = np.array(
        [
            (box.cx + 0.5) / 2.0,
            (box.cy + 0.5) / 2.0,
            np.sqrt(ratios[0]) / 2.0,
            np.sqrt(ratios[1]) / 2.0,
        ]
    )
    return _logit(t)


def decode_offsets_array(raw, anchor: tuple[float, float], stride: int) -> np.ndarray:
    """Vectorized offset decode, raw (..., 2k) logits -> (..., k, 2) grid units."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] % 2:
        raise ValueError(f"offset channels must come in (dx, dy) pairs, got {raw.shape[-1]}")
    s = kernels.sigmoid_saturating(raw).reshape(raw.shape[:-1] + (raw.shape[-1] // 2, 2))
    bound = np.array([anchor[0] / stride, anchor[1] / stride])
    return bound * (4.0 * s - 2.0)


def decode_offsets(raw, anchor: tuple[float, float], stride: int) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64).reshape(-1)
    return decode_offsets_array(raw, anchor, stride)


def encode_offsets(offsets, anchor: tuple[float, float], stride: int) -> np.ndarray:
    """Inverse of decode_offsets for a (k, 2) displacement array."""
    offsets = np.asarray(offsets, dtype=np.float64).reshape(-1, 2)
    bound = np.array([anchor[0] / stride, anchor[1] / stride])
    t = (offsets / bound + 2.0) / 4.0
    bad = np.argwhere((t <= 0.0) | (t >= 1.0))
    if len(bad):
        slot, comp = bad[0]
        axis = "dx" if comp == 0 else "dy"
        limit = bound[comp]
        raise ValueError(
            f"offset {axis}={offsets[slot, comp]} for slot {slot} outside the open "
            f"interval (-2*{limit}, 2*{limit})"
        )
    return _logit(t).reshape(-1)


def offset_targets(offsets, anchor: tuple[float, float], stride: int) -> np.ndarray:
    """Sigmoid-space targets in (0, 1) for a (k, 2) displacement array."""
    offsets = np.asarray(offsets, dtype=np.float64).reshape(-1, 2)
    bound = np.array([anchor[0] / stride, anchor[1] / stride])
    return (offsets / bound + 2.0) / 4.0


# ---------------------------------------------------------------------------
# Annotations.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Body:
    """A body box with per-slot part boxes; None marks an invisible slot."""

    box: BBox
    parts: tuple[BBox | None, ...]

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))

    def visible_slots(self) -> list[int]:
        return [j for j, p in enumerate(self.parts) if p is not None]


@dataclass(frozen=True)
class OrphanPart:
    """A part with no affiliated body in the image."""

    slot: int
    box: BBox


@dataclass(frozen=True)
class SceneAnnotation:
    image_id: str
    width: int
    height: int
    bodies: tuple[Body, ...]
    orphans: tuple[OrphanPart, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "bodies", tuple(self.bodies))
        object.__setattr__(self, "orphans", tuple(self.orphans))


@dataclass(frozen=True)
class Dataset:
    schema: PartSchema
    images: tuple[SceneAnnotation, ...]

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        k = self.schema.k
        seen = set()
        for img in self.images:
            if img.image_id in seen:
                raise ValueError(f"duplicate image id {img.image_id!r}")
            seen.add(img.image_id)
            for body in img.bodies:
                if len(body.parts) != k:
                    raise ValueError(
                        f"body in {img.image_id!r} has {len(body.parts)} part slots, schema has {k}"
                    )
                if self.schema.visibility_required and body.visible_slots() != list(range(k)):
                    raise ValueError(f"schema requires all parts visible in {img.image_id!r}")
            for orphan in img.orphans:
                if not 0 <= orphan.slot < k:
                    raise ValueError(f"orphan slot {orphan.slot} out of range for k={k}")


def _box_to_json(box: BBox) -> list[float]:
    return [box.cx, box.cy, box.w, box.h]


def save_dataset(path, dataset: Dataset):
    doc = {
        "schema": {"k": dataset.schema.k, "parts": list(dataset.schema.part_names[1:])},
        "images": [
            {
                "id": img.image_id,
                "width": img.width,
                "height": img.height,
                "bodies": [
                    {
                        "box": _box_to_json(body.box),
                        "parts": [
                            {"slot": j, "box": _box_to_json(p), "visible": 1}
                            for j, p in enumerate(body.parts)
                            if p is not None
                        ],
                    }
                    for body in img.bodies
                ],
                "orphan_parts": [
                    {"slot": o.slot, "box": _box_to_json(o.box)} for o in img.orphans
                ],
            }
            for img in dataset.images
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)


def _box_from_json(entry, width, height, where) -> BBox:
    if not isinstance(entry, (list, tuple)) or len(entry) != 4:
        raise ValueError(f"{where}: box must be [cx, cy, w, h], got {entry!r}")
    return BBox(*(float(v) for v in entry)).clipped(width, height)


def load_dataset(path) -> Dataset:
    """Load an annotation file, clipping boxes to image bounds.

    Visibility is validated: a part entry must carry a box, and a slot may
    appear at most once per body.  Slots without an entry are invisible.
    """
    with open(path) as f:
        doc = json.load(f)
    schema_doc = doc["schema"]
    parts = tuple(str(p) for p in schema_doc["parts"])
    if len(parts) != int(schema_doc["k"]):
        raise ValueError(f"schema lists {len(parts)} parts but k={schema_doc['k']}")
    schema = PartSchema.for_parts(*parts)
    images = []
    for img in doc["images"]:
        width, height = int(img["width"]), int(img["height"])
        where = f"image {img['id']!r}"
        bodies = []
        for b_i, body_doc in enumerate(img.get("bodies", [])):
            slots: list[BBox | None] = [None] * schema.k
            for part_doc in body_doc.get("parts", []):
                slot = int(part_doc["slot"])
                if not 0 <= slot < schema.k:
                    raise ValueError(f"{where}: part slot {slot} out of range for k={schema.k}")
                if not int(part_doc.get("visible", 1)):
                    if "box" in part_doc and part_doc["box"] is not None:
                        raise ValueError(f"{where}: invisible slot {slot} must not carry a box")
                    continue
                if slots[slot] is not None:
                    raise ValueError(f"{where}: body {b_i} lists slot {slot} twice")
                slots[slot] = _box_from_json(part_doc["box"], width, height, where)
            bodies.append(Body(_box_from_json(body_doc["box"], width, height, where), tuple(slots)))
        orphans = tuple(
            OrphanPart(int(o["slot"]), _box_from_json(o["box"], width, height, where))
            for o in img.get("orphan_parts", [])
        )
        images.append(SceneAnnotation(str(img["id"]), width, height, tuple(bodies), orphans))
    return Dataset(schema, tuple(images))


# ---------------------------------------------------------------------------
# Target assignment.
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TargetAssignment:
    """One positive grid slot: where it lives and what it must regress to.

    ``box`` is cell-relative in grid units.  ``offsets`` holds sigmoid-space
    targets in (0, 1), zeros where ``visibility`` is 0.
    """

    stride: int
    anchor_index: int
    cell: tuple[int, int]  # (x, y)
    box: BBox
    class_index: int
    offsets: np.ndarray  # [k, 2]
    visibility: np.ndarray  # [k]
    kind: str  # "body" or "part"
    objectness: float = 1.0


@dataclass(frozen=True)
class AssignmentResult:
    assignments: tuple[TargetAssignment, ...]
    dropped_offsets: int


def _neighbor_cells(cxg: float, cyg: float, gw: int, gh: int) -> list[tuple[int, int]]:
    x, y = int(cxg), int(cyg)
    cells = [(x, y)]
    fx, fy = cxg - x, cyg - y
    if fx < 0.5 and x - 1 >= 0:
        cells.append((x - 1, y))
    elif fx > 0.5 and x + 1 < gw:
        cells.append((x + 1, y))
    if fy < 0.5 and y - 1 >= 0:
        cells.append((x, y - 1))
    elif fy > 0.5 and y + 1 < gh:
        cells.append((x, y + 1))
    return cells


def assign_targets(
    scene: SceneAnnotation, grid: GridSpec, schema: PartSchema
) -> AssignmentResult:
    """Map annotated objects onto positive grid slots.

    Every body and every visible part becomes its own object with its own
    class.  An object lands on a stride/anchor when the side ratios stay
    under ANCHOR_RATIO_LIMIT, in its center cell plus up to two neighbor
    cells chosen by the fractional center position.  Offset targets that
    fall outside the encodable open range are masked invisible and counted.

    When two objects claim the same (stride, anchor, cell) slot, the one
    whose center is nearer the cell center keeps it; ties go to the earlier
    object (bodies first, then parts in body order and slot order, then
    orphans).  Without this rule a slot would carry two conflicting targets
    and no grid could reach the loss zero floor.
    """
    k = schema.k
    entries = []  # (kind, class_index, box, offset_points: list[point|None])
    for body in scene.bodies:
        points = [
            (p.cx, p.cy) if p is not None else None for p in body.parts
        ]
        entries.append(("body", 0, body.box, points))
    for body in scene.bodies:
        for j, part in enumerate(body.parts):
            if part is None:
                continue
            points = [None] * k
            points[j] = (body.box.cx, body.box.cy)
            entries.append(("part", schema.class_of_slot(j), part, points))
    for orphan in scene.orphans:
        entries.append(("part", schema.class_of_slot(orphan.slot), orphan.box, [None] * k))

    dropped = 0
    chosen: dict[tuple[int, int, int, int], tuple[float, int, TargetAssignment]] = {}
    for order, (kind, class_index, box, points) in enumerate(entries):
        if box.w <= 0 or box.h <= 0:
            continue
        for stride in grid.strides:
            gh, gw = grid.grid_hw(stride)
            cxg, cyg = box.cx / stride, box.cy / stride
            for a_i, (aw, ah) in enumerate(grid.anchors[stride]):
                ratio = max(box.w / aw, aw / box.w, box.h / ah, ah / box.h)
                if ratio >= ANCHOR_RATIO_LIMIT:
                    continue
                for cx_cell, cy_cell in _neighbor_cells(cxg, cyg, gw, gh):
                    rel = BBox(
                        cxg - cx_cell, cyg - cy_cell, box.w / stride, box.h / stride,
                        "grid-units",
                    )
                    offs = np.zeros((k, 2))
                    vis = np.zeros(k, dtype=np.uint8)
                    for j, point in enumerate(points):
                        if point is None:
                            continue
                        t = offset_targets(
                            [[point[0] / stride - cx_cell, point[1] / stride - cy_cell]],
                            (aw, ah),
                            stride,
                        )[0]
                        if np.all((t > 0.0) & (t < 1.0)):
                            offs[j] = t
                            vis[j] = 1
                        else:
                            dropped += 1
                    assignment = TargetAssignment(
                        stride, a_i, (cx_cell, cy_cell), rel, class_index, offs, vis, kind
                    )
                    dist = (cxg - cx_cell - 0.5) ** 2 + (cyg - cy_cell - 0.5) ** 2
                    key = (stride, a_i, cx_cell, cy_cell)
                    held = chosen.get(key)
                    if held is None or (dist, order) < (held[0], held[1]):
                        chosen[key] = (dist, order, assignment)

    assignments = sorted(
        (entry[2] for entry in chosen.values()),
        key=lambda a: (a.stride, a.anchor_index, a.cell[1], a.cell[0]),
    )
    return AssignmentResult(tuple(assignments), dropped)


# ---------------------------------------------------------------------------
# Grid file IO: float32 little-endian with a small header.
# ---------------------------------------------------------------------------

_GRID_MAGIC = b"BPJG"
_GRID_VERSION = 1


def save_grids(path, grids: Mapping[int, np.ndarray], k: int, image_h: int, image_w: int):
    strides = sorted(grids)
    with open(path, "wb") as f:
        f.write(_GRID_MAGIC)
        f.write(struct.pack("<5I", _GRID_VERSION, k, image_h, image_w, len(strides)))
        for s in strides:
            g = np.ascontiguousarray(grids[s], dtype=np.float32)
            if g.ndim != 4:
                raise ValueError(f"grid for stride {s} must be 4-d, got shape {g.shape}")
            f.write(struct.pack("<5I", s, *g.shape))
            f.write(g.astype("<f4").tobytes())


def load_grids(path) -> tuple[dict, dict[int, np.ndarray]]:
    """Returns ({"k", "image_h", "image_w"}, {stride: float64 grid})."""
    with open(path, "rb") as f:
        if f.read(4) != _GRID_MAGIC:
            raise ValueError(f"{path}: not a grid file (bad magic)")
        version, k, image_h, image_w, n_strides = struct.unpack("<5I", f.read(20))
        if version != _GRID_VERSION:
            raise ValueError(f"{path}: unsupported grid file version {version}")
        grids = {}
        for _ in range(n_strides):
            s, a, c, h, w = struct.unpack("<5I", f.read(20))
            count = a * c * h * w
            data = np.frombuffer(f.read(count * 4), dtype="<f4", count=count)
            grids[s] = data.reshape(a, c, h, w).astype(np.float64)
    meta = {"k": k, "image_h": image_h, "image_w": image_w}
    return meta, grids
