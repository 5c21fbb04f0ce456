"""Decoding raw grids into detections: NMS, rescaling, offset association.

Inference walks every stride/anchor/cell, forms one candidate per class
whose confidence (objectness times class score) clears the confidence
threshold, rescales to pixels, then suppresses per class.  Body detections
carry k decoded offset points; association greedily pairs each body slot
with the part detection nearest its offset point, gated by how much of the
part lies inside the body box.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .geometry import BBox
from .representation import GridSpec, PartSchema


@dataclass(frozen=True)
class Thresholds:
    body_conf: float = 0.05
    body_iou: float = 0.6
    part_conf: float = 0.1
    part_iou: float = 0.3
    inner: float = 0.6

    def __post_init__(self):
        for name in ("body_conf", "body_iou", "part_conf", "part_iou", "inner"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} must lie in [0, 1]")

    def conf_for(self, class_index: int) -> float:
        return self.body_conf if class_index == 0 else self.part_conf

    def iou_for(self, class_index: int) -> float:
        return self.body_iou if class_index == 0 else self.part_iou


@dataclass(eq=False)
class Detection:
    """One decoded object in image pixels.

    Bodies (class 0) carry ``offsets``, the k decoded part anchor points,
    and after association ``associated[j]`` holds the index of the part
    detection paired with slot j (None when unpaired).  Part detections
    carry their slot via class_index - 1.
    """

    box: BBox
    score: float
    class_index: int
    offsets: np.ndarray | None = None
    associated: list = field(default_factory=list)

    @property
    def kind(self) -> str:
        return "body" if self.class_index == 0 else "part"

    @property
    def slot(self) -> int:
        if self.class_index == 0:
            raise ValueError("body detections have no part slot")
        return self.class_index - 1


def nms(dets: Sequence[Detection], conf_thr: float, iou_thr: float) -> list[Detection]:
    """Score-filter then greedily suppress; returns survivors by descending
    score, ties broken toward the earlier detection in the input."""
    kept_src = [d for d in dets if d.score >= conf_thr]
    if not kept_src:
        return []
    boxes = np.stack([d.box.as_array() for d in kept_src])
    scores = np.array([d.score for d in kept_src])
    keep = kernels.nms_keep(boxes, scores, iou_thr)
    return [kept_src[i] for i in keep]


def associate(
    bodies: Sequence[Detection], parts: Sequence[Detection], inner_thr: float
) -> list[Detection]:
    """Fill ``associated`` on every body: greedy nearest offset point first.

    A (body, slot, part) candidate exists when the part's slot matches and
    more than ``inner_thr`` of the part's area lies inside the body box.
    Candidates are taken by ascending distance between the body's offset
    point for that slot and the part center; each body slot and each part
    is used at most once.  Ties break toward the earlier body, lower slot,
    then earlier part.
    """
    for body in bodies:
        if body.class_index != 0 or body.offsets is None:
            raise ValueError("associate needs body detections with decoded offset points")
        body.associated = [None] * len(body.offsets)
    if not bodies or not parts:
        return list(bodies)
    inner = kernels.inner_overlap_matrix(
        np.stack([p.box.as_array() for p in parts]),
        np.stack([b.box.as_array() for b in bodies]),
    )
    candidates = []
    for b_i, body in enumerate(bodies):
        for p_i, part in enumerate(parts):
            j = part.slot
            if inner[p_i, b_i] <= inner_thr:
                continue
            dist = math.hypot(
                body.offsets[j][0] - part.box.cx, body.offsets[j][1] - part.box.cy
            )
            candidates.append((dist, b_i, j, p_i))
    candidates.sort()
    used_parts = set()
    for dist, b_i, j, p_i in candidates:
        if p_i in used_parts or bodies[b_i].associated[j] is not None:
            continue
        bodies[b_i].associated[j] = p_i
        used_parts.add(p_i)
    return list(bodies)


def _decode_stride(raw, stride: int, grid: GridSpec, schema: PartSchema, thr: Thresholds):
    """Candidate detections of one stride, already in image pixels.

    Emission order is anchor, then cell row-major; within a cell the body
    candidate precedes the part candidates in slot order.
    """
    k = schema.k
    a_count, channels, gh, gw = raw.shape
    if channels != schema.channels:
        raise ValueError(f"grid has {channels} channels, schema needs {schema.channels}")
    obj = kernels.sigmoid(raw[:, 0])
    cls = kernels.sigmoid(raw[:, 5 : 5 + schema.num_classes])
    ys, xs = np.mgrid[0:gh, 0:gw]
    bodies: list[Detection] = []
    parts: list[list[Detection]] = [[] for _ in range(k)]
    for a_i in range(a_count):
        aw, ah = grid.anchors[stride][a_i]
        sg = kernels.sigmoid_saturating(raw[a_i, 1:5])
        bcx = (2.0 * sg[0] - 0.5 + xs) * stride
        bcy = (2.0 * sg[1] - 0.5 + ys) * stride
        bw = aw * (2.0 * sg[2]) ** 2
        bh = ah * (2.0 * sg[3]) ** 2
        so = kernels.sigmoid_saturating(raw[a_i, 6 + k : 6 + 3 * k])
        px = xs * stride + aw * (4.0 * so[0::2] - 2.0)  # [k, gh, gw]
        py = ys * stride + ah * (4.0 * so[1::2] - 2.0)
        scores = obj[a_i][None] * cls[a_i]  # [num_classes, gh, gw]
        for c in range(schema.num_classes):
            hit = scores[c] >= thr.conf_for(c)
            if not np.any(hit):
                continue
            for y, x in np.argwhere(hit):
                box = BBox(
                    float(bcx[y, x]), float(bcy[y, x]), float(bw[y, x]), float(bh[y, x])
                )
                if c == 0:
                    points = np.stack([px[:, y, x], py[:, y, x]], axis=1)
                    bodies.append(Detection(box, float(scores[c, y, x]), 0, points))
                else:
                    parts[c - 1].append(Detection(box, float(scores[c, y, x]), c))
    return bodies, parts


@dataclass
class InferenceResult:
    bodies: list[Detection]
    parts: list[Detection]


def run_inference(
    grids, grid: GridSpec, schema: PartSchema, thr: Thresholds | None = None
) -> InferenceResult:
    """Raw grids for one image -> associated detections in image pixels.

    Bodies and each part slot are suppressed as separate class pools
    (bodies with the body thresholds, every part slot with the part
    thresholds), then body offset points drive the association.
    """
    thr = thr or Thresholds()
    body_cands: list[Detection] = []
    part_cands: list[list[Detection]] = [[] for _ in range(schema.k)]
    for s in grid.strides:
        if s not in grids:
            raise ValueError(f"missing grid for stride {s}")
        if grids[s].shape != grid.grid_shape(s, schema):
            raise ValueError(
                f"stride {s} grid shape {grids[s].shape} != {grid.grid_shape(s, schema)}"
            )
        b, p = _decode_stride(np.asarray(grids[s], dtype=np.float64), s, grid, schema, thr)
        body_cands.extend(b)
        for j in range(schema.k):
            part_cands[j].extend(p[j])
    bodies = nms(body_cands, thr.body_conf, thr.body_iou)
    parts: list[Detection] = []
    for j in range(schema.k):
        parts.extend(nms(part_cands[j], thr.part_conf, thr.part_iou))
    associate(bodies, parts, thr.inner)
    return InferenceResult(bodies, parts)


# ---------------------------------------------------------------------------
# Prediction dump IO.
# ---------------------------------------------------------------------------


@dataclass
class PredictedScene:
    image_id: str
    bodies: list[Detection]
    parts: list[Detection]


def save_predictions(path, scenes: Sequence[PredictedScene]):
    doc = {
        "images": [
            {
                "id": sc.image_id,
                "bodies": [
                    {
                        "box": [b.box.cx, b.box.cy, b.box.w, b.box.h],
                        "score": b.score,
                        "offsets": [[float(x), float(y)] for x, y in b.offsets],
                        "assoc": list(b.associated),
                    }
                    for b in sc.bodies
                ],
                "parts": [
                    {
                        "slot": p.slot,
                        "box": [p.box.cx, p.box.cy, p.box.w, p.box.h],
                        "score": p.score,
                    }
                    for p in sc.parts
                ],
            }
            for sc in scenes
        ]
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)


def load_predictions(path) -> list[PredictedScene]:
    with open(path) as f:
        doc = json.load(f)
    scenes = []
    for img in doc["images"]:
        parts = [
            Detection(BBox(*p["box"]), float(p["score"]), int(p["slot"]) + 1)
            for p in img.get("parts", [])
        ]
        bodies = []
        for b in img.get("bodies", []):
            det = Detection(
                BBox(*b["box"]),
                float(b["score"]),
                0,
                np.asarray(b["offsets"], dtype=np.float64),
            )
            det.associated = [None if a is None else int(a) for a in b["assoc"]]
            for p_i in det.associated:
                if p_i is not None and not 0 <= p_i < len(parts):
                    raise ValueError(f"image {img['id']!r}: assoc index {p_i} out of range")
            bodies.append(det)
        scenes.append(PredictedScene(str(img["id"]), bodies, parts))
    return scenes
