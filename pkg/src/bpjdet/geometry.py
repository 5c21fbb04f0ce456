"""Axis-aligned boxes in center form plus the overlap measures used everywhere.

A box carries the frame it lives in ("image-pixels" or "grid-units") and the
pairwise operations refuse to mix frames; that catches the classic bug of
comparing a stride-normalized box against a pixel box.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from . import kernels

Frame = Literal["image-pixels", "grid-units"]


@dataclass(frozen=True)
class BBox:
    """Center-form box: (cx, cy) center, w/h side lengths, all >= 0."""

    cx: float
    cy: float
    w: float
    h: float
    frame: Frame = "image-pixels"

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise ValueError(f"box sides must be non-negative, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2) with x1 <= x2 and y1 <= y2."""
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )

    @classmethod
    def from_corners(cls, x1, y1, x2, y2, frame: Frame = "image-pixels") -> "BBox":
        return cls((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1, frame)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)

    def scaled(self, factor: float, frame: Frame) -> "BBox":
        return BBox(self.cx * factor, self.cy * factor, self.w * factor, self.h * factor, frame)

    def shifted(self, dx: float, dy: float) -> "BBox":
        return replace(self, cx=self.cx + dx, cy=self.cy + dy)

    def clipped(self, width: float, height: float) -> "BBox":
        x1, y1, x2, y2 = self.corners
        x1, x2 = max(x1, 0.0), min(x2, width)
        y1, y2 = max(y1, 0.0), min(y2, height)
        if x2 < x1 or y2 < y1:
            raise ValueError(f"box {self} lies entirely outside a {width}x{height} image")
        return BBox.from_corners(x1, y1, x2, y2, self.frame)


def _check_frames(a: BBox, b: BBox, op: str):
    if a.frame != b.frame:
        raise ValueError(f"{op} requires boxes in the same frame, got {a.frame!r} vs {b.frame!r}")


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union.  Zero when the union has zero area."""
    _check_frames(a, b, "iou")
    ax1, ay1, ax2, ay2 = a.corners
    bx1, by1, bx2, by2 = b.corners
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def inner_overlap(part: BBox, body: BBox) -> float:
    """intersection(part, body) / area(part): containment of part in body."""
    _check_frames(part, body, "inner_overlap")
    if part.area <= 0:
        return 0.0
    px1, py1, px2, py2 = part.corners
    bx1, by1, bx2, by2 = body.corners
    iw = min(px2, bx2) - max(px1, bx1)
    ih = min(py2, by2) - max(py1, by1)
    return max(iw, 0.0) * max(ih, 0.0) / part.area


def ciou(pred: BBox, target: BBox) -> float:
    """Complete IoU of a predicted box against a positive-area target.

    Equals IoU minus the squared center offset over the enclosing-box
    diagonal minus an aspect-ratio penalty; 1.0 exactly at coincidence.
    """
    _check_frames(pred, target, "ciou")
    if target.w <= 0 or target.h <= 0:
        raise ValueError(f"ciou target must have positive area, got w={target.w}, h={target.h}")
    return float(kernels.ciou_values(pred.as_array()[None], target.as_array()[None])[0])
