"""Shared helpers for the test suite."""
from __future__ import annotations

import numpy as np
import pytest

from bpjdet.geometry import BBox


def random_boxes(rng, n, span=100.0, max_side=40.0):
    """[n, 4] center-form float64 boxes with positive sides."""
    cx = rng.uniform(0, span, n)
    cy = rng.uniform(0, span, n)
    w = rng.uniform(0.5, max_side, n)
    h = rng.uniform(0.5, max_side, n)
    return np.stack([cx, cy, w, h], axis=1)


def as_bbox(row, frame="image-pixels") -> BBox:
    return BBox(float(row[0]), float(row[1]), float(row[2]), float(row[3]), frame)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
