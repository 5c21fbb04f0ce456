"""Kernel dispatch: compiled extension when available, numpy otherwise.

``BPJDET_PURE=1`` in the environment forces the numpy fallback even when the
extension is installed.  ``IMPLEMENTATION`` reports which one is active.
"""
from __future__ import annotations

import os

from . import fallback
from .fallback import SIGMOID_EPS

if os.environ.get("BPJDET_PURE", "0") == "1":
    _impl = fallback
    IMPLEMENTATION = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        IMPLEMENTATION = "compiled"
    except ImportError:
        _impl = fallback
        IMPLEMENTATION = "python"

sigmoid = _impl.sigmoid
sigmoid_saturating = _impl.sigmoid_saturating
bce_logits = _impl.bce_logits
iou_matrix = _impl.iou_matrix
inner_overlap_matrix = _impl.inner_overlap_matrix
ciou_values = _impl.ciou_values
nms_keep = _impl.nms_keep

__all__ = [
    "IMPLEMENTATION",
    "SIGMOID_EPS",
    "bce_logits",
    "ciou_values",
    "fallback",
    "inner_overlap_matrix",
    "iou_matrix",
    "nms_keep",
    "sigmoid",
    "sigmoid_saturating",
]
