"""Numpy reference implementations of the hot kernels.

Every function here has a compiled twin in ``_core.pyx``; the package picks
one at import time (see ``bpjdet.kernels``).  Boxes are ``[cx, cy, w, h]``
float64 arrays throughout.
"""
from __future__ import annotations

import numpy as np

# Saturation bound for decode-side sigmoids.  Keeps decoded quantities inside
# their open intervals even for arbitrarily large raw logits: plain float64
# sigmoid returns exactly 1.0 beyond ~37, which would close the interval.
SIGMOID_EPS = 1e-12


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_saturating(x):
    return np.clip(sigmoid(x), SIGMOID_EPS, 1.0 - SIGMOID_EPS)


def bce_logits(x, t):
    """Elementwise binary cross-entropy between sigmoid(x) and target t.

    Evaluated in the numerically stable logit form
    ``max(x, 0) - x*t + log(1 + exp(-|x|))``.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    return np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))


def _corners(boxes):
    cx, cy, w, h = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    return cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2


def iou_matrix(a, b):
    """Pairwise IoU between two [N,4] / [M,4] center-form box arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax1, ay1, ax2, ay2 = _corners(a)
    bx1, by1, bx2, by2 = _corners(b)
    iw = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(ax1[:, None], bx1[None, :])
    ih = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(ay1[:, None], by1[None, :])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def inner_overlap_matrix(parts, bodies):
    """intersection(part, body) / area(part) for every part/body pair.

    Measures how much of the part lies inside the body (1.0 = contained).
    Zero-area parts score 0 against everything.
    """
    parts = np.asarray(parts, dtype=np.float64).reshape(-1, 4)
    bodies = np.asarray(bodies, dtype=np.float64).reshape(-1, 4)
    px1, py1, px2, py2 = _corners(parts)
    bx1, by1, bx2, by2 = _corners(bodies)
    iw = np.minimum(px2[:, None], bx2[None, :]) - np.maximum(px1[:, None], bx1[None, :])
    ih = np.minimum(py2[:, None], by2[None, :]) - np.maximum(py1[:, None], by1[None, :])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area = ((px2 - px1) * (py2 - py1))[:, None]
    out = np.zeros_like(inter)
    np.divide(inter, np.broadcast_to(area, inter.shape), out=out, where=area > 0)
    return out


def ciou_values(pred, target):
    """Complete IoU for aligned pairs of center-form boxes, shape [N].

    IoU minus the normalized center distance (squared, over the enclosing
    box diagonal) minus the aspect-ratio consistency term.  Aspect angles
    use arctan2 so zero-sized predictions stay finite.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 4)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 4)
    px1, py1, px2, py2 = _corners(pred)
    tx1, ty1, tx2, ty2 = _corners(target)

    iw = np.clip(np.minimum(px2, tx2) - np.maximum(px1, tx1), 0.0, None)
    ih = np.clip(np.minimum(py2, ty2) - np.maximum(py1, ty1), 0.0, None)
    inter = iw * ih
    union = (px2 - px1) * (py2 - py1) + (tx2 - tx1) * (ty2 - ty1) - inter
    iou = np.zeros(len(pred))
    np.divide(inter, union, out=iou, where=union > 0)

    rho2 = (pred[:, 0] - target[:, 0]) ** 2 + (pred[:, 1] - target[:, 1]) ** 2
    cw = np.maximum(px2, tx2) - np.minimum(px1, tx1)
    ch = np.maximum(py2, ty2) - np.minimum(py1, ty1)
    c2 = cw**2 + ch**2
    center_term = np.zeros(len(pred))
    np.divide(rho2, c2, out=center_term, where=c2 > 0)

    v = (4.0 / np.pi**2) * (
        np.arctan2(target[:, 2], target[:, 3]) - np.arctan2(pred[:, 2], pred[:, 3])
    ) ** 2
    denom = (1.0 - iou) + v
    alpha = np.zeros(len(pred))
    np.divide(v, denom, out=alpha, where=denom > 0)
    return iou - center_term - alpha * v


def nms_keep(boxes, scores, iou_thr):
    """Greedy non-maximum suppression.

    Returns the kept indices in descending score order; equal scores break
    toward the lower original index.  A box is suppressed when its IoU with
    an already-kept box strictly exceeds ``iou_thr``.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    n = len(scores)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    order = np.lexsort((np.arange(n), -scores))
    ious = iou_matrix(boxes, boxes)
    keep = []
    alive = np.ones(n, dtype=bool)
    for idx in order:
        if not alive[idx]:
            continue
        keep.append(idx)
        alive &= ious[idx] <= iou_thr
        alive[idx] = False
    return np.asarray(keep, dtype=np.int64)
