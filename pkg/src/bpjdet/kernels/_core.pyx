# Compiled twins of bpjdet.kernels.fallback.  Semantics must match the
# numpy reference exactly; parity is enforced by tests/test_kernels.py.

import numpy as np

cimport numpy as cnp
from libc.math cimport atan2, exp, fabs, log1p

cnp.import_array()

SIGMOID_EPS = 1e-12

cdef double _SIG_EPS = 1e-12
cdef double _PI = 3.141592653589793


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def sigmoid(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    shape = arr.shape
    cdef double[::1] flat = arr.ravel()
    out = np.empty(flat.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(flat.shape[0]):
        o[i] = _sigmoid(flat[i])
    return out.reshape(shape)


def sigmoid_saturating(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    shape = arr.shape
    cdef double[::1] flat = arr.ravel()
    out = np.empty(flat.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    cdef double s
    for i in range(flat.shape[0]):
        s = _sigmoid(flat[i])
        if s < _SIG_EPS:
            s = _SIG_EPS
        elif s > 1.0 - _SIG_EPS:
            s = 1.0 - _SIG_EPS
        o[i] = s
    return out.reshape(shape)


def bce_logits(x, t):
    x_arr, t_arr = np.broadcast_arrays(
        np.asarray(x, dtype=np.float64), np.asarray(t, dtype=np.float64)
    )
    shape = x_arr.shape
    cdef double[::1] xf = np.ascontiguousarray(x_arr).ravel()
    cdef double[::1] tf = np.ascontiguousarray(t_arr).ravel()
    out = np.empty(xf.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    cdef double xv
    for i in range(xf.shape[0]):
        xv = xf[i]
        o[i] = (xv if xv > 0.0 else 0.0) - xv * tf[i] + log1p(exp(-fabs(xv)))
    return out.reshape(shape)


def iou_matrix(a, b):
    cdef double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0]
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    cdef double ax1, ay1, ax2, ay2, bx1, by1, bx2, by2
    cdef double iw, ih, inter, union, area_a
    for i in range(n):
        ax1 = av[i, 0] - av[i, 2] / 2
        ay1 = av[i, 1] - av[i, 3] / 2
        ax2 = av[i, 0] + av[i, 2] / 2
        ay2 = av[i, 1] + av[i, 3] / 2
        area_a = (ax2 - ax1) * (ay2 - ay1)
        for j in range(m):
            bx1 = bv[j, 0] - bv[j, 2] / 2
            by1 = bv[j, 1] - bv[j, 3] / 2
            bx2 = bv[j, 0] + bv[j, 2] / 2
            by2 = bv[j, 1] + bv[j, 3] / 2
            iw = (ax2 if ax2 < bx2 else bx2) - (ax1 if ax1 > bx1 else bx1)
            ih = (ay2 if ay2 < by2 else by2) - (ay1 if ay1 > by1 else by1)
            if iw < 0.0:
                iw = 0.0
            if ih < 0.0:
                ih = 0.0
            inter = iw * ih
            union = area_a + (bx2 - bx1) * (by2 - by1) - inter
            if union > 0.0:
                o[i, j] = inter / union
    return out


def inner_overlap_matrix(parts, bodies):
    cdef double[:, ::1] pv = np.ascontiguousarray(parts, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] bv = np.ascontiguousarray(bodies, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n = pv.shape[0], m = bv.shape[0]
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    cdef double px1, py1, px2, py2, bx1, by1, bx2, by2
    cdef double iw, ih, area
    for i in range(n):
        px1 = pv[i, 0] - pv[i, 2] / 2
        py1 = pv[i, 1] - pv[i, 3] / 2
        px2 = pv[i, 0] + pv[i, 2] / 2
        py2 = pv[i, 1] + pv[i, 3] / 2
        area = (px2 - px1) * (py2 - py1)
        if area <= 0.0:
            continue
        for j in range(m):
            bx1 = bv[j, 0] - bv[j, 2] / 2
            by1 = bv[j, 1] - bv[j, 3] / 2
            bx2 = bv[j, 0] + bv[j, 2] / 2
            by2 = bv[j, 1] + bv[j, 3] / 2
            iw = (px2 if px2 < bx2 else bx2) - (px1 if px1 > bx1 else bx1)
            ih = (py2 if py2 < by2 else by2) - (py1 if py1 > by1 else by1)
            if iw < 0.0:
                iw = 0.0
            if ih < 0.0:
                ih = 0.0
            o[i, j] = iw * ih / area
    return out


def ciou_values(pred, target):
    cdef double[:, ::1] pv = np.ascontiguousarray(pred, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] tv = np.ascontiguousarray(target, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n = pv.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    cdef double px1, py1, px2, py2, tx1, ty1, tx2, ty2
    cdef double iw, ih, inter, union, iou, rho2, cw, ch, c2
    cdef double center_term, v, denom, alpha, dx, dy
    for i in range(n):
        px1 = pv[i, 0] - pv[i, 2] / 2
        py1 = pv[i, 1] - pv[i, 3] / 2
        px2 = pv[i, 0] + pv[i, 2] / 2
        py2 = pv[i, 1] + pv[i, 3] / 2
        tx1 = tv[i, 0] - tv[i, 2] / 2
        ty1 = tv[i, 1] - tv[i, 3] / 2
        tx2 = tv[i, 0] + tv[i, 2] / 2
        ty2 = tv[i, 1] + tv[i, 3] / 2
        iw = (px2 if px2 < tx2 else tx2) - (px1 if px1 > tx1 else tx1)
        ih = (py2 if py2 < ty2 else ty2) - (py1 if py1 > ty1 else ty1)
        if iw < 0.0:
            iw = 0.0
        if ih < 0.0:
            ih = 0.0
        inter = iw * ih
        union = (px2 - px1) * (py2 - py1) + (tx2 - tx1) * (ty2 - ty1) - inter
        iou = inter / union if union > 0.0 else 0.0
        dx = pv[i, 0] - tv[i, 0]
        dy = pv[i, 1] - tv[i, 1]
        rho2 = dx * dx + dy * dy
        cw = (px2 if px2 > tx2 else tx2) - (px1 if px1 < tx1 else tx1)
        ch = (py2 if py2 > ty2 else ty2) - (py1 if py1 < ty1 else ty1)
        c2 = cw * cw + ch * ch
        center_term = rho2 / c2 if c2 > 0.0 else 0.0
        v = atan2(tv[i, 2], tv[i, 3]) - atan2(pv[i, 2], pv[i, 3])
        v = (4.0 / (_PI * _PI)) * v * v
        denom = (1.0 - iou) + v
        alpha = v / denom if denom > 0.0 else 0.0
        o[i] = iou - center_term - alpha * v
    return out


def nms_keep(boxes, scores, double iou_thr):
    cdef double[:, ::1] bv = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    cdef double[::1] sv = np.ascontiguousarray(scores, dtype=np.float64).reshape(-1)
    cdef Py_ssize_t n = sv.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    order_arr = np.lexsort((np.arange(n), -np.asarray(scores, dtype=np.float64).reshape(-1)))
    cdef long[::1] order = np.ascontiguousarray(order_arr, dtype=np.int64)
    keep_arr = np.empty(n, dtype=np.int64)
    cdef long[::1] keep = keep_arr
    alive_arr = np.ones(n, dtype=np.uint8)
    cdef unsigned char[::1] alive = alive_arr
    cdef Py_ssize_t pos, i, nk = 0
    cdef long idx, j
    cdef double ax1, ay1, ax2, ay2, bx1, by1, bx2, by2
    cdef double iw, ih, inter, union, area_a, iou
    for pos in range(n):
        idx = order[pos]
        if not alive[idx]:
            continue
        keep[nk] = idx
        nk += 1
        alive[idx] = 0
        ax1 = bv[idx, 0] - bv[idx, 2] / 2
        ay1 = bv[idx, 1] - bv[idx, 3] / 2
        ax2 = bv[idx, 0] + bv[idx, 2] / 2
        ay2 = bv[idx, 1] + bv[idx, 3] / 2
        area_a = (ax2 - ax1) * (ay2 - ay1)
        for i in range(n):
            j = i
            if not alive[j]:
                continue
            bx1 = bv[j, 0] - bv[j, 2] / 2
            by1 = bv[j, 1] - bv[j, 3] / 2
            bx2 = bv[j, 0] + bv[j, 2] / 2
            by2 = bv[j, 1] + bv[j, 3] / 2
            iw = (ax2 if ax2 < bx2 else bx2) - (ax1 if ax1 > bx1 else bx1)
            ih = (ay2 if ay2 < by2 else by2) - (ay1 if ay1 > by1 else by1)
            if iw < 0.0:
                iw = 0.0
            if ih < 0.0:
                ih = 0.0
            inter = iw * ih
            union = area_a + (bx2 - bx1) * (by2 - by1) - inter
            iou = inter / union if union > 0.0 else 0.0
            if iou > iou_thr:
                alive[j] = 0
    return keep_arr[:nk].copy()
