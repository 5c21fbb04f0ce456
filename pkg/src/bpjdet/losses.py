"""Multi-term detection loss over raw grids and its finite-difference gradient.

Four terms, each summed over strides: a complete-IoU box term and a class
BCE term averaged over positive slots, an objectness BCE term averaged over
every slot of the grid (the target at a positive slot is the clamped CIoU of
its decoded box, a quality signal that is held constant under
differentiation), and a squared-distance offset term in sigmoid space over
visible part slots.  The total is batch_size * (alpha*box + beta*obj +
gamma*cls + lam*offsets).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .representation import GridSpec, PartSchema, TargetAssignment

DEFAULT_OBJ_BALANCE = {8: 4.0, 16: 1.0, 32: 0.25, 64: 0.06}

FD_STEP = 1e-4


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.05
    beta: float = 0.7
    gamma: float = 0.3
    lam: float = 0.015
    batch_size: int = 1
    obj_balance: Mapping[int, float] | None = None

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "lam"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")

    def balance(self, stride: int) -> float:
        table = DEFAULT_OBJ_BALANCE if self.obj_balance is None else self.obj_balance
        return float(table.get(stride, 1.0))


@dataclass(frozen=True)
class LossBreakdown:
    box: float
    obj: float
    cls: float
    bpd: float
    total: float
    per_stride: dict[str, dict[int, float]] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "l_box": self.box,
            "l_obj": self.obj,
            "l_cls": self.cls,
            "l_bpd": self.bpd,
            "l_total": self.total,
            "per_stride": {k: {str(s): v for s, v in d.items()} for k, d in self.per_stride.items()},
        }


class _StrideTargets:
    """Positive-slot targets of one stride, unpacked into arrays."""

    def __init__(self, assignments: Sequence[TargetAssignment], k: int):
        n = len(assignments)
        self.n = n
        self.anchor = np.fromiter((a.anchor_index for a in assignments), np.int64, n)
        self.cx = np.fromiter((a.cell[0] for a in assignments), np.int64, n)
        self.cy = np.fromiter((a.cell[1] for a in assignments), np.int64, n)
        self.boxes = (
            np.stack([a.box.as_array() for a in assignments])
            if n
            else np.zeros((0, 4))
        )
        self.class_index = np.fromiter((a.class_index for a in assignments), np.int64, n)
        self.offsets = (
            np.stack([a.offsets for a in assignments]) if n else np.zeros((0, k, 2))
        )
        self.visibility = (
            np.stack([a.visibility for a in assignments]).astype(np.float64)
            if n
            else np.zeros((0, k))
        )


def _group(
    assignments: Sequence[TargetAssignment], grid: GridSpec, schema: PartSchema
) -> dict[int, _StrideTargets]:
    by_stride: dict[int, list[TargetAssignment]] = {s: [] for s in grid.strides}
    for a in assignments:
        if a.stride not in by_stride:
            raise ValueError(f"assignment stride {a.stride} not in grid strides {grid.strides}")
        by_stride[a.stride].append(a)
    return {s: _StrideTargets(lst, schema.k) for s, lst in by_stride.items()}


def _decode_positive_boxes(raw_grid, tg: _StrideTargets, grid: GridSpec, stride: int):
    """Decode the box candidates at the positive slots, [N, 4] grid units."""
    raw = raw_grid[tg.anchor, 1:5, tg.cy, tg.cx]
    s = kernels.sigmoid_saturating(raw)
    dims = np.asarray(grid.anchors[stride], dtype=np.float64)[tg.anchor] / stride
    out = np.empty_like(s)
    out[:, 0] = 2.0 * s[:, 0] - 0.5
    out[:, 1] = 2.0 * s[:, 1] - 0.5
    out[:, 2] = dims[:, 0] * (2.0 * s[:, 2]) ** 2
    out[:, 3] = dims[:, 1] * (2.0 * s[:, 3]) ** 2
    return out


def _positive_ciou(raw_grid, tg: _StrideTargets, grid: GridSpec, stride: int) -> np.ndarray:
    pred = _decode_positive_boxes(raw_grid, tg, grid, stride)
    return kernels.ciou_values(pred, tg.boxes)


def _objectness_targets(raw_grid, tg: _StrideTargets, grid: GridSpec, stride: int, schema):
    """Dense [A, h, w] objectness targets: clamped CIoU at positives, else 0.

    Duplicate claims on a slot resolve to the maximum, which keeps the
    result independent of target order.
    """
    gh, gw = grid.grid_hw(stride)
    target = np.zeros((grid.num_anchors, gh, gw))
    if tg.n:
        q = np.clip(_positive_ciou(raw_grid, tg, grid, stride), 0.0, 1.0)
        np.maximum.at(target, (tg.anchor, tg.cy, tg.cx), q)
    return target


def _per_stride(fn, grid: GridSpec) -> tuple[float, dict[int, float]]:
    detail = {s: float(fn(s)) for s in grid.strides}
    return float(sum(detail.values())), detail


def loss_box(grids, assignments, grid: GridSpec, schema: PartSchema):
    groups = _group(assignments, grid, schema)

    def one(s):
        tg = groups[s]
        if tg.n == 0:
            return 0.0
        return np.mean(1.0 - _positive_ciou(grids[s], tg, grid, s))

    return _per_stride(one, grid)[0]


def loss_obj(grids, assignments, grid: GridSpec, schema: PartSchema, weights: LossWeights):
    groups = _group(assignments, grid, schema)

    def one(s):
        tg = groups[s]
        target = _objectness_targets(grids[s], tg, grid, s, schema)
        return weights.balance(s) * np.mean(kernels.bce_logits(grids[s][:, 0], target))

    return _per_stride(one, grid)[0]


def loss_cls(grids, assignments, grid: GridSpec, schema: PartSchema):
    groups = _group(assignments, grid, schema)
    nc = schema.num_classes

    def one(s):
        tg = groups[s]
        if tg.n == 0:
            return 0.0
        raw = grids[s][tg.anchor, 5 : 5 + nc, tg.cy, tg.cx]
        onehot = np.zeros((tg.n, nc))
        onehot[np.arange(tg.n), tg.class_index] = 1.0
        return np.mean(kernels.bce_logits(raw, onehot))

    return _per_stride(one, grid)[0]


def loss_bpd(grids, assignments, grid: GridSpec, schema: PartSchema):
    """Offset term: squared L2 in sigmoid space, visible slots only."""
    groups = _group(assignments, grid, schema)
    k = schema.k

    def one(s):
        tg = groups[s]
        if tg.n == 0:
            return 0.0
        raw = grids[s][tg.anchor, 6 + k : 6 + 3 * k, tg.cy, tg.cx].reshape(tg.n, k, 2)
        sq = ((kernels.sigmoid(raw) - tg.offsets) ** 2).sum(axis=2)
        return np.mean((sq * tg.visibility).sum(axis=1))

    return _per_stride(one, grid)[0]


def loss_total(grids, assignments, grid: GridSpec, schema: PartSchema, weights: LossWeights):
    """All four terms plus their weighted total, with per-stride detail."""
    groups = _group(assignments, grid, schema)
    k, nc = schema.k, schema.num_classes
    detail: dict[str, dict[int, float]] = {"box": {}, "obj": {}, "cls": {}, "bpd": {}}
    for s in grid.strides:
        tg = groups[s]
        raw_grid = grids[s]
        obj_target = _objectness_targets(raw_grid, tg, grid, s, schema)
        detail["obj"][s] = float(
            weights.balance(s) * np.mean(kernels.bce_logits(raw_grid[:, 0], obj_target))
        )
        if tg.n == 0:
            detail["box"][s] = detail["cls"][s] = detail["bpd"][s] = 0.0
            continue
        detail["box"][s] = float(np.mean(1.0 - _positive_ciou(raw_grid, tg, grid, s)))
        raw_cls = raw_grid[tg.anchor, 5 : 5 + nc, tg.cy, tg.cx]
        onehot = np.zeros((tg.n, nc))
        onehot[np.arange(tg.n), tg.class_index] = 1.0
        detail["cls"][s] = float(np.mean(kernels.bce_logits(raw_cls, onehot)))
        raw_off = raw_grid[tg.anchor, 6 + k : 6 + 3 * k, tg.cy, tg.cx].reshape(tg.n, k, 2)
        sq = ((kernels.sigmoid(raw_off) - tg.offsets) ** 2).sum(axis=2)
        detail["bpd"][s] = float(np.mean((sq * tg.visibility).sum(axis=1)))
    box = sum(detail["box"].values())
    obj = sum(detail["obj"].values())
    cls = sum(detail["cls"].values())
    bpd = sum(detail["bpd"].values())
    total = weights.batch_size * (
        weights.alpha * box + weights.beta * obj + weights.gamma * cls + weights.lam * bpd
    )
    return LossBreakdown(float(box), float(obj), float(cls), float(bpd), float(total), detail)


@dataclass(frozen=True, eq=False)
class SparseGradient:
    """Gradient entries of one stride: coords are (anchor, channel, y, x)."""

    coords: np.ndarray  # [M, 4] int64
    values: np.ndarray  # [M] float64


def grad_total(
    grids,
    assignments,
    grid: GridSpec,
    schema: PartSchema,
    weights: LossWeights,
    h: float = FD_STEP,
    touched_only: bool = False,
    negative_fraction: float = 0.05,
    rng: np.random.Generator | None = None,
) -> dict[int, SparseGradient]:
    """Central finite differences of loss_total over the raw entries it reads.

    The objectness quality targets are computed once from the unperturbed
    grids and held fixed while probing, so each probe only re-evaluates the
    terms that read the perturbed entry; the result matches a full-loss
    difference quotient exactly.  Entries no term reads are absent from the
    output.  With ``touched_only`` the objectness channel is probed only at
    positive slots plus a seeded random fraction of the negatives; terms
    whose weight is exactly 0 are skipped entirely.

    Raises RuntimeError when any probe produces a non-finite value.
    """
    if touched_only and rng is None:
        rng = np.random.default_rng(0)
    groups = _group(assignments, grid, schema)
    k, nc = schema.k, schema.num_classes
    batch = float(weights.batch_size)
    out: dict[int, SparseGradient] = {}
    for s in grid.strides:
        tg = groups[s]
        raw_grid = grids[s]
        a_count, _, gh, gw = raw_grid.shape
        dense = np.zeros_like(raw_grid)
        probed = np.zeros(raw_grid.shape, dtype=bool)

        if weights.beta > 0.0:
            obj_target = _objectness_targets(raw_grid, tg, grid, s, schema)
            if touched_only:
                mask = rng.random(obj_target.shape) < negative_fraction
                if tg.n:
                    mask[tg.anchor, tg.cy, tg.cx] = True
            else:
                mask = np.ones(obj_target.shape, dtype=bool)
            x = raw_grid[:, 0][mask]
            t = obj_target[mask]
            coeff = batch * weights.beta * weights.balance(s) / obj_target.size
            g = coeff * (kernels.bce_logits(x + h, t) - kernels.bce_logits(x - h, t)) / (2 * h)
            dense[:, 0][mask] = g
            probed[:, 0][mask] = True

        if tg.n:
            if weights.alpha > 0.0:
                raw = raw_grid[tg.anchor, 1:5, tg.cy, tg.cx]
                dims = np.asarray(grid.anchors[s], dtype=np.float64)[tg.anchor] / s
                coeff = batch * weights.alpha / tg.n

                def ciou_of(r):
                    sg = kernels.sigmoid_saturating(r)
                    pred = np.empty_like(sg)
                    pred[:, 0] = 2.0 * sg[:, 0] - 0.5
                    pred[:, 1] = 2.0 * sg[:, 1] - 0.5
                    pred[:, 2] = dims[:, 0] * (2.0 * sg[:, 2]) ** 2
                    pred[:, 3] = dims[:, 1] * (2.0 * sg[:, 3]) ** 2
                    return kernels.ciou_values(pred, tg.boxes)

                for ch in range(4):
                    rp, rm = raw.copy(), raw.copy()
                    rp[:, ch] += h
                    rm[:, ch] -= h
                    g = coeff * (ciou_of(rm) - ciou_of(rp)) / (2 * h)
                    np.add.at(dense, (tg.anchor, 1 + ch, tg.cy, tg.cx), g)
                    probed[tg.anchor, 1 + ch, tg.cy, tg.cx] = True

            if weights.gamma > 0.0:
                raw = raw_grid[tg.anchor, 5 : 5 + nc, tg.cy, tg.cx]
                onehot = np.zeros((tg.n, nc))
                onehot[np.arange(tg.n), tg.class_index] = 1.0
                coeff = batch * weights.gamma / (tg.n * nc)
                g = (
                    coeff
                    * (kernels.bce_logits(raw + h, onehot) - kernels.bce_logits(raw - h, onehot))
                    / (2 * h)
                )
                for c in range(nc):
                    np.add.at(dense, (tg.anchor, 5 + c, tg.cy, tg.cx), g[:, c])
                    probed[tg.anchor, 5 + c, tg.cy, tg.cx] = True

            if weights.lam > 0.0:
                raw = raw_grid[tg.anchor, 6 + k : 6 + 3 * k, tg.cy, tg.cx]
                t = tg.offsets.reshape(tg.n, 2 * k)
                vis = np.repeat(tg.visibility, 2, axis=1)
                coeff = batch * weights.lam / tg.n
                g = (
                    coeff
                    * vis
                    * ((kernels.sigmoid(raw + h) - t) ** 2 - (kernels.sigmoid(raw - h) - t) ** 2)
                    / (2 * h)
                )
                for c in range(2 * k):
                    visible = tg.visibility[:, c // 2] > 0
                    if not np.any(visible):
                        continue
                    np.add.at(
                        dense,
                        (tg.anchor[visible], 6 + k + c, tg.cy[visible], tg.cx[visible]),
                        g[visible, c],
                    )
                    probed[tg.anchor[visible], 6 + k + c, tg.cy[visible], tg.cx[visible]] = True

        coords = np.argwhere(probed)
        values = dense[probed]
        if not np.all(np.isfinite(values)):
            bad = coords[~np.isfinite(values)][0]
            raise RuntimeError(
                f"non-finite gradient at stride {s}, entry (anchor={bad[0]}, "
                f"channel={bad[1]}, y={bad[2]}, x={bad[3]})"
            )
        out[s] = SparseGradient(coords.astype(np.int64), values)
    return out


def apply_gradient(grids, grads: Mapping[int, SparseGradient], lr: float):
    """In-place gradient-descent step: grid -= lr * grad at every entry."""
    for s, g in grads.items():
        np.subtract.at(
            grids[s], (g.coords[:, 0], g.coords[:, 1], g.coords[:, 2], g.coords[:, 3]), lr * g.values
        )
