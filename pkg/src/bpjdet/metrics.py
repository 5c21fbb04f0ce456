"""Detection and association quality metrics.

Box AP uses all-point interpolation with greedy one-to-one matching in
score order.  Log-average miss rate samples the miss-rate/FPPI curve at the
nine reference points 10^(-2 + k/4), k = 0..8, taking the first operating
point whose FPPI reaches the reference and falling back to the final
(all-detections) point when the curve never gets there; sampled rates are
floored at 1e-10 before the geometric mean.  The paired variant scores each
reference point over GT pairs whose body is matched at that point, missing
a pair when the matched body has no associated part of that slot or the
associated part strays below the IoU threshold.  Conditional accuracy and
joint AP grade part detections by whether their associated body agrees
with the GT pairing.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .geometry import BBox, iou

MR_REFERENCE_FPPI = tuple(10.0 ** (-2.0 + k / 4.0) for k in range(9))
_RATE_FLOOR = 1e-10


@dataclass(frozen=True)
class ScoredBox:
    image_id: str
    box: BBox
    score: float


@dataclass(frozen=True)
class BodyPred:
    """A body detection with its per-slot associated part boxes (None = none)."""

    image_id: str
    box: BBox
    score: float
    parts: tuple


@dataclass(frozen=True)
class PartPred:
    """A part detection with the box of its associated body (None = none)."""

    image_id: str
    slot: int
    box: BBox
    score: float
    body_box: BBox | None


@dataclass(frozen=True)
class GtPair:
    """One visible GT (body, part) pair."""

    image_id: str
    body_index: int
    slot: int
    part_box: BBox
    body_box: BBox


def _sort_by_score(items, score_of):
    return sorted(range(len(items)), key=lambda i: (-score_of(items[i]), i))


def _pick_best(det_box: BBox, pool, used, iou_thr: float):
    """Index of the unmatched pool box with the highest IoU at or above the
    threshold, or None.  Equal IoU goes to the lower index."""
    best, best_iou = None, -1.0
    for g_i, gt_box in enumerate(pool):
        if g_i in used:
            continue
        v = iou(det_box, gt_box)
        if v > best_iou:
            best, best_iou = g_i, v
    if best is not None and best_iou >= iou_thr:
        return best
    return None


def _greedy_match(dets: Sequence[ScoredBox], gts: Mapping[str, Sequence[BBox]], iou_thr: float):
    """Match detections to GTs in score order, one-to-one per image.

    Returns (order, matched) where order is the global score-descending
    index order and matched[i] is the GT index the detection claimed
    (None for a false positive), aligned with the original det list.
    """
    order = _sort_by_score(dets, lambda d: d.score)
    taken: dict[str, set] = {}
    matched: list[int | None] = [None] * len(dets)
    for i in order:
        det = dets[i]
        used = taken.setdefault(det.image_id, set())
        best = _pick_best(det.box, gts.get(det.image_id, ()), used, iou_thr)
        if best is not None:
            used.add(best)
            matched[i] = best
    return order, matched


def voc_ap(
    dets: Sequence[ScoredBox], gts: Mapping[str, Sequence[BBox]], iou_thr: float = 0.5
) -> float:
    """Average precision with all-point interpolation at one IoU threshold."""
    n_gt = sum(len(v) for v in gts.values())
    if n_gt == 0 or not dets:
        return 0.0
    order, matched = _greedy_match(dets, gts, iou_thr)
    tp_cum = fp_cum = 0
    recalls, precisions = [], []
    for i in order:
        if matched[i] is not None:
            tp_cum += 1
        else:
            fp_cum += 1
        recalls.append(tp_cum / n_gt)
        precisions.append(tp_cum / (tp_cum + fp_cum))
    return _all_point_ap(recalls, precisions)


def _all_point_ap(recalls, precisions) -> float:
    mrec = [0.0] + list(recalls) + [1.0]
    mpre = [0.0] + list(precisions) + [0.0]
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    ap = 0.0
    for i in range(1, len(mrec)):
        if mrec[i] != mrec[i - 1]:
            ap += (mrec[i] - mrec[i - 1]) * mpre[i]
    return ap


def _log_average(rates) -> float:
    total = 0.0
    for r in rates:
        total += math.log(max(r, _RATE_FLOOR))
    return 100.0 * math.exp(total / len(rates))


def _sample_at_references(fppi_curve, rate_curve):
    rates = []
    for ref in MR_REFERENCE_FPPI:
        idx = len(fppi_curve) - 1
        for i, f in enumerate(fppi_curve):
            if f >= ref:
                idx = i
                break
        rates.append(rate_curve[idx])
    return rates


def mr2(
    dets: Sequence[ScoredBox],
    gts: Mapping[str, Sequence[BBox]],
    image_count: int,
    iou_thr: float = 0.5,
) -> float:
    """Log-average miss rate over the nine reference FPPI points, in percent."""
    if image_count <= 0:
        raise ValueError(f"image_count must be positive, got {image_count}")
    n_gt = sum(len(v) for v in gts.values())
    if n_gt == 0:
        return 0.0
    if not dets:
        return 100.0
    order, matched = _greedy_match(dets, gts, iou_thr)
    tp_cum = fp_cum = 0
    fppi, miss = [], []
    for i in order:
        if matched[i] is not None:
            tp_cum += 1
        else:
            fp_cum += 1
        fppi.append(fp_cum / image_count)
        miss.append(1.0 - tp_cum / n_gt)
    return _log_average(_sample_at_references(fppi, miss))


def mmr2(
    body_dets: Sequence[BodyPred],
    gt_bodies: Mapping[str, Sequence[BBox]],
    gt_pairs: Sequence[GtPair],
    image_count: int,
    iou_thr: float = 0.5,
) -> float:
    """Paired log-average miss rate, in percent.

    At each reference operating point of the body detector, a GT pair whose
    body is matched counts as missed when the matching detection carries no
    associated part for the pair's slot, or carries one below the IoU
    threshold; pairs whose body is unmatched at that point are not
    considered.  A point with nothing considered scores a full miss.
    """
    if image_count <= 0:
        raise ValueError(f"image_count must be positive, got {image_count}")
    if not body_dets:
        return 100.0
    as_scored = [ScoredBox(d.image_id, d.box, d.score) for d in body_dets]
    order, matched = _greedy_match(as_scored, gt_bodies, iou_thr)
    pair_of = {(p.image_id, p.body_index, p.slot): p for p in gt_pairs}
    fp_cum = 0
    fppi = []
    # considered[r] / missed[r]: pair counts once the first r+1 detections
    # are kept.  Matching is greedy in score order, so the prefix property
    # holds: a pair becomes considered at the rank of its matching det.
    considered_at, missed_at = [], []
    considered = missed = 0
    for i in order:
        gt_index = matched[i]
        if gt_index is None:
            fp_cum += 1
        else:
            det = body_dets[i]
            for slot in range(len(det.parts)):
                pair = pair_of.get((det.image_id, gt_index, slot))
                if pair is None:
                    continue
                considered += 1
                part = det.parts[slot]
                if part is None or iou(part, pair.part_box) < iou_thr:
                    missed += 1
        fppi.append(fp_cum / image_count)
        considered_at.append(considered)
        missed_at.append(missed)
    rate = [m / c if c else 1.0 for m, c in zip(missed_at, considered_at)]
    return _log_average(_sample_at_references(fppi, rate))


def conditional_accuracy(
    part_dets: Sequence[PartPred], gt_pairs: Sequence[GtPair], iou_thr: float = 0.5
) -> float:
    """Percent of part detections matching a GT part whose associated body
    also matches that part's GT body.  Matching runs per image and slot in
    score order; with no matched part detections the accuracy is 0."""
    pools: dict[tuple[str, int], list[GtPair]] = {}
    for p in gt_pairs:
        pools.setdefault((p.image_id, p.slot), []).append(p)
    dets_by_pool: dict[tuple[str, int], list[PartPred]] = {}
    for d in part_dets:
        dets_by_pool.setdefault((d.image_id, d.slot), []).append(d)
    matched = correct = 0
    for key, dets in dets_by_pool.items():
        pairs = pools.get(key, [])
        part_pool = [p.part_box for p in pairs]
        used = set()
        for i in _sort_by_score(dets, lambda d: d.score):
            det = dets[i]
            best = _pick_best(det.box, part_pool, used, iou_thr)
            if best is None:
                continue
            used.add(best)
            matched += 1
            if det.body_box is not None and iou(det.body_box, pairs[best].body_box) >= iou_thr:
                correct += 1
    return 100.0 * correct / matched if matched else 0.0


def joint_ap(
    part_dets: Sequence[PartPred], gt_pairs: Sequence[GtPair], iou_thr: float = 0.5
) -> float:
    """AP over part detections where a true positive must both match a GT
    part box and carry an associated body matching that part's GT body.  A
    detection whose box matches but whose body disagrees is a false
    positive and does not consume the GT pair."""
    n_pairs = len(gt_pairs)
    if n_pairs == 0 or not part_dets:
        return 0.0
    pools: dict[tuple[str, int], list[GtPair]] = {}
    for p in gt_pairs:
        pools.setdefault((p.image_id, p.slot), []).append(p)
    used: dict[tuple[str, int], set] = {}
    tp_cum = fp_cum = 0
    recalls, precisions = [], []
    for i in _sort_by_score(part_dets, lambda d: d.score):
        det = part_dets[i]
        key = (det.image_id, det.slot)
        pairs = pools.get(key, [])
        taken = used.setdefault(key, set())
        best = _pick_best(det.box, [p.part_box for p in pairs], taken, iou_thr)
        ok = (
            best is not None
            and det.body_box is not None
            and iou(det.body_box, pairs[best].body_box) >= iou_thr
        )
        if ok:
            taken.add(best)
            tp_cum += 1
        else:
            fp_cum += 1
        recalls.append(tp_cum / n_pairs)
        precisions.append(tp_cum / (tp_cum + fp_cum))
    return _all_point_ap(recalls, precisions)


def association_pr(
    pred_pairs: Sequence[tuple[int, int, BBox]],
    gt_pairs: Sequence[GtPair],
    body_dets: Sequence[ScoredBox],
    gt_bodies: Mapping[str, Sequence[BBox]],
    iou_thr: float = 0.5,
) -> tuple[float, float]:
    """Precision and recall of predicted (body, slot, part) pairs.

    Each predicted pair is (index into body_dets, slot, part box).  A pair
    is correct when its body detection matched a GT body (greedy, in score
    order) and its part box overlaps that body's GT part for the slot at or
    above the threshold; each GT pair is credited at most once.  With no
    predicted pairs the precision is vacuously 1; with no GT pairs the
    recall is vacuously 1.
    """
    _, matched = _greedy_match(body_dets, gt_bodies, iou_thr)
    pair_of = {(p.image_id, p.body_index, p.slot): p for p in gt_pairs}
    correct = 0
    credited = set()
    for det_index, slot, part_box in pred_pairs:
        gt_index = matched[det_index]
        if gt_index is None:
            continue
        image_id = body_dets[det_index].image_id
        pair = pair_of.get((image_id, gt_index, slot))
        if pair is None:
            continue
        key = (image_id, gt_index, slot)
        if key in credited:
            continue
        if iou(part_box, pair.part_box) >= iou_thr:
            credited.add(key)
            correct += 1
    precision = correct / len(pred_pairs) if pred_pairs else 1.0
    recall = correct / len(gt_pairs) if gt_pairs else 1.0
    return precision, recall


def association_exact(pred_scene, scene, iou_thr: float = 0.5) -> bool:
    """True when a predicted scene reproduces the GT pairing exactly.

    Requires a one-to-one body match, an associated part within the IoU
    threshold at every visible GT slot, no association at invisible slots,
    and no detections beyond the GT object counts.
    """
    bodies = list(pred_scene.bodies)
    parts = list(pred_scene.parts)
    n_gt_parts = sum(len(b.visible_slots()) for b in scene.bodies) + len(scene.orphans)
    if len(bodies) != len(scene.bodies) or len(parts) != n_gt_parts:
        return False
    used = set()
    for det in sorted(bodies, key=lambda d: -d.score):
        best = _pick_best(det.box, [b.box for b in scene.bodies], used, iou_thr)
        if best is None:
            return False
        used.add(best)
        gt = scene.bodies[best]
        for j, gt_part in enumerate(gt.parts):
            p_i = det.associated[j]
            if gt_part is None:
                if p_i is not None:
                    return False
            elif p_i is None or iou(parts[p_i].box, gt_part) < iou_thr:
                return False
    return True


@dataclass(frozen=True)
class EvalReport:
    ap: dict
    mr2: dict
    mmr2: float
    cond_accuracy: float
    joint_ap: float
    assoc_precision: float
    assoc_recall: float
    counts: dict
    config: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "ap": self.ap,
            "mr2": self.mr2,
            "mmr2": self.mmr2,
            "cond_accuracy": self.cond_accuracy,
            "joint_ap": self.joint_ap,
            "assoc_precision": self.assoc_precision,
            "assoc_recall": self.assoc_recall,
            "counts": self.counts,
            "config": self.config,
        }

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.as_dict(), f, indent=1)


def _gt_tables(dataset):
    """GT pools for evaluation: body boxes, per-slot part boxes (orphans
    included for plain detection metrics), and visible pairs (orphans
    excluded: they have no body to associate)."""
    k = dataset.schema.k
    bodies: dict[str, list[BBox]] = {}
    parts_all: dict[str, list[BBox]] = {}
    parts_by_slot: dict[int, dict[str, list[BBox]]] = {j: {} for j in range(k)}
    pairs: list[GtPair] = []
    for img in dataset.images:
        bodies[img.image_id] = [b.box for b in img.bodies]
        pool = parts_all.setdefault(img.image_id, [])
        for b_i, body in enumerate(img.bodies):
            for j, part in enumerate(body.parts):
                if part is None:
                    continue
                pool.append(part)
                parts_by_slot[j].setdefault(img.image_id, []).append(part)
                pairs.append(GtPair(img.image_id, b_i, j, part, body.box))
        for orphan in img.orphans:
            pool.append(orphan.box)
            parts_by_slot[orphan.slot].setdefault(img.image_id, []).append(orphan.box)
    return bodies, parts_all, parts_by_slot, pairs


def evaluate(pred_scenes, dataset, iou_thr: float = 0.5, config: dict | None = None) -> EvalReport:
    """Score a prediction dump against a dataset annotation."""
    known = {img.image_id for img in dataset.images}
    for sc in pred_scenes:
        if sc.image_id not in known:
            raise ValueError(f"predictions reference unknown image {sc.image_id!r}")
    k = dataset.schema.k
    gt_bodies, gt_parts_all, gt_parts_slot, gt_pairs = _gt_tables(dataset)
    image_count = len(dataset.images)

    body_boxes: list[ScoredBox] = []
    body_preds: list[BodyPred] = []
    part_boxes: list[ScoredBox] = []
    part_boxes_slot: dict[int, list[ScoredBox]] = {j: [] for j in range(k)}
    part_preds: list[PartPred] = []
    pred_pairs: list[tuple[int, int, BBox]] = []
    for sc in pred_scenes:
        body_of_part: dict[int, BBox] = {}
        for det in sc.bodies:
            det_index = len(body_boxes)
            assoc_boxes = []
            for j, p_i in enumerate(det.associated):
                if p_i is None:
                    assoc_boxes.append(None)
                else:
                    assoc_boxes.append(sc.parts[p_i].box)
                    body_of_part[p_i] = det.box
                    pred_pairs.append((det_index, j, sc.parts[p_i].box))
            body_boxes.append(ScoredBox(sc.image_id, det.box, det.score))
            body_preds.append(BodyPred(sc.image_id, det.box, det.score, tuple(assoc_boxes)))
        for p_i, det in enumerate(sc.parts):
            part_boxes.append(ScoredBox(sc.image_id, det.box, det.score))
            part_boxes_slot[det.slot].append(ScoredBox(sc.image_id, det.box, det.score))
            part_preds.append(
                PartPred(sc.image_id, det.slot, det.box, det.score, body_of_part.get(p_i))
            )

    ap = {"body": voc_ap(body_boxes, gt_bodies, iou_thr), "parts": voc_ap(part_boxes, gt_parts_all, iou_thr)}
    mr = {
        "body": mr2(body_boxes, gt_bodies, image_count, iou_thr),
        "parts": mr2(part_boxes, gt_parts_all, image_count, iou_thr),
    }
    for j in range(k):
        name = dataset.schema.part_names[1 + j]
        ap[f"part_{j}_{name}"] = voc_ap(part_boxes_slot[j], gt_parts_slot[j], iou_thr)
        mr[f"part_{j}_{name}"] = mr2(part_boxes_slot[j], gt_parts_slot[j], image_count, iou_thr)
    precision, recall = association_pr(pred_pairs, gt_pairs, body_boxes, gt_bodies, iou_thr)
    counts = {
        "images": image_count,
        "gt_bodies": sum(len(v) for v in gt_bodies.values()),
        "gt_parts": sum(len(v) for v in gt_parts_all.values()),
        "gt_pairs": len(gt_pairs),
        "det_bodies": len(body_boxes),
        "det_parts": len(part_boxes),
        "pred_pairs": len(pred_pairs),
    }
    return EvalReport(
        ap=ap,
        mr2=mr,
        mmr2=mmr2(body_preds, gt_bodies, gt_pairs, image_count, iou_thr),
        cond_accuracy=conditional_accuracy(part_preds, gt_pairs, iou_thr),
        joint_ap=joint_ap(part_preds, gt_pairs, iou_thr),
        assoc_precision=precision,
        assoc_recall=recall,
        counts=counts,
        config=config or {},
    )


def save_curves(path, pred_scenes, dataset, iou_thr: float = 0.5):
    """Write precision/recall and FPPI/miss-rate curve points to CSV."""
    gt_bodies, gt_parts_all, _, _ = _gt_tables(dataset)
    image_count = len(dataset.images)
    rows = []

    def add(category, dets, gts):
        n_gt = sum(len(v) for v in gts.values())
        if not dets or n_gt == 0:
            return
        order, matched = _greedy_match(dets, gts, iou_thr)
        tp = fp = 0
        for i in order:
            if matched[i] is not None:
                tp += 1
            else:
                fp += 1
            rows.append(
                {
                    "category": category,
                    "score": dets[i].score,
                    "recall": tp / n_gt,
                    "precision": tp / (tp + fp),
                    "fppi": fp / image_count,
                    "miss_rate": 1.0 - tp / n_gt,
                }
            )

    bodies, parts = [], []
    for sc in pred_scenes:
        bodies += [ScoredBox(sc.image_id, d.box, d.score) for d in sc.bodies]
        parts += [ScoredBox(sc.image_id, d.box, d.score) for d in sc.parts]
    add("body", bodies, gt_bodies)
    add("parts", parts, gt_parts_all)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(
            f, fieldnames=["category", "score", "recall", "precision", "fppi", "miss_rate"]
        )
        writer.writeheader()
        writer.writerows(rows)
