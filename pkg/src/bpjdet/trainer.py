"""Desk-scale trainer: plain gradient descent on the raw grids of one scene.

There is no network here; the raw grid entries themselves are the free
parameters, updated with the finite-difference gradient of the full loss.
That is enough to overfit a single scene and exercise every loss term and
the full decode/associate/evaluate pipeline end to end.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from ._parallel import map_workers
from .association import PredictedScene, Thresholds, run_inference
from .losses import LossBreakdown, LossWeights, apply_gradient, grad_total, loss_total
from .metrics import EvalReport, evaluate
from .representation import Dataset, GridSpec, PartSchema, SceneAnnotation, assign_targets

INIT_OBJ_LOGIT = -5.0


@dataclass(frozen=True)
class TrainConfig:
    """Descent settings.

    The default learning rate is tuned for the bundled five-body fixture.
    Stability bound: below learning rate 25 on that fixture, the total loss
    averaged over consecutive 100-step windows is non-increasing; higher
    rates make the box term limit-cycle hard enough that windowed means can
    tick upward even though the final loss keeps shrinking.  Scenes with
    more positives tolerate more (the per-slot step scales with lr over the
    positive count).
    """

    steps: int = 2000
    learning_rate: float = 20.0
    log_every: int = 50
    negative_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.negative_fraction <= 1.0:
            raise ValueError(f"negative_fraction must lie in [0, 1]")


@dataclass(eq=False)
class OverfitResult:
    grids: dict[int, np.ndarray]
    trace: list[tuple[int, LossBreakdown]]
    report: EvalReport
    prediction: PredictedScene


def overfit(
    scene: SceneAnnotation,
    grid: GridSpec,
    schema: PartSchema,
    weights: LossWeights | None = None,
    train: TrainConfig | None = None,
    thresholds: Thresholds | None = None,
) -> OverfitResult:
    """Fit raw grids to one scene and report how well they decode back.

    Grids start at zero with objectness at -5.  Each step takes one descent
    step on the finite-difference gradient, probing all positive slots plus
    a per-step seeded sample of negative objectness slots.  The trace holds
    the loss breakdown every ``log_every`` steps (before the update) and
    once more after the final step.
    """
    weights = weights or LossWeights()
    train = train or TrainConfig()
    thresholds = thresholds or Thresholds()
    assignments = assign_targets(scene, grid, schema).assignments
    grids = grid.new_grids(schema, obj_logit=INIT_OBJ_LOGIT)
    trace: list[tuple[int, LossBreakdown]] = []
    for step in range(train.steps):
        if step % train.log_every == 0:
            trace.append((step, loss_total(grids, assignments, grid, schema, weights)))
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([train.seed, step])))
        grads = grad_total(
            grids,
            assignments,
            grid,
            schema,
            weights,
            touched_only=True,
            negative_fraction=train.negative_fraction,
            rng=rng,
        )
        apply_gradient(grids, grads, train.learning_rate)
    final = loss_total(grids, assignments, grid, schema, weights)
    if not np.isfinite(final.total):
        raise RuntimeError(f"training diverged: non-finite loss after {train.steps} steps")
    trace.append((train.steps, final))
    inference = run_inference(grids, grid, schema, thresholds)
    prediction = PredictedScene(scene.image_id, inference.bodies, inference.parts)
    report = evaluate([prediction], Dataset(schema, (scene,)))
    return OverfitResult(grids, trace, report, prediction)


def save_trace(path, trace):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "l_box", "l_obj", "l_cls", "l_bpd", "l_total"])
        for step, b in trace:
            writer.writerow([step, b.box, b.obj, b.cls, b.bpd, b.total])


def lambda_sweep(
    scene: SceneAnnotation,
    grid: GridSpec,
    schema: PartSchema,
    lambdas,
    weights: LossWeights | None = None,
    train: TrainConfig | None = None,
    thresholds: Thresholds | None = None,
) -> list[dict]:
    """Re-run overfit at several offset-loss weights; one result row each."""
    weights = weights or LossWeights()

    def one(lam: float) -> dict:
        result = overfit(
            scene, grid, schema, replace(weights, lam=float(lam)), train, thresholds
        )
        final = result.trace[-1][1]
        return {
            "lambda": float(lam),
            "l_box": final.box,
            "l_obj": final.obj,
            "l_cls": final.cls,
            "l_bpd": final.bpd,
            "l_total": final.total,
            "assoc_precision": result.report.assoc_precision,
            "assoc_recall": result.report.assoc_recall,
        }

    return map_workers(one, lambdas)


def save_sweep(path, rows: list[dict]):
    if not rows:
        raise ValueError("empty sweep")
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
