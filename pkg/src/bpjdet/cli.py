"""Command line entry points.

    bpjdet simulate --out runs/demo --scenes 8
    bpjdet infer --grids runs/demo/grids --out runs/demo/pred.json
    bpjdet eval --pred runs/demo/pred.json --ann runs/demo/annotation.json \\
        --out runs/demo/report.json
    bpjdet gradcheck --out runs/gradcheck.json
    bpjdet overfit --ann runs/demo/annotation.json --out runs/overfit
    bpjdet sweep --ann runs/demo/annotation.json --lambdas 0,0.005,0.015 \\
        --out runs/sweep

Commands exit 0 on success; on failure they print one JSON object
({"error": <type>, "message": <text>}) to stderr and exit nonzero.
BPJDET_THREADS > 1 parallelizes independent scenes and sweep points.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ._parallel import map_workers
from .association import PredictedScene, load_predictions, run_inference, save_predictions
from .config import RunConfig, load_config
from .losses import grad_total
from .metrics import evaluate, save_curves
from .representation import (
    Dataset,
    assign_targets,
    load_dataset,
    load_grids,
    save_dataset,
    save_grids,
)
from .synthscene import generate_scene, render_perfect_grids
from .trainer import lambda_sweep, overfit, save_sweep, save_trace
from . import kernels


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("usage", f"{self.prog}: {message}", code=2)


def _fail(kind: str, message: str, code: int = 1):
    json.dump({"error": kind, "message": message}, sys.stderr)
    sys.stderr.write("\n")
    raise SystemExit(code)


def _write_json(path, doc):
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)


def cmd_simulate(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene_cfg = cfg.scene if args.seed is None else replace(cfg.scene, seed=args.seed)
    schema = cfg.schema
    grid = cfg.grid_for(scene_cfg.image_h, scene_cfg.image_w)
    seeds = [scene_cfg.seed + i for i in range(args.scenes)]

    def build(seed: int):
        one = replace(scene_cfg, seed=seed)
        scene = generate_scene(one, image_id=f"scene-{seed}")
        grids = render_perfect_grids(scene, grid, schema) if args.grids else None
        return scene, grids

    results = map_workers(build, seeds)
    scenes = [scene for scene, _ in results]
    save_dataset(out / "annotation.json", Dataset(schema, tuple(scenes)))
    if args.grids:
        grid_dir = out / "grids"
        grid_dir.mkdir(exist_ok=True)
        for scene, grids in results:
            save_grids(
                grid_dir / f"{scene.image_id}.bin",
                grids,
                schema.k,
                scene_cfg.image_h,
                scene_cfg.image_w,
            )
    _write_json(out / "config.json", cfg.echo())
    print(f"wrote {len(scenes)} scenes to {out}")
    return 0


def cmd_infer(args, cfg: RunConfig) -> int:
    src = Path(args.grids)
    paths = sorted(src.glob("*.bin")) if src.is_dir() else [src]
    if not paths:
        _fail("input", f"no .bin grid files under {src}")
    schema = cfg.schema

    def infer_one(path: Path) -> PredictedScene:
        meta, grids = load_grids(path)
        if meta["k"] != schema.k:
            raise ValueError(f"{path}: grids were built for k={meta['k']}, config has k={schema.k}")
        grid = cfg.grid_for(meta["image_h"], meta["image_w"])
        result = run_inference(grids, grid, schema, cfg.thresholds)
        return PredictedScene(path.stem, result.bodies, result.parts)

    scenes = map_workers(infer_one, paths)
    save_predictions(args.out, scenes)
    print(f"wrote predictions for {len(scenes)} images to {args.out}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    dataset = load_dataset(args.ann)
    preds = load_predictions(args.pred)
    report = evaluate(preds, dataset, iou_thr=args.iou, config=cfg.echo())
    report.save(args.out)
    if args.curves:
        save_curves(args.curves, preds, dataset, iou_thr=args.iou)
    summary = {k: round(v, 4) for k, v in report.ap.items()}
    print(f"ap={summary} mmr2={report.mmr2:.4f} cond_acc={report.cond_accuracy:.2f}")
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    from .losses import _group, _objectness_targets

    scene_cfg = replace(cfg.scene, seed=args.seed)
    schema = cfg.schema
    grid = cfg.grid_for(scene_cfg.image_h, scene_cfg.image_w)
    scene = generate_scene(scene_cfg)
    assignments = assign_targets(scene, grid, schema).assignments
    rng = np.random.Generator(np.random.PCG64(args.seed))
    grids = {s: rng.normal(0.0, 1.0, grid.grid_shape(s, schema)) for s in grid.strides}
    grads = grad_total(grids, assignments, grid, schema, cfg.weights)
    grouped = _group(assignments, grid, schema)

    checked = 0
    max_rel = 0.0
    for s in grid.strides:
        g = grads[s]
        values = {tuple(c): v for c, v in zip(g.coords.tolist(), g.values)}
        targets = _objectness_targets(grids[s], grouped[s], grid, s, schema)
        gh, gw = grid.grid_hw(s)
        n_slots = grid.num_anchors * gh * gw
        coeff = cfg.weights.batch_size * cfg.weights.beta * cfg.weights.balance(s) / n_slots
        for a in [a for a in assignments if a.stride == s][: args.points]:
            ai, (x, y) = a.anchor_index, a.cell
            # objectness entry: analytic BCE slope is sigmoid(raw) - target,
            # with the frozen quality target recomputed here
            raw = float(grids[s][ai, 0, y, x])
            analytic = coeff * (float(kernels.sigmoid(np.array([raw]))[0]) - targets[ai, y, x])
            fd = values.get((ai, 0, y, x), 0.0)
            if abs(analytic) > 1e-8:
                max_rel = max(max_rel, abs(fd - analytic) / abs(analytic))
                checked += 1
    max_rel = float(max_rel)
    ok = bool(checked > 0 and max_rel < 1e-4)
    _write_json(
        args.out,
        {"checked": checked, "max_rel_err": max_rel, "pass": ok, "config": cfg.echo()},
    )
    print(f"gradcheck: {checked} entries, max rel err {max_rel:.3e}, {'pass' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_overfit(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(args.ann)
    if args.image is None:
        scene = dataset.images[0]
    else:
        match = [img for img in dataset.images if img.image_id == args.image]
        if not match:
            _fail("input", f"no image {args.image!r} in {args.ann}")
        scene = match[0]
    grid = cfg.grid_for(scene.height, scene.width)
    result = overfit(scene, grid, dataset.schema, cfg.weights, cfg.train, cfg.thresholds)
    save_trace(out / "trace.csv", result.trace)
    save_grids(out / "trained_grids.bin", result.grids, dataset.schema.k, scene.height, scene.width)
    doc = result.report.as_dict()
    doc["config"] = cfg.echo()
    _write_json(out / "report.json", doc)
    final = result.trace[-1][1]
    print(
        f"overfit {scene.image_id}: l_box={final.box:.6f} l_bpd={final.bpd:.2e} "
        f"assoc_recall={result.report.assoc_recall:.3f}"
    )
    return 0


def cmd_sweep(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        lambdas = [float(v) for v in args.lambdas.split(",") if v.strip() != ""]
    except ValueError:
        _fail("usage", f"--lambdas must be comma-separated numbers, got {args.lambdas!r}", code=2)
    if not lambdas:
        _fail("usage", "--lambdas is empty", code=2)
    dataset = load_dataset(args.ann)
    scene = dataset.images[0]
    grid = cfg.grid_for(scene.height, scene.width)
    rows = lambda_sweep(
        scene, grid, dataset.schema, lambdas, cfg.weights, cfg.train, cfg.thresholds
    )
    save_sweep(out / "sweep.csv", rows)
    _write_json(out / "config.json", cfg.echo())
    for row in rows:
        print(
            f"lambda={row['lambda']:g}: l_bpd={row['l_bpd']:.3e} "
            f"precision={row['assoc_precision']:.3f} recall={row['assoc_recall']:.3f}"
        )
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="bpjdet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate annotated scenes and perfect grids")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="config JSON path")
    p.add_argument("--seed", type=int, help="override scene seed")
    p.add_argument("--scenes", type=int, default=1, help="number of scenes (seeds count up)")
    p.add_argument("--grids", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(run=cmd_simulate)

    p = sub.add_parser("infer", help="decode grid files into predictions")
    p.add_argument("--grids", required=True, help="grid .bin file or directory")
    p.add_argument("--out", required=True, help="prediction JSON path")
    p.add_argument("--config", help="config JSON path")
    p.set_defaults(run=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against annotations")
    p.add_argument("--pred", required=True)
    p.add_argument("--ann", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--curves", help="optional curve CSV path")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--config", help="config JSON path")
    p.set_defaults(run=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite differences vs analytic slopes")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--config", help="config JSON path")
    p.set_defaults(run=cmd_gradcheck)

    p = sub.add_parser("overfit", help="fit grids to one annotated scene")
    p.add_argument("--ann", required=True)
    p.add_argument("--image", help="image id (default: first image)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="config JSON path")
    p.set_defaults(run=cmd_overfit)

    p = sub.add_parser("sweep", help="overfit at several offset-loss weights")
    p.add_argument("--ann", required=True)
    p.add_argument("--lambdas", required=True, help="comma-separated values")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="config JSON path")
    p.set_defaults(run=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.run(args, cfg)
    except SystemExit:
        raise
    except Exception as e:  # noqa: BLE001 - uniform CLI error protocol
        _fail(type(e).__name__, str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
