"""Timing comparison between the compiled kernels and the numpy fallback.

    python3 benchmarks/bench_kernels.py [--boxes 400] [--points 200000] [--repeats 7]

Prints one row per kernel with the best-of-N wall time for each
implementation and the speedup of the compiled path.  Runs fine without the
extension built; you just get the fallback column.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from bpjdet.kernels import fallback

try:
    from bpjdet.kernels import _core
except ImportError:
    _core = None


def best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def clustered_boxes(rng, n: int) -> np.ndarray:
    # clumped centers so nms actually suppresses
    centers = rng.uniform(0, 300, (max(n // 12, 1), 2))
    idx = rng.integers(0, len(centers), n)
    cxy = centers[idx] + rng.normal(0, 6, (n, 2))
    wh = rng.uniform(8, 40, (n, 2))
    return np.concatenate([cxy, wh], axis=1)


def build_cases(args):
    rng = np.random.default_rng(0)
    x = rng.normal(0, 4, args.points)
    t = rng.uniform(0, 1, args.points)
    a = clustered_boxes(rng, args.boxes)
    b = clustered_boxes(rng, args.boxes)
    paired = clustered_boxes(rng, args.points // 20)
    paired2 = paired + rng.normal(0, 2, paired.shape)
    paired2[:, 2:] = np.abs(paired2[:, 2:]) + 1.0
    scores = rng.uniform(0, 1, args.boxes)
    return [
        ("sigmoid", lambda impl: impl.sigmoid(x)),
        ("sigmoid_saturating", lambda impl: impl.sigmoid_saturating(x)),
        ("bce_logits", lambda impl: impl.bce_logits(x, t)),
        ("iou_matrix", lambda impl: impl.iou_matrix(a, b)),
        ("inner_overlap_matrix", lambda impl: impl.inner_overlap_matrix(a, b)),
        ("ciou_values", lambda impl: impl.ciou_values(paired, paired2)),
        ("nms_keep", lambda impl: impl.nms_keep(a, scores, 0.45)),
    ]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--boxes", type=int, default=400, help="boxes per side in matrix kernels")
    parser.add_argument("--points", type=int, default=200_000, help="elementwise input length")
    parser.add_argument("--repeats", type=int, default=7, help="take the best of this many runs")
    args = parser.parse_args()

    header = f"{'kernel':<22}{'fallback':>12}{'compiled':>12}{'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, call in build_cases(args):
        t_py = best_of(lambda: call(fallback), args.repeats)
        if _core is None:
            print(f"{name:<22}{t_py * 1e3:>10.2f}ms{'-':>12}{'-':>9}")
            continue
        t_c = best_of(lambda: call(_core), args.repeats)
        print(f"{name:<22}{t_py * 1e3:>10.2f}ms{t_c * 1e3:>10.2f}ms{t_py / t_c:>8.1f}x")
    if _core is None:
        print("\ncompiled extension not importable; fallback only")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
