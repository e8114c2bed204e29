"""Compiled core against the NumPy fallback on the hot kernels.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from sceneflow import _backend
from sceneflow.maxflow import CAP_SCALE, BinaryMrf, GraphCutSolver


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    a = rng.random((96, 160))
    b = np.roll(a, -7, axis=1)
    yield "ncc_shift_volume 96x160x48", lambda impl: _backend.ncc_shift_volume(a, b, 0, 47, impl=impl)

    xs, ys = rng.integers(2, 158, 20_000), rng.integers(2, 94, 20_000)
    qx, qy = xs - rng.uniform(0, 20, 20_000), ys + rng.uniform(-1, 1, 20_000)
    yield "ncc_points 20k", lambda impl: _backend.ncc_points(a, b, xs, ys, qx, qy, impl=impl)

    cost = rng.integers(0, 1024, (96, 160, 48)).astype(np.int32)
    valid = np.ones((96, 160), bool)
    dirs = np.array([(0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (-1, -1), (1, -1), (-1, 1)], np.int32)
    p1 = np.full(8, 200, np.int32)
    p2 = np.full((8, 96, 160), 400, np.int32)
    yield "sgm_aggregate 96x160x48, 8 dirs", lambda impl: _backend.sgm_aggregate(cost, valid, 48, 1, dirs, p1, p2,
                                                                                  impl=impl)

    mrf = BinaryMrf(rng.normal(size=(60, 80)), rng.normal(size=(60, 80)), rng.random((4, 60, 80)))
    solver = GraphCutSolver(mrf)
    tr = np.rint((mrf.unary0 - mrf.unary1).ravel() * CAP_SCALE).astype(np.int64)
    yield "maxflow 60x80 grid", lambda impl: _backend.maxflow(tr, solver.tail, solver.head, solver.cap, impl=impl)

    disp = rng.random((96, 160)) * 20
    yield "geodesic_distance r=15 x20", lambda impl: [_backend.geodesic_distance(disp, 40, 60 + i % 40, 15, impl=impl)
                                                       for i in range(20)]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    try:
        cy = _backend.get_impl("cython")
    except (ImportError, ValueError):
        raise SystemExit("compiled core not built; run `pip install -e . --no-build-isolation` first")
    py = _backend.get_impl("python")
    print(f"{'kernel':34s} {'cython':>10s} {'python':>10s} {'speedup':>8s}")
    for name, fn in cases(np.random.default_rng(0)):
        tc = _best(lambda: fn(cy), args.repeat)
        tp = _best(lambda: fn(py), args.repeat)
        print(f"{name:34s} {1e3 * tc:8.1f}ms {1e3 * tp:8.1f}ms {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
