"""Kernel dispatch: compiled core when importable, NumPy fallback otherwise.

Set ``SCENEFLOW_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import cv2
import numpy as np

from . import _fallback

_impl = _fallback
BACKEND = "python"
if os.environ.get("SCENEFLOW_BACKEND", "").lower() != "python":
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback

_threads = 1


def set_threads(n: int) -> None:
    global _threads
    _threads = max(1, int(n))


def get_threads() -> int:
    return _threads


def get_impl(name: str | None = None):
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")


def _chunks(n: int, k: int):
    k = max(1, min(k, n))
    edges = np.linspace(0, n, k + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def ncc_points(ref, tgt, xs, ys, qx, qy, threads: int | None = None, impl=None):
    """NCC of 5x5 patches; NaN where the target centre leaves the image."""
    impl = impl or _impl
    ref = np.ascontiguousarray(ref, dtype=np.float32)
    tgt = np.ascontiguousarray(tgt, dtype=np.float32)
    xs = np.ascontiguousarray(xs, dtype=np.int32).ravel()
    ys = np.ascontiguousarray(ys, dtype=np.int32).ravel()
    qx = np.ascontiguousarray(qx, dtype=np.float64).ravel()
    qy = np.ascontiguousarray(qy, dtype=np.float64).ravel()
    out = np.empty(len(xs), dtype=np.float64)
    n = len(xs)
    if n == 0:
        return out
    threads = threads or _threads
    parts = _chunks(n, threads)
    if impl is _fallback:
        # bound the fallback's temporaries
        parts = [(a, min(a + 32768, b)) for lo, b in parts for a in range(lo, b, 32768)]
    if threads == 1:
        for a, b in parts:
            impl.ncc_points(ref, tgt, xs, ys, qx, qy, out, a, b)
    else:
        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(lambda ab: impl.ncc_points(ref, tgt, xs, ys, qx, qy, out, ab[0], ab[1]), parts))
    return out


def ncc_shift_volume(ref, tgt, d_min: int, d_max: int, threads: int | None = None, impl=None):
    """``(H, W, L)`` NCC of ``ref`` at ``(x, y)`` against ``tgt`` at ``(x - d, y)``, ``d`` in ``[d_min, d_max]``.

    Matches ``ncc_points`` on integer shifts up to rounding; NaN where the target leaves the image.
    """
    impl = impl or _impl
    a = cv2.copyMakeBorder(np.asarray(ref, dtype=np.float64), 2, 2, 2, 2, cv2.BORDER_REPLICATE)
    b = cv2.copyMakeBorder(np.asarray(tgt, dtype=np.float64), 2, 2, 2, 2, cv2.BORDER_REPLICATE)
    h, w = np.asarray(ref).shape
    sums = []
    for p in (a, a * a, b, b * b):
        o = np.empty((h, w))
        impl.box_sums(np.ascontiguousarray(p), o)
        sums.append(o)
    nl = d_max - d_min + 1
    out = np.empty((h, w, nl))
    parts = _chunks(nl, threads or _threads)

    def run(ab):
        impl.ncc_shift_volume(a, b, *sums, int(d_min), ab[0], ab[1], out)

    if len(parts) == 1:
        run(parts[0])
    else:
        with ThreadPoolExecutor(len(parts)) as ex:
            list(ex.map(run, parts))
    return out


def sgm_aggregate(cost, valid, na, nb, dirs, p1, p2, threads: int | None = None, impl=None):
    """Sum of directional scan-line costs and of their per-pixel minima."""
    impl = impl or _impl
    cost = np.ascontiguousarray(cost, dtype=np.int32)
    valid = np.ascontiguousarray(valid, dtype=np.uint8)
    dirs = np.ascontiguousarray(dirs, dtype=np.int32)
    p1 = np.ascontiguousarray(p1, dtype=np.int32)
    p2 = np.ascontiguousarray(p2, dtype=np.int32)
    h, w, nl = cost.shape
    groups = [list(g) for g in np.array_split(np.arange(len(dirs)), min(threads or _threads, len(dirs))) if len(g)]

    def run(g):
        S = np.zeros((h, w, nl), dtype=np.int32)
        ms = np.zeros((h, w), dtype=np.int32)
        impl.sgm_aggregate(cost, valid, na, nb, np.ascontiguousarray(dirs[g]), np.ascontiguousarray(p1[g]),
                           np.ascontiguousarray(p2[g]), S, ms)
        return S, ms

    if len(groups) == 1:
        return run(groups[0])
    with ThreadPoolExecutor(len(groups)) as ex:
        res = list(ex.map(run, groups))
    # integer sums are order independent
    S = res[0][0]
    ms = res[0][1]
    for s2, m2 in res[1:]:
        S += s2
        ms += m2
    return S, ms


def maxflow(tr, tail, head, cap, impl=None):
    """Returns ``(flow, source_side)`` for the paired-arc graph."""
    impl = impl or _impl
    tr = np.array(tr, dtype=np.int64)
    rcap = np.array(cap, dtype=np.int64)
    out = np.zeros(len(tr), dtype=np.uint8)
    flow = impl.bk_maxflow(tr, np.ascontiguousarray(tail, dtype=np.int32),
                           np.ascontiguousarray(head, dtype=np.int32), rcap, out)
    return int(flow), out.astype(bool)


def geodesic_distance(disp, cy, cx, radius, impl=None):
    impl = impl or _impl
    return impl.geodesic_distance(np.ascontiguousarray(disp, dtype=np.float64), int(cy), int(cx), int(radius))


def geodesic_wmedian(fu, fv, valid, disp, ys, xs, radius, kappa, threads: int | None = None, impl=None):
    impl = impl or _impl
    fu = np.ascontiguousarray(fu, dtype=np.float64)
    fv = np.ascontiguousarray(fv, dtype=np.float64)
    valid = np.ascontiguousarray(valid, dtype=np.uint8)
    disp = np.ascontiguousarray(disp, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.int32).ravel()
    xs = np.ascontiguousarray(xs, dtype=np.int32).ravel()
    n = len(ys)
    ou = np.empty(n)
    ov = np.empty(n)
    if n == 0:
        return ou, ov
    parts = _chunks(n, threads or _threads)

    def run(ab):
        a, b = ab
        tu = np.empty(b - a)
        tv = np.empty(b - a)
        impl.geodesic_wmedian(fu, fv, valid, disp, ys[a:b].copy(), xs[a:b].copy(), int(radius), float(kappa), tu, tv)
        ou[a:b] = tu
        ov[a:b] = tv

    if len(parts) == 1:
        run(parts[0])
    else:
        with ThreadPoolExecutor(len(parts)) as ex:
            list(ex.map(run, parts))
    return ou, ov
