# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. ``sceneflow._fallback`` mirrors every function here."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, floor, fabs, isfinite, NAN
from libc.stdlib cimport malloc, free

cnp.import_array()

ctypedef cnp.int64_t i64
ctypedef cnp.int32_t i32


cdef inline int _clampi(int x, int lo, int hi) noexcept nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


cdef inline double _clampd(double x, double lo, double hi) noexcept nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


cdef inline double _tap(const float[:, ::1] img, int x0, int y0, double fx, double fy, int h, int w) noexcept nogil:
    """Bilinear sample at ``(x0 + fx, y0 + fy)`` with replicated borders."""
    cdef int xa = _clampi(x0, 0, w - 1), xb = _clampi(x0 + 1, 0, w - 1)
    cdef int ya = _clampi(y0, 0, h - 1), yb = _clampi(y0 + 1, 0, h - 1)
    return ((1.0 - fy) * ((1.0 - fx) * img[ya, xa] + fx * img[ya, xb])
            + fy * ((1.0 - fx) * img[yb, xa] + fx * img[yb, xb]))


def ncc_points(const float[:, ::1] ref, const float[:, ::1] tgt,
               const i32[::1] xs, const i32[::1] ys,
               const double[::1] qx, const double[::1] qy,
               double[::1] out, Py_ssize_t start, Py_ssize_t stop):
    """5x5 zero-mean NCC between ``ref`` at (xs, ys) and ``tgt`` at (qx, qy).

    Writes NaN where the target centre is outside the image.
    """
    cdef int h = ref.shape[0], w = ref.shape[1]
    cdef int ht = tgt.shape[0], wt = tgt.shape[1]
    cdef Py_ssize_t i
    cdef int dx, dy, k, x, y
    cdef double a[25]
    cdef double b[25]
    cdef double ma, mb, va, vb, cov, cx, cy, r
    cdef bint src_in, tgt_in
    cdef int x0, y0
    cdef double fx, fy
    with nogil:
        for i in range(start, stop):
            cx = qx[i]
            cy = qy[i]
            if not (isfinite(cx) and isfinite(cy)) or cx < 0 or cy < 0 or cx > wt - 1 or cy > ht - 1:
                out[i] = NAN
                continue
            x = xs[i]
            y = ys[i]
            x0 = <int>floor(cx)
            y0 = <int>floor(cy)
            fx = cx - x0
            fy = cy - y0
            # interior fast paths read exactly what the clamped taps read
            src_in = x >= 2 and y >= 2 and x <= w - 3 and y <= h - 3
            tgt_in = x0 >= 2 and y0 >= 2 and x0 <= wt - 4 and y0 <= ht - 4
            k = 0
            ma = 0.0
            mb = 0.0
            for dy in range(-2, 3):
                for dx in range(-2, 3):
                    if src_in:
                        a[k] = ref[y + dy, x + dx]
                    else:
                        a[k] = ref[_clampi(y + dy, 0, h - 1), _clampi(x + dx, 0, w - 1)]
                    if tgt_in:
                        b[k] = ((1.0 - fy) * ((1.0 - fx) * tgt[y0 + dy, x0 + dx] + fx * tgt[y0 + dy, x0 + dx + 1])
                                + fy * ((1.0 - fx) * tgt[y0 + dy + 1, x0 + dx] + fx * tgt[y0 + dy + 1, x0 + dx + 1]))
                    else:
                        b[k] = _tap(tgt, x0 + dx, y0 + dy, fx, fy, ht, wt)
                    ma += a[k]
                    mb += b[k]
                    k += 1
            ma /= 25.0
            mb /= 25.0
            va = 0.0
            vb = 0.0
            cov = 0.0
            for k in range(25):
                va += (a[k] - ma) * (a[k] - ma)
                vb += (b[k] - mb) * (b[k] - mb)
                cov += (a[k] - ma) * (b[k] - mb)
            if va < 25e-8 or vb < 25e-8:
                out[i] = 0.0
            else:
                r = cov / sqrt(va * vb)
                out[i] = _clampd(r, -1.0, 1.0)


def sgm_aggregate(const i32[:, :, ::1] cost, const cnp.uint8_t[:, ::1] valid,
                  int na, int nb, const i32[:, ::1] dirs, const i32[::1] p1,
                  const i32[:, :, ::1] p2, i32[:, :, ::1] S, i32[:, ::1] minsum):
    """Accumulate scan-line costs of every direction into ``S``.

    Labels are a row-major ``na x nb`` grid; with ``nb == 1`` the neighbours of
    label ``a`` are ``a +- 1``, otherwise the 8 surrounding grid labels.
    ``minsum`` accumulates the per-direction minimum of each scan-line cost.
    """
    cdef int h = cost.shape[0], w = cost.shape[1], nl = cost.shape[2]
    cdef int nd = dirs.shape[0]
    cdef int di, dx, dy, y, x, yi, xi, py, px, l, ia, ib, j, P1, P2, m, mprev, best, v, cur
    cdef i32[:, :, ::1] buf = np.zeros((2, w, nl), dtype=np.int32)
    cdef i32[:, ::1] bmin = np.zeros((2, w), dtype=np.int32)
    cdef i32[::1] nbr = np.zeros(nl, dtype=np.int32)
    cdef i32[::1] tmp = np.zeros(nl, dtype=np.int32)
    with nogil:
        for di in range(nd):
            dx = dirs[di, 0]
            dy = dirs[di, 1]
            P1 = p1[di]
            for yi in range(h):
                y = yi if dy >= 0 else h - 1 - yi
                cur = yi & 1
                for xi in range(w):
                    x = xi if dx >= 0 else w - 1 - xi
                    if not valid[y, x]:
                        continue
                    py = y - dy
                    px = x - dx
                    if py < 0 or py >= h or px < 0 or px >= w or not valid[py, px]:
                        m = cost[y, x, 0]
                        for l in range(nl):
                            v = cost[y, x, l]
                            buf[cur, x, l] = v
                            if v < m:
                                m = v
                    else:
                        j = cur if dy == 0 else 1 - cur
                        mprev = bmin[j, px]
                        P2 = p2[di, y, x]
                        # neighbour minimum of the previous scan-line cost
                        if nb == 1:
                            for l in range(nl):
                                best = 536870912
                                if l > 0 and buf[j, px, l - 1] < best:
                                    best = buf[j, px, l - 1]
                                if l < nl - 1 and buf[j, px, l + 1] < best:
                                    best = buf[j, px, l + 1]
                                nbr[l] = best
                        else:
                            for ia in range(na):
                                for ib in range(nb):
                                    l = ia * nb + ib
                                    best = buf[j, px, l]
                                    if ib > 0 and buf[j, px, l - 1] < best:
                                        best = buf[j, px, l - 1]
                                    if ib < nb - 1 and buf[j, px, l + 1] < best:
                                        best = buf[j, px, l + 1]
                                    tmp[l] = best
                            for ia in range(na):
                                for ib in range(nb):
                                    l = ia * nb + ib
                                    best = tmp[l]
                                    if ia > 0 and tmp[l - nb] < best:
                                        best = tmp[l - nb]
                                    if ia < na - 1 and tmp[l + nb] < best:
                                        best = tmp[l + nb]
                                    nbr[l] = best
                        m = 2147483647
                        for l in range(nl):
                            best = buf[j, px, l] - mprev
                            v = nbr[l] - mprev + P1
                            if v < best:
                                best = v
                            if P2 < best:
                                best = P2
                            v = cost[y, x, l] + best
                            buf[cur, x, l] = v
                            if v < m:
                                m = v
                    bmin[cur, x] = m
                    minsum[y, x] += m
                    for l in range(nl):
                        S[y, x, l] += buf[cur, x, l]


# ---------------------------------------------------------------------------
# Boykov-Kolmogorov max-flow

DEF NONE = -1
DEF TERMINAL = -2
DEF ORPHAN = -3


cdef struct BK:
    int n
    i64 *tr
    int *first
    int *head
    int *next
    i64 *rcap
    int *parent
    char *sink
    int *ts
    int *dist
    int *q
    int qhead
    int qlen
    char *active
    int *orph
    int ohead
    int olen
    int time


cdef inline void _set_active(BK *g, int i) noexcept nogil:
    if not g.active[i]:
        g.active[i] = 1
        g.q[(g.qhead + g.qlen) % g.n] = i
        g.qlen += 1


cdef inline int _next_active(BK *g) noexcept nogil:
    cdef int i
    while g.qlen > 0:
        i = g.q[g.qhead]
        g.qhead = (g.qhead + 1) % g.n
        g.qlen -= 1
        g.active[i] = 0
        if g.parent[i] != NONE:
            return i
    return -1


cdef inline void _orphan_front(BK *g, int i) noexcept nogil:
    g.parent[i] = ORPHAN
    g.ohead = (g.ohead - 1 + g.n) % g.n
    g.orph[g.ohead] = i
    g.olen += 1


cdef inline void _orphan_rear(BK *g, int i) noexcept nogil:
    g.parent[i] = ORPHAN
    g.orph[(g.ohead + g.olen) % g.n] = i
    g.olen += 1


cdef i64 _augment(BK *g, int mid) noexcept nogil:
    cdef int i, a
    cdef i64 bott = g.rcap[mid]
    i = g.head[mid ^ 1]
    while True:
        a = g.parent[i]
        if a == TERMINAL:
            break
        if g.rcap[a ^ 1] < bott:
            bott = g.rcap[a ^ 1]
        i = g.head[a]
    if g.tr[i] < bott:
        bott = g.tr[i]
    i = g.head[mid]
    while True:
        a = g.parent[i]
        if a == TERMINAL:
            break
        if g.rcap[a] < bott:
            bott = g.rcap[a]
        i = g.head[a]
    if -g.tr[i] < bott:
        bott = -g.tr[i]

    g.rcap[mid ^ 1] += bott
    g.rcap[mid] -= bott
    i = g.head[mid ^ 1]
    while True:
        a = g.parent[i]
        if a == TERMINAL:
            break
        g.rcap[a] += bott
        g.rcap[a ^ 1] -= bott
        if g.rcap[a ^ 1] == 0:
            _orphan_front(g, i)
        i = g.head[a]
    g.tr[i] -= bott
    if g.tr[i] == 0:
        _orphan_front(g, i)
    i = g.head[mid]
    while True:
        a = g.parent[i]
        if a == TERMINAL:
            break
        g.rcap[a ^ 1] += bott
        g.rcap[a] -= bott
        if g.rcap[a] == 0:
            _orphan_front(g, i)
        i = g.head[a]
    g.tr[i] += bott
    if g.tr[i] == 0:
        _orphan_front(g, i)
    return bott


cdef void _process_orphan(BK *g, int i, char is_sink) noexcept nogil:
    cdef int a0, a0_min = NONE, j, a, d, d_min = 2147483647
    cdef i64 cap
    a0 = g.first[i]
    while a0 != NONE:
        cap = g.rcap[a0] if is_sink else g.rcap[a0 ^ 1]
        if cap > 0:
            j = g.head[a0]
            a = g.parent[j]
            if g.sink[j] == is_sink and a != NONE:
                d = 0
                while True:
                    if g.ts[j] == g.time:
                        d += g.dist[j]
                        break
                    a = g.parent[j]
                    d += 1
                    if a == TERMINAL:
                        g.ts[j] = g.time
                        g.dist[j] = 1
                        break
                    if a == ORPHAN:
                        d = 2147483647
                        break
                    j = g.head[a]
                if d < 2147483647:
                    if d < d_min:
                        a0_min = a0
                        d_min = d
                    j = g.head[a0]
                    while g.ts[j] != g.time:
                        g.ts[j] = g.time
                        g.dist[j] = d
                        d -= 1
                        j = g.head[g.parent[j]]
        a0 = g.next[a0]
    g.parent[i] = a0_min
    if a0_min != NONE:
        g.ts[i] = g.time
        g.dist[i] = d_min + 1
        return
    a0 = g.first[i]
    while a0 != NONE:
        j = g.head[a0]
        a = g.parent[j]
        if g.sink[j] == is_sink and a != NONE:
            cap = g.rcap[a0] if is_sink else g.rcap[a0 ^ 1]
            if cap > 0:
                _set_active(g, j)
            if a != TERMINAL and a != ORPHAN and g.head[a] == i:
                _orphan_rear(g, j)
        a0 = g.next[a0]


def bk_maxflow(i64[::1] tr, const i32[::1] tail, const i32[::1] head, i64[::1] rcap,
               cnp.uint8_t[::1] out):
    """Max-flow on a graph with paired arcs ``(2k, 2k+1)``.

    ``tr[i] > 0`` is residual capacity from the source, ``< 0`` to the sink.
    ``out[i]`` is set to 1 for nodes on the source side of the minimal
    source-side minimum cut. Returns the augmented flow.
    """
    cdef int n = tr.shape[0], m = head.shape[0]
    cdef int i, j, a, k, cur = -1
    cdef i64 flow = 0
    cdef BK g
    if n == 0:
        return 0
    cdef i32[::1] first = np.full(n, -1, dtype=np.int32)
    cdef i32[::1] nxt = np.full(max(m, 1), -1, dtype=np.int32)
    cdef i32[::1] parent = np.full(n, NONE, dtype=np.int32)
    cdef cnp.int8_t[::1] sink = np.zeros(n, dtype=np.int8)
    cdef i32[::1] ts = np.zeros(n, dtype=np.int32)
    cdef i32[::1] dist = np.zeros(n, dtype=np.int32)
    cdef i32[::1] q = np.zeros(n, dtype=np.int32)
    cdef cnp.int8_t[::1] active = np.zeros(n, dtype=np.int8)
    cdef i32[::1] orph = np.zeros(n, dtype=np.int32)
    with nogil:
        for a in range(m - 1, -1, -1):
            nxt[a] = first[tail[a]]
            first[tail[a]] = a
        g.n = n
        g.tr = &tr[0]
        g.first = <int *>&first[0]
        g.head = <int *>&head[0] if m > 0 else NULL
        g.next = <int *>&nxt[0]
        g.rcap = &rcap[0] if m > 0 else NULL
        g.parent = <int *>&parent[0]
        g.sink = <char *>&sink[0]
        g.ts = <int *>&ts[0]
        g.dist = <int *>&dist[0]
        g.q = <int *>&q[0]
        g.qhead = 0
        g.qlen = 0
        g.active = <char *>&active[0]
        g.orph = <int *>&orph[0]
        g.ohead = 0
        g.olen = 0
        g.time = 0
        for i in range(n):
            if g.tr[i] > 0:
                g.sink[i] = 0
                g.parent[i] = TERMINAL
                g.ts[i] = 0
                g.dist[i] = 1
                _set_active(&g, i)
            elif g.tr[i] < 0:
                g.sink[i] = 1
                g.parent[i] = TERMINAL
                g.ts[i] = 0
                g.dist[i] = 1
                _set_active(&g, i)
        while True:
            i = cur
            if i != -1:
                g.active[i] = 0
                if g.parent[i] == NONE:
                    i = -1
            if i == -1:
                i = _next_active(&g)
                if i == -1:
                    break
            k = NONE
            if not g.sink[i]:
                a = g.first[i]
                while a != NONE:
                    if g.rcap[a] > 0:
                        j = g.head[a]
                        if g.parent[j] == NONE:
                            g.sink[j] = 0
                            g.parent[j] = a ^ 1
                            g.ts[j] = g.ts[i]
                            g.dist[j] = g.dist[i] + 1
                            _set_active(&g, j)
                        elif g.sink[j]:
                            k = a
                            break
                        elif g.ts[j] <= g.ts[i] and g.dist[j] > g.dist[i]:
                            g.parent[j] = a ^ 1
                            g.ts[j] = g.ts[i]
                            g.dist[j] = g.dist[i] + 1
                    a = g.next[a]
            else:
                a = g.first[i]
                while a != NONE:
                    if g.rcap[a ^ 1] > 0:
                        j = g.head[a]
                        if g.parent[j] == NONE:
                            g.sink[j] = 1
                            g.parent[j] = a ^ 1
                            g.ts[j] = g.ts[i]
                            g.dist[j] = g.dist[i] + 1
                            _set_active(&g, j)
                        elif not g.sink[j]:
                            k = a ^ 1
                            break
                        elif g.ts[j] <= g.ts[i] and g.dist[j] > g.dist[i]:
                            g.parent[j] = a ^ 1
                            g.ts[j] = g.ts[i]
                            g.dist[j] = g.dist[i] + 1
                    a = g.next[a]
            g.time += 1
            if k != NONE:
                g.active[i] = 1
                cur = i
                flow += _augment(&g, k)
                while g.olen > 0:
                    j = g.orph[g.ohead]
                    g.ohead = (g.ohead + 1) % n
                    g.olen -= 1
                    _process_orphan(&g, j, g.sink[j])
            else:
                cur = -1
        for i in range(n):
            out[i] = 1 if (g.parent[i] != NONE and not g.sink[i]) else 0
    return flow


# ---------------------------------------------------------------------------
# geodesic weighted median

cdef inline double _step(const double[:, ::1] disp, int y0, int x0, int y1, int x1, double diag) noexcept nogil:
    return fabs(disp[y0, x0] - disp[y1, x1]) + diag


cdef void _chamfer(const double[:, ::1] disp, int cy, int cx, int r, double *dist) noexcept nogil:
    """Two-pass raster chamfer over the (2r+1)^2 window; NaN-free ``dist``."""
    cdef int h = disp.shape[0], w = disp.shape[1], n = 2 * r + 1
    cdef int i, j, y, x, yy, xx, k
    cdef double best, c
    cdef double s1 = 0.01, s2 = 0.01 * sqrt(2.0)
    cdef int fy[4]
    cdef int fx[4]
    fy[0] = -1; fx[0] = -1
    fy[1] = -1; fx[1] = 0
    fy[2] = -1; fx[2] = 1
    fy[3] = 0; fx[3] = -1
    for i in range(n * n):
        dist[i] = 1e300
    dist[r * n + r] = 0.0
    # forward pass
    for i in range(n):
        y = cy - r + i
        if y < 0 or y >= h:
            continue
        for j in range(n):
            x = cx - r + j
            if x < 0 or x >= w:
                continue
            best = dist[i * n + j]
            for k in range(4):
                if i + fy[k] < 0 or j + fx[k] < 0 or j + fx[k] >= n:
                    continue
                yy = y + fy[k]
                xx = x + fx[k]
                if yy < 0 or yy >= h or xx < 0 or xx >= w:
                    continue
                c = dist[(i + fy[k]) * n + j + fx[k]] + _step(disp, y, x, yy, xx, s2 if (fy[k] != 0 and fx[k] != 0) else s1)
                if c < best:
                    best = c
            dist[i * n + j] = best
    # backward pass
    for i in range(n - 1, -1, -1):
        y = cy - r + i
        if y < 0 or y >= h:
            continue
        for j in range(n - 1, -1, -1):
            x = cx - r + j
            if x < 0 or x >= w:
                continue
            best = dist[i * n + j]
            for k in range(4):
                if i - fy[k] >= n or j - fx[k] >= n or j - fx[k] < 0:
                    continue
                yy = y - fy[k]
                xx = x - fx[k]
                if yy < 0 or yy >= h or xx < 0 or xx >= w:
                    continue
                c = dist[(i - fy[k]) * n + j - fx[k]] + _step(disp, y, x, yy, xx, s2 if (fy[k] != 0 and fx[k] != 0) else s1)
                if c < best:
                    best = c
            dist[i * n + j] = best


def geodesic_distance(const double[:, ::1] disp, int cy, int cx, int radius):
    """Window of approximate geodesic distances to ``(cy, cx)``; inf off-image."""
    cdef int n = 2 * radius + 1
    out = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    _chamfer(disp, cy, cx, radius, &o[0, 0])
    out[out >= 1e300] = np.inf
    return out


cdef double _wmedian(double *vals, double *wts, int *idx, int cnt) noexcept nogil:
    cdef int i, j, t
    cdef double tot = 0.0, acc = 0.0
    # insertion sort of indices by value; ties keep scan order
    for i in range(cnt):
        idx[i] = i
    for i in range(1, cnt):
        t = idx[i]
        j = i - 1
        while j >= 0 and vals[idx[j]] > vals[t]:
            idx[j + 1] = idx[j]
            j -= 1
        idx[j + 1] = t
    for i in range(cnt):
        tot += wts[i]
    for i in range(cnt):
        acc += wts[idx[i]]
        if acc >= 0.5 * tot:
            return vals[idx[i]]
    return vals[idx[cnt - 1]]


def geodesic_wmedian(const double[:, ::1] fu, const double[:, ::1] fv,
                     const cnp.uint8_t[:, ::1] valid, const double[:, ::1] disp,
                     const i32[::1] ys, const i32[::1] xs, int radius, double kappa,
                     double[::1] out_u, double[::1] out_v):
    """Per-component weighted median of valid flow around each hole pixel.

    Holes without any valid neighbour in the window get NaN.
    """
    cdef int h = disp.shape[0], w = disp.shape[1], n = 2 * radius + 1
    cdef int k, i, j, y, x, cnt, cy, cx
    cdef double wt
    cdef double *dist = <double *>malloc(n * n * sizeof(double))
    cdef double *vu = <double *>malloc(n * n * sizeof(double))
    cdef double *vv = <double *>malloc(n * n * sizeof(double))
    cdef double *ww = <double *>malloc(n * n * sizeof(double))
    cdef int *idx = <int *>malloc(n * n * sizeof(int))
    try:
        with nogil:
            for k in range(ys.shape[0]):
                cy = ys[k]
                cx = xs[k]
                _chamfer(disp, cy, cx, radius, dist)
                cnt = 0
                for i in range(n):
                    y = cy - radius + i
                    if y < 0 or y >= h:
                        continue
                    for j in range(n):
                        x = cx - radius + j
                        if x < 0 or x >= w or not valid[y, x]:
                            continue
                        wt = exp(-dist[i * n + j] / kappa)
                        vu[cnt] = fu[y, x]
                        vv[cnt] = fv[y, x]
                        ww[cnt] = wt
                        cnt += 1
                if cnt == 0:
                    out_u[k] = NAN
                    out_v[k] = NAN
                else:
                    out_u[k] = _wmedian(vu, ww, idx, cnt)
                    out_v[k] = _wmedian(vv, ww, idx, cnt)
    finally:
        free(dist)
        free(vu)
        free(vv)
        free(ww)
        free(idx)


cdef inline double _box5(const double[:, ::1] p, int y, int x) noexcept nogil:
    """Sum of the 5x5 window with top-left ``(y, x)``: rows of five, then the five row sums."""
    cdef double s = 0.0, r
    cdef int j
    for j in range(5):
        r = p[y + j, x]
        r = r + p[y + j, x + 1]
        r = r + p[y + j, x + 2]
        r = r + p[y + j, x + 3]
        r = r + p[y + j, x + 4]
        if j == 0:
            s = r
        else:
            s = s + r
    return s


def ncc_shift_volume(const double[:, ::1] a, const double[:, ::1] b, const double[:, ::1] sa,
                     const double[:, ::1] saa, const double[:, ::1] sb, const double[:, ::1] sbb,
                     int d_min, int k0, int k1, double[:, :, ::1] out):
    """NCC of ``a`` at ``(x, y)`` and ``b`` at ``(x - d, y)`` for labels ``k0 <= k < k1``, ``d = d_min + k``.

    ``a`` and ``b`` carry a 2 px replicated border; ``sa .. sbb`` are their
    5x5 window sums and sums of squares. NaN where ``x - d`` leaves the image.
    """
    cdef int h = out.shape[0], w = out.shape[1]
    cdef int k, d, y, x, j, xb
    cdef double s, r, sab, cov, va, vb, v
    # row sums of five products, then five rows: the addition order of _box5
    cdef double[:, ::1] rs = np.empty((h + 4, w), dtype=np.float64)
    cdef double[:, ::1] res = np.empty((h, w), dtype=np.float64)
    with nogil:
        for k in range(k0, k1):
            d = d_min + k
            for y in range(h + 4):
                for x in range(w):
                    r = 0.0
                    for j in range(5):
                        xb = x + j - d
                        if xb < 0:
                            xb = 0
                        elif xb > w + 3:
                            xb = w + 3
                        if j == 0:
                            r = a[y, x] * b[y, xb]
                        else:
                            r = r + a[y, x + j] * b[y, xb]
                    rs[y, x] = r
            for y in range(h):
                for x in range(w):
                    if x - d < 0 or x - d > w - 1:
                        res[y, x] = NAN
                        continue
                    sab = rs[y, x]
                    for j in range(1, 5):
                        sab = sab + rs[y + j, x]
                    cov = sab - sa[y, x] * sb[y, x - d] / 25.0
                    va = saa[y, x] - sa[y, x] * sa[y, x] / 25.0
                    vb = sbb[y, x - d] - sb[y, x - d] * sb[y, x - d] / 25.0
                    if va < 25e-8 or vb < 25e-8:
                        res[y, x] = 0.0
                    else:
                        v = cov / sqrt(va * vb)
                        res[y, x] = _clampd(v, -1.0, 1.0)
            for y in range(h):
                for x in range(w):
                    out[y, x, k] = res[y, x]


def box_sums(const double[:, ::1] p, double[:, ::1] out):
    """5x5 window sums of a bordered image, same order as the volume kernel."""
    cdef int h = out.shape[0], w = out.shape[1], y, x
    with nogil:
        for y in range(h):
            for x in range(w):
                out[y, x] = _box5(p, y, x)
