"""NumPy implementations of the compiled kernels in ``_core.pyx``.

Signatures and outputs match the compiled versions; integer outputs are
bit-identical and floating outputs follow the same operation order.
"""
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, maximum_flow

_OFF = [(dy, dx) for dy in range(-2, 3) for dx in range(-2, 3)]
_BIG = 536870912


def _tap(img, x0, y0, fx, fy):
    """Bilinear sample at ``(x0 + fx, y0 + fy)`` with replicated borders."""
    h, w = img.shape
    xa = np.clip(x0, 0, w - 1)
    xb = np.clip(x0 + 1, 0, w - 1)
    ya = np.clip(y0, 0, h - 1)
    yb = np.clip(y0 + 1, 0, h - 1)
    im = img.astype(np.float64, copy=False)
    return (1.0 - fy) * ((1.0 - fx) * im[ya, xa] + fx * im[ya, xb]) + fy * ((1.0 - fx) * im[yb, xa] + fx * im[yb, xb])


def ncc_points(ref, tgt, xs, ys, qx, qy, out, start, stop):
    h, w = ref.shape
    ht, wt = tgt.shape
    sl = slice(start, stop)
    x, y, cx, cy = xs[sl], ys[sl], qx[sl], qy[sl]
    with np.errstate(invalid="ignore"):
        bad = ~(np.isfinite(cx) & np.isfinite(cy)) | (cx < 0) | (cy < 0) | (cx > wt - 1) | (cy > ht - 1)
    cxs = np.where(bad, 0.0, cx)
    cys = np.where(bad, 0.0, cy)
    refd = ref.astype(np.float64, copy=False)
    a = np.stack([refd[np.clip(y + dy, 0, h - 1), np.clip(x + dx, 0, w - 1)] for dy, dx in _OFF])
    x0 = np.floor(cxs).astype(np.intp)
    y0 = np.floor(cys).astype(np.intp)
    fx = cxs - x0
    fy = cys - y0
    b = np.stack([_tap(tgt, x0 + dx, y0 + dy, fx, fy) for dy, dx in _OFF])
    # sequential sums in the compiled kernel's order
    ma = np.zeros(len(x))
    mb = np.zeros(len(x))
    for k in range(25):
        ma += a[k]
        mb += b[k]
    ma /= 25.0
    mb /= 25.0
    va = np.zeros(len(x))
    vb = np.zeros(len(x))
    cov = np.zeros(len(x))
    for k in range(25):
        va += (a[k] - ma) * (a[k] - ma)
        vb += (b[k] - mb) * (b[k] - mb)
        cov += (a[k] - ma) * (b[k] - mb)
    flat = (va < 25e-8) | (vb < 25e-8)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.clip(cov / np.sqrt(va * vb), -1.0, 1.0)
    r[flat] = 0.0
    r[bad] = np.nan
    out[sl] = r


def _neighbor_min(prev, na, nb):
    """Minimum over neighbouring labels of ``prev`` (..., nl)."""
    if nb == 1:
        out = np.full_like(prev, _BIG)
        if prev.shape[-1] > 1:
            out[..., 1:] = prev[..., :-1]
            out[..., :-1] = np.minimum(out[..., :-1], prev[..., 1:])
        return out
    g = prev.reshape(prev.shape[:-1] + (na, nb))
    t = g.copy()
    t[..., :, 1:] = np.minimum(t[..., :, 1:], g[..., :, :-1])
    t[..., :, :-1] = np.minimum(t[..., :, :-1], g[..., :, 1:])
    u = t.copy()
    u[..., 1:, :] = np.minimum(u[..., 1:, :], t[..., :-1, :])
    u[..., :-1, :] = np.minimum(u[..., :-1, :], t[..., 1:, :])
    return u.reshape(prev.shape)


def _step(c, prev, prev_ok, p1, p2, na, nb):
    """One scan-front update. ``c`` (n, nl); ``prev`` (n, nl); returns L (n, nl)."""
    L = c.copy()
    if prev_ok.any():
        pv = prev[prev_ok]
        mprev = pv.min(axis=1, keepdims=True)
        best = pv - mprev
        best = np.minimum(best, _neighbor_min(pv, na, nb) - mprev + p1)
        best = np.minimum(best, p2[prev_ok][:, None])
        L[prev_ok] = c[prev_ok] + best
    return L


def sgm_aggregate(cost, valid, na, nb, dirs, p1, p2, S, minsum):
    cost = np.asarray(cost)
    valid = np.asarray(valid).astype(bool)
    h, w, nl = cost.shape
    for di in range(len(dirs)):
        dx, dy = int(dirs[di][0]), int(dirs[di][1])
        P1 = np.int32(p1[di])
        P2 = np.asarray(p2[di])
        if dy != 0:
            rows = range(h) if dy > 0 else range(h - 1, -1, -1)
            prev = None
            xs = np.arange(w)
            px = xs - dx
            inb = (px >= 0) & (px < w)
            pxc = np.clip(px, 0, w - 1)
            for y in rows:
                py = y - dy
                if 0 <= py < h and prev is not None:
                    ok = inb & valid[py, pxc] & valid[y]
                    pv = prev[pxc]
                else:
                    ok = np.zeros(w, dtype=bool)
                    pv = cost[y]
                L = _step(cost[y], pv, ok, P1, P2[y], na, nb)
                L[~valid[y]] = 0
                m = L.min(axis=1)
                S[y][valid[y]] += L[valid[y]]
                minsum[y][valid[y]] += m[valid[y]].astype(np.int32)
                prev = L
        else:
            cols = range(w) if dx > 0 else range(w - 1, -1, -1)
            prev = None
            for x in cols:
                px = x - dx
                if 0 <= px < w and prev is not None:
                    ok = valid[:, px] & valid[:, x]
                    pv = prev
                else:
                    ok = np.zeros(h, dtype=bool)
                    pv = cost[:, x]
                L = _step(cost[:, x], pv, ok, P1, P2[:, x], na, nb)
                L[~valid[:, x]] = 0
                m = L.min(axis=1)
                vx = valid[:, x]
                S[vx, x] += L[vx]
                minsum[vx, x] += m[vx].astype(np.int32)
                prev = L


def bk_maxflow(tr, tail, head, rcap, out):
    n = len(tr)
    if n == 0:
        return 0
    tr = np.asarray(tr, dtype=np.int64)
    tail = np.asarray(tail, dtype=np.int64)
    head = np.asarray(head, dtype=np.int64)
    rcap = np.asarray(rcap, dtype=np.int64)
    s, t = n, n + 1
    src = np.flatnonzero(tr > 0)
    snk = np.flatnonzero(tr < 0)
    rows = np.concatenate([tail, np.full(len(src), s), snk])
    cols = np.concatenate([head, src, np.full(len(snk), t)])
    caps = np.concatenate([rcap, tr[src], -tr[snk]])
    keep = caps > 0
    cap = csr_matrix((caps[keep], (rows[keep], cols[keep])), shape=(n + 2, n + 2), dtype=np.int64)
    cap.sum_duplicates()
    res = maximum_flow(cap, s, t)
    resid = (cap - res.flow).tocsr()
    resid.data = (resid.data > 0).astype(np.int8)
    resid.eliminate_zeros()
    reach = breadth_first_order(resid, s, directed=True, return_predecessors=False)
    side = np.zeros(n + 2, dtype=np.uint8)
    side[reach] = 1
    out[:] = side[:n]
    return int(res.flow_value)


def _chamfer_batch(disp, cys, cxs, r):
    """Chamfer distances for many centres at once, shape (k, n, n)."""
    h, w = disp.shape
    n = 2 * r + 1
    k = len(cys)
    dist = np.full((k, n, n), 1e300)
    dist[:, r, r] = 0.0
    ys = cys[:, None] - r + np.arange(n)[None, :]
    xs = cxs[:, None] - r + np.arange(n)[None, :]
    yok = (ys >= 0) & (ys < h)
    xok = (xs >= 0) & (xs < w)
    dv = disp[np.clip(ys, 0, h - 1)[:, :, None], np.clip(xs, 0, w - 1)[:, None, :]]
    s1 = 0.01
    s2 = 0.01 * np.sqrt(2.0)
    fwd = [(-1, -1), (-1, 0), (-1, 1), (0, -1)]

    def sweep(i, j, nbrs, sign):
        ok_c = yok[:, i] & xok[:, j]
        best = dist[:, i, j].copy()
        for fy, fx in nbrs:
            ii, jj = i + sign * fy, j + sign * fx
            if ii < 0 or ii >= n or jj < 0 or jj >= n:
                continue
            ok = ok_c & yok[:, ii] & xok[:, jj]
            step = s2 if (fy != 0 and fx != 0) else s1
            c = dist[:, ii, jj] + (np.abs(dv[:, i, j] - dv[:, ii, jj]) + step)
            best = np.where(ok & (c < best), c, best)
        dist[:, i, j] = np.where(ok_c, best, dist[:, i, j])

    for i in range(n):
        for j in range(n):
            sweep(i, j, fwd, 1)
    for i in range(n - 1, -1, -1):
        for j in range(n - 1, -1, -1):
            sweep(i, j, fwd, -1)
    return dist, ys, xs, yok, xok


def geodesic_distance(disp, cy, cx, radius):
    dist, *_ = _chamfer_batch(np.asarray(disp, dtype=np.float64), np.array([cy]), np.array([cx]), radius)
    out = dist[0]
    out[out >= 1e300] = np.inf
    return out


def _wmedian_rows(vals, wts, ok):
    """Weighted median per row over entries with ``ok``; NaN when none."""
    k = vals.shape[0]
    res = np.full(k, np.nan)
    for i in range(k):
        m = ok[i]
        if not m.any():
            continue
        v = vals[i][m]
        wv = wts[i][m]
        order = np.argsort(v, kind="stable")
        tot = np.cumsum(wv)[-1]
        acc = np.cumsum(wv[order])
        idx = int(np.argmax(acc >= 0.5 * tot)) if (acc >= 0.5 * tot).any() else len(v) - 1
        res[i] = v[order[idx]]
    return res


def geodesic_wmedian(fu, fv, valid, disp, ys, xs, radius, kappa, out_u, out_v, batch=256):
    h, w = disp.shape
    disp = np.asarray(disp, dtype=np.float64)
    valid = np.asarray(valid).astype(bool)
    for b0 in range(0, len(ys), batch):
        cy = np.asarray(ys[b0:b0 + batch], dtype=np.int64)
        cx = np.asarray(xs[b0:b0 + batch], dtype=np.int64)
        dist, yy, xx, yok, xok = _chamfer_batch(disp, cy, cx, radius)
        yc = np.clip(yy, 0, h - 1)[:, :, None]
        xc = np.clip(xx, 0, w - 1)[:, None, :]
        ok = yok[:, :, None] & xok[:, None, :] & valid[yc, xc]
        wts = np.exp(-dist / kappa)
        k = len(cy)
        ok = ok.reshape(k, -1)
        wts = wts.reshape(k, -1)
        out_u[b0:b0 + k] = _wmedian_rows(np.asarray(fu)[yc, xc].reshape(k, -1), wts, ok)
        out_v[b0:b0 + k] = _wmedian_rows(np.asarray(fv)[yc, xc].reshape(k, -1), wts, ok)


def _box5(p, h, w):
    """5x5 window sums with the compiled kernel's addition order."""
    s = None
    for j in range(5):
        r = p[j:j + h, 0:w]
        for i in range(1, 5):
            r = r + p[j:j + h, i:i + w]
        s = r if s is None else s + r
    return s


def box_sums(p, out):
    h, w = out.shape
    out[...] = _box5(np.asarray(p, dtype=np.float64), h, w)


def ncc_shift_volume(a, b, sa, saa, sb, sbb, d_min, k0, k1, out):
    h, w = out.shape[:2]
    xs = np.arange(w + 4)
    x = np.arange(w)
    for k in range(k0, k1):
        d = d_min + k
        prod = a * b[:, np.clip(xs - d, 0, w + 3)]
        sab = _box5(prod, h, w)
        xt = x - d
        ok = (xt >= 0) & (xt <= w - 1)
        xc = np.clip(xt, 0, w - 1)
        sbd = sb[:, xc]
        cov = sab - sa * sbd / 25.0
        va = saa - sa * sa / 25.0
        vb = sbb[:, xc] - sbd * sbd / 25.0
        flat = (va < 25e-8) | (vb < 25e-8)
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.clip(cov / np.sqrt(va * vb), -1.0, 1.0)
        r[flat] = 0.0
        r[:, ~ok] = np.nan
        out[:, :, k] = r
