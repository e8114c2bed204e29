"""Exact binary MRF minimization by max-flow / min-cut.

Energy of a labeling ``s`` (1 = foreground):

    E(s) = sum_p U_{s_p}(p) + sum_(p,q) w_pq [s_p != s_q]

over the 8-neighbourhood. Foreground nodes end on the source side; a free
node pays ``max(U1 - U0, 0)`` on its sink arc and ``max(U0 - U1, 0)`` on
its source arc after removing the common part.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend

# (dy, dx) of the four forward 8-neighbourhood edges
OFFSETS = ((0, 1), (1, 0), (1, 1), (1, -1))
CAP_SCALE = float(1 << 24)


@dataclass
class BinaryMrf:
    unary0: np.ndarray
    unary1: np.ndarray
    weights: np.ndarray  # (4, H, W): edge from p to p + OFFSETS[k]
    fixed: np.ndarray | None = None  # int8, -1 free, else the forced label

    def __post_init__(self):
        self.unary0 = quantize(self.unary0)
        self.unary1 = quantize(self.unary1)
        self.weights = quantize(self.weights)
        if self.fixed is None:
            self.fixed = np.full(self.unary0.shape, -1, dtype=np.int8)
        self.fixed = np.asarray(self.fixed, dtype=np.int8)
        if self.weights.shape != (4,) + self.unary0.shape:
            raise ValueError(f"weights must have shape (4, H, W), got {self.weights.shape}")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("pairwise weights must be finite and non-negative")
        free = self.fixed < 0
        if not (np.all(np.isfinite(self.unary0[free])) and np.all(np.isfinite(self.unary1[free]))):
            raise ValueError("unaries of free pixels must be finite")

    @property
    def shape(self):
        return self.unary0.shape


def quantize(x) -> np.ndarray:
    """Round finite entries to the ``1 / CAP_SCALE`` grid the solver works on.

    Sums of such values are exact in float64 well beyond image-sized problems,
    so energies of different labelings compare exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.isfinite(x), np.rint(x * CAP_SCALE) / CAP_SCALE, x)


def zero_weights(shape) -> np.ndarray:
    return np.zeros((4,) + tuple(shape))


def edge_slices(shape, k: int):
    """Slices ``(p, q)`` selecting both endpoints of every edge with offset ``k``."""
    h, w = shape
    dy, dx = OFFSETS[k]
    p = (slice(0, h - dy), slice(max(-dx, 0), w - max(dx, 0)))
    q = (slice(dy, h), slice(max(dx, 0), w + min(dx, 0)))
    return p, q


def energy(mrf: BinaryMrf, labels: np.ndarray, region: np.ndarray | None = None) -> float:
    """Energy of ``labels``; with ``region``, only terms touching it are counted."""
    s = np.asarray(labels, dtype=bool)
    sel = np.ones(s.shape, dtype=bool) if region is None else np.asarray(region, dtype=bool)
    e = float(np.sum(np.where(s, mrf.unary1, mrf.unary0)[sel]))
    for k in range(4):
        p, q = edge_slices(s.shape, k)
        cut = (s[p] != s[q]) & (sel[p] | sel[q])
        e += float(np.sum(mrf.weights[k][p][cut]))
    return e


class GraphCutSolver:
    """Builds the free-pixel graph once; ``resolve`` accepts new unaries on the same topology."""

    def __init__(self, mrf: BinaryMrf):
        self.mrf = mrf
        self.shape = mrf.shape
        free = mrf.fixed < 0
        self.free = free
        self.node = np.full(self.shape, -1, dtype=np.int64)
        self.node[free] = np.arange(int(free.sum()))
        tails, heads, caps = [], [], []
        # unary adjustment from fixed neighbours: (extra cost of label 0, of label 1)
        self._fix0 = np.zeros(self.shape)
        self._fix1 = np.zeros(self.shape)
        fixed = mrf.fixed
        for k in range(4):
            p, q = edge_slices(self.shape, k)
            w = mrf.weights[k][p]
            fp, fq = free[p], free[q]
            both = fp & fq & (w > 0)
            tails.append(self.node[p][both])
            heads.append(self.node[q][both])
            caps.append(w[both])
            # free p next to fixed q: p pays w when it differs from q's label
            for a, b, fa, fb in ((p, q, fp, fq), (q, p, fq, fp)):
                one = fa & ~fb & (w > 0)
                lab = fixed[b][one]
                add0 = np.zeros(self.shape)
                add1 = np.zeros(self.shape)
                add0[a][one] = np.where(lab == 1, w[one], 0.0)
                add1[a][one] = np.where(lab == 0, w[one], 0.0)
                self._fix0 += add0
                self._fix1 += add1
        t = np.concatenate(tails) if tails else np.zeros(0, np.int64)
        hd = np.concatenate(heads) if heads else np.zeros(0, np.int64)
        c = np.concatenate(caps) if caps else np.zeros(0)
        m = len(t)
        self.tail = np.empty(2 * m, dtype=np.int32)
        self.head = np.empty(2 * m, dtype=np.int32)
        self.tail[0::2], self.tail[1::2] = t, hd
        self.head[0::2], self.head[1::2] = hd, t
        cq = np.rint(c * CAP_SCALE).astype(np.int64)
        self.cap = np.repeat(cq, 2)
        self.flow = None

    def _solve(self, unary0, unary1):
        u0 = unary0 + self._fix0
        u1 = unary1 + self._fix1
        # positive: prefers foreground (source side)
        tr = np.rint((u0 - u1)[self.free] * CAP_SCALE).astype(np.int64)
        flow, side = _backend.maxflow(tr, self.tail, self.head, self.cap)
        self.flow = flow
        labels = self.mrf.fixed == 1
        labels[self.free] = side
        return labels

    def min_cut(self):
        labels = self._solve(self.mrf.unary0, self.mrf.unary1)
        return labels, energy(self.mrf, labels)

    def resolve(self, unary0, unary1):
        unary0 = np.asarray(unary0, dtype=np.float64)
        unary1 = np.asarray(unary1, dtype=np.float64)
        if unary0.shape != self.shape or unary1.shape != self.shape:
            raise ValueError("resolve requires the topology of the original problem")
        self.mrf = BinaryMrf(unary0, unary1, self.mrf.weights, self.mrf.fixed)
        return self.min_cut()


def min_cut(mrf: BinaryMrf):
    """Global minimizer and its energy."""
    return GraphCutSolver(mrf).min_cut()


def resolve(solver: GraphCutSolver, unary0, unary1):
    return solver.resolve(unary0, unary1)
