"""Semi-global matching over 1D (disparity) and 2D (flow) label sets.

Costs and penalties are quantized to integers (``scale`` steps per cost
unit) before aggregation, so results are exact and backend independent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .matching import CostVolume

# (dx, dy) steps: 4 forward then the 4 reversed
DIRECTIONS8 = ((1, 0), (0, 1), (1, 1), (-1, 1), (-1, 0), (0, -1), (-1, -1), (1, -1))
DIRECTIONS_H = ((1, 0), (-1, 0))


@dataclass(frozen=True)
class SgmParams:
    lam: float = 200.0 / 255.0
    beta: float = 2.0
    gamma: float = 2.0
    directions: tuple = DIRECTIONS8
    scale: int = 1024

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.beta < 1 or self.gamma < 0:
            raise ValueError("need beta >= 1 and gamma >= 0")

    @property
    def c(self) -> float:
        """Data-term rescale: the data cost enters the aggregate ``c * n_dirs = 1`` times."""
        return 1.0 / len(self.directions)


@dataclass
class SgmResult:
    index: np.ndarray  # (H, W) label index, -1 outside the mask
    labeling: np.ndarray  # (H, W) or (H, W, 2), subpixel refined; NaN outside the mask
    uncertainty: np.ndarray  # (H, W) in cost units
    cost_min: np.ndarray  # (H, W) aggregated cost at the minimum, cost units
    mask: np.ndarray
    aggregated: np.ndarray | None = None  # (H, W, L) int, quantized


def penalties(step, w_col=0.0, params: SgmParams = SgmParams()):
    """``P1 = lam / |step|``, ``P2 = P1 * (beta + gamma * w_col)``."""
    n = float(np.hypot(step[0], step[1]))
    p1 = params.lam / n
    p2 = p1 * (params.beta + params.gamma * np.asarray(w_col, dtype=np.float64))
    return p1, p2


def shift_pairs(a: np.ndarray, dx: int, dy: int):
    """Views ``(a[p], a[p - (dx, dy)])`` over pixels whose predecessor exists."""
    h, w = a.shape[:2]
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    yq = slice(max(-dy, 0), h + min(-dy, 0))
    xq = slice(max(-dx, 0), w + min(-dx, 0))
    return (ys, xs), (yq, xq)


def color_kappa(img: np.ndarray) -> float:
    """Mean of ``2 * |I_p - I_q|^2`` over all 8-neighbour pairs, floored at 1e-6."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    tot = 0.0
    cnt = 0
    for dx, dy in DIRECTIONS8[:4]:
        p, q = shift_pairs(img, dx, dy)
        d2 = np.sum((img[p] - img[q]) ** 2, axis=-1)
        tot += 2.0 * d2.sum()
        cnt += d2.size
    return max(tot / max(cnt, 1), 1e-6)


def direction_color_weights(img: np.ndarray, directions=DIRECTIONS8, kappa: float | None = None) -> np.ndarray:
    """``w_col`` between each pixel and its predecessor along every direction, shape (n, H, W)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if kappa is None:
        kappa = color_kappa(img)
    h, w = img.shape[:2]
    out = np.zeros((len(directions), h, w))
    for i, (dx, dy) in enumerate(directions):
        p, q = shift_pairs(img, dx, dy)
        out[i][p] = np.exp(-np.sum((img[p] - img[q]) ** 2, axis=-1) / kappa)
    return out


def _quantize(x, scale):
    return np.rint(np.asarray(x, dtype=np.float64) * scale).astype(np.int32)


def aggregate(volume: CostVolume, params: SgmParams = SgmParams(), edge_weights=None, threads=None):
    """Quantized aggregation. Returns ``(S, S_raw, minsum, cost_q)`` as int arrays."""
    h, w, nl = volume.cost.shape
    dirs = np.asarray(params.directions, dtype=np.int32)
    cq = _quantize(volume.cost, params.scale)
    p1 = np.empty(len(dirs))
    p2 = np.empty((len(dirs), h, w))
    for i, step in enumerate(dirs):
        wc = 0.0 if edge_weights is None else edge_weights[i]
        a, b = penalties(step, wc, params)
        p1[i] = a
        p2[i] = b
    na, nb = volume.grid
    s_raw, minsum = _backend.sgm_aggregate(cq, volume.mask, na, nb, dirs, _quantize(p1, params.scale),
                                           _quantize(p2, params.scale), threads=threads)
    n = len(dirs)
    S = s_raw - (n - 1) * cq.astype(np.int64) if n > 1 else s_raw.astype(np.int64)
    return S, s_raw, minsum, cq


def scanline_costs(volume: CostVolume, direction, params: SgmParams = SgmParams(), edge_weights=None):
    """Quantized ``L_r`` of a single direction (for inspection and tests)."""
    p = SgmParams(params.lam, params.beta, params.gamma, (tuple(direction),), params.scale)
    ew = None if edge_weights is None else np.asarray(edge_weights)[None]
    _, s_raw, _, _ = aggregate(volume, p, ew)
    return s_raw


def subpixel_fit(s_m, s_0, s_p, d):
    """Quadratic-fit refinement ``d + (S- - S+) / (2 (S- - 2 S0 + S+))``, offset clamped to [-0.5, 0.5].

    NaN neighbours mark boundary labels, which are returned unrefined, as is
    zero curvature.
    """
    s_m = np.asarray(s_m, dtype=np.float64)
    s_0 = np.asarray(s_0, dtype=np.float64)
    s_p = np.asarray(s_p, dtype=np.float64)
    den = 2.0 * (s_m - 2.0 * s_0 + s_p)
    with np.errstate(invalid="ignore", divide="ignore"):
        off = (s_m - s_p) / den
    ok = np.isfinite(off) & (den > 0)
    off = np.where(ok, np.clip(off, -0.5, 0.5), 0.0)
    out = np.asarray(d, dtype=np.float64) + off
    return float(out) if out.ndim == 0 else out


def _axis_fit(S, idx, stride, pos, n_axis, mask):
    """Subpixel offset along one label-grid axis at the chosen index."""
    h, w, nl = S.shape
    lo = pos > 0
    hi = pos < n_axis - 1
    s0 = np.take_along_axis(S, idx[..., None], 2)[..., 0].astype(np.float64)
    sm = np.take_along_axis(S, np.clip(idx - stride, 0, nl - 1)[..., None], 2)[..., 0].astype(np.float64)
    sp = np.take_along_axis(S, np.clip(idx + stride, 0, nl - 1)[..., None], 2)[..., 0].astype(np.float64)
    sm[~lo] = np.nan
    sp[~hi] = np.nan
    return subpixel_fit(sm, s0, sp, np.zeros_like(s0))


def _solve(volume: CostVolume, params, edge_weights, subpixel, threads, keep):
    S, s_raw, minsum, _ = aggregate(volume, params, edge_weights, threads)
    mask = volume.mask.astype(bool)
    idx = np.argmin(S, axis=2)
    raw_min = s_raw.min(axis=2).astype(np.int64)
    unc = (raw_min - minsum).astype(np.float64) / params.scale
    cmin = np.take_along_axis(S, idx[..., None], 2)[..., 0].astype(np.float64) / params.scale
    na, nb = volume.grid
    if volume.is_2d:
        iu, iv = np.divmod(idx, nb)
        lab = volume.labels[idx].astype(np.float64)
        if subpixel:
            lab[..., 0] += _axis_fit(S, idx, nb, iu, na, mask)
            lab[..., 1] += _axis_fit(S, idx, 1, iv, nb, mask)
        lab[~mask] = np.nan
    else:
        lab = volume.labels[idx].astype(np.float64)
        if subpixel:
            lab += _axis_fit(S, idx, 1, idx, na, mask)
        lab[~mask] = np.nan
    idx = np.where(mask, idx, -1)
    unc[~mask] = 0.0
    cmin[~mask] = np.nan
    return SgmResult(idx, lab, unc, cmin, mask, S if keep else None)


def sgm_1d(volume: CostVolume, params: SgmParams = SgmParams(), edge_weights=None, subpixel: bool = True,
           threads=None, keep_aggregated: bool = False) -> SgmResult:
    """SGM over a disparity volume; lowest index wins ties."""
    if volume.is_2d:
        raise ValueError("sgm_1d needs a 1D label volume")
    return _solve(volume, params, edge_weights, subpixel, threads, keep_aggregated)


def sgm_2d(volume: CostVolume, params: SgmParams = SgmParams(), edge_weights=None, subpixel: bool = True,
           threads=None, keep_aggregated: bool = False) -> SgmResult:
    """SGM over a 2D flow volume; P1 applies to the 8 neighbouring shifts."""
    if not volume.is_2d:
        raise ValueError("sgm_2d needs a 2D label volume")
    return _solve(volume, params, edge_weights, subpixel, threads, keep_aggregated)
