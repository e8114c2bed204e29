"""Masked non-rigid optical flow: range estimation, 2D-label SGM, consistency filtering and hole filling."""
from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from . import _backend
from .geometry import forward_warp_mask
from .matching import flow_cost_volume, to_gray
from .segmentation import bidirectional_check
from .sgm import SgmParams, direction_color_weights, sgm_2d


@dataclass(frozen=True)
class FlowParams:
    tau: float = 1.0
    bin: int = 2
    frac: float = 0.1
    pad: int = 2
    max_side: int = 241
    fallback: int = 16
    check_tol: float = 1.0
    wm_radius: int = 15  # 31x31 window
    kappa_geo: float = 2.0
    median: int = 5
    mask_dilate: int = 2
    sgm: SgmParams = field(default_factory=SgmParams)


@dataclass(frozen=True)
class FlowRange:
    u_min: int
    u_max: int
    v_min: int
    v_max: int

    def __post_init__(self):
        if self.u_max < self.u_min or self.v_max < self.v_min:
            raise ValueError(f"empty flow range {self}")

    @classmethod
    def around(cls, us, vs) -> "FlowRange":
        return cls(int(np.floor(np.min(us))), int(np.ceil(np.max(us))), int(np.floor(np.min(vs))),
                   int(np.ceil(np.max(vs))))

    @property
    def shape(self):
        return self.u_max - self.u_min + 1, self.v_max - self.v_min + 1

    def as_tuple(self):
        return self.u_min, self.u_max, self.v_min, self.v_max

    def union(self, other: "FlowRange") -> "FlowRange":
        return FlowRange(min(self.u_min, other.u_min), max(self.u_max, other.u_max),
                         min(self.v_min, other.v_min), max(self.v_max, other.v_max))

    def padded(self, pad: int) -> "FlowRange":
        return FlowRange(self.u_min - pad, self.u_max + pad, self.v_min - pad, self.v_max + pad)

    def negated(self) -> "FlowRange":
        return FlowRange(-self.u_max, -self.u_min, -self.v_max, -self.v_min)

    def capped(self, side: int) -> "FlowRange":
        """Shrink each axis about its centre to at most ``side`` labels."""

        def fit(lo, hi):
            if hi - lo + 1 <= side:
                return lo, hi
            lo = int(np.floor((lo + hi) / 2.0)) - (side - 1) // 2
            return lo, lo + side - 1

        u = fit(self.u_min, self.u_max)
        v = fit(self.v_min, self.v_max)
        return FlowRange(u[0], u[1], v[0], v[1])

    def contains(self, u, v) -> np.ndarray:
        return (u >= self.u_min) & (u <= self.u_max) & (v >= self.v_min) & (v <= self.v_max)


def histogram_range(vectors, bin_width: int = 2, frac: float = 0.1) -> FlowRange | None:
    """Bounding box of the 2D histogram bins holding at least ``frac`` of the fullest bin."""
    v = np.asarray(vectors, dtype=np.float64).reshape(-1, 2)
    v = v[np.all(np.isfinite(v), axis=1)]
    if len(v) == 0:
        return None
    b = np.floor(v / bin_width).astype(np.int64)
    keys, counts = np.unique(b, axis=0, return_counts=True)
    keep = keys[counts >= frac * counts.max()]
    lo = keep.min(axis=0) * bin_width
    hi = (keep.max(axis=0) + 1) * bin_width
    return FlowRange(int(lo[0]), int(hi[0]), int(lo[1]), int(hi[1]))


def feature_range(component, features) -> FlowRange | None:
    """Min/max displacement of the matches whose source lies in ``component``."""
    if features is None:
        return None
    src, dst = (np.asarray(a, dtype=np.float64).reshape(-1, 2) for a in features)
    if len(src) == 0:
        return None
    h, w = component.shape
    xi = np.rint(src[:, 0]).astype(np.int64)
    yi = np.rint(src[:, 1]).astype(np.int64)
    inb = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    sel = np.zeros(len(src), dtype=bool)
    sel[inb] = component[yi[inb], xi[inb]]
    if not sel.any():
        return None
    d = dst[sel] - src[sel]
    return FlowRange.around(d[:, 0], d[:, 1])


def estimate_range(component, f_pri=None, pri_valid=None, f_rig=None, features=None,
                   params: FlowParams = FlowParams()) -> FlowRange:
    """Union of the feature, prior-flow and rigid-flow ranges of a component, padded and capped."""
    comp = np.asarray(component, dtype=bool)
    parts = [feature_range(comp, features)]
    if f_pri is not None:
        sel = comp if pri_valid is None else comp & np.asarray(pri_valid, dtype=bool)
        parts.append(histogram_range(np.asarray(f_pri)[sel], params.bin, params.frac))
    if f_rig is not None:
        parts.append(histogram_range(np.asarray(f_rig)[comp], params.bin, params.frac))
    parts = [p for p in parts if p is not None]
    if not parts:
        f = params.fallback
        return FlowRange(-f, f, -f, f)
    r = parts[0]
    for p in parts[1:]:
        r = r.union(p)
    return r.padded(params.pad).capped(params.max_side)


def components(mask) -> list:
    """8-connected components of ``mask`` as boolean maps, in label order."""
    m = np.asarray(mask, dtype=np.uint8)
    n, lab = cv2.connectedComponents(m, connectivity=8)
    return [lab == k for k in range(1, n)]


def _bbox(mask):
    ys, xs = np.nonzero(mask)
    return int(ys.min()), int(ys.max()) + 1, int(xs.min()), int(xs.max()) + 1


def masked_sgm_flow(img0, img1, mask, frange: FlowRange, params: FlowParams = FlowParams(), threads=None):
    """SGM flow with subpixel fit on the pixels of ``mask``; NaN elsewhere."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    out = np.full((h, w, 2), np.nan)
    if not mask.any():
        return out
    box = _bbox(mask)
    y0, y1, x0, x1 = box
    vol = flow_cost_volume(to_gray(img0), to_gray(img1), frange.as_tuple(), params.tau, mask, box)
    crop = np.asarray(img0, dtype=np.float64)[y0:y1, x0:x1]
    ew = direction_color_weights(crop, params.sgm.directions)
    res = sgm_2d(vol, params.sgm, ew, subpixel=True, threads=threads)
    out[y0:y1, x0:x1] = res.labeling
    return out


def geodesic_kernel(disparity, center, radius: int = 15, kappa: float = 2.0) -> np.ndarray:
    """``exp(-d_geo / kappa)`` over the ``(2 radius + 1)^2`` window; zero outside the image."""
    d = np.nan_to_num(np.asarray(disparity, dtype=np.float64), nan=0.0)
    dist = _backend.geodesic_distance(d, center[1], center[0], radius)
    return np.exp(-dist / kappa)


def weighted_median_fill(flow, valid, holes, disparity, radius: int = 15, kappa: float = 2.0, threads=None):
    """Replace ``holes`` by the geodesic weighted median (per component) of valid vectors in the window."""
    out = np.array(flow, dtype=np.float64)
    ys, xs = np.nonzero(holes)
    if len(ys) == 0:
        return out, np.zeros(len(ys), dtype=bool)
    d = np.nan_to_num(np.asarray(disparity, dtype=np.float64), nan=0.0)
    fu = np.nan_to_num(out[..., 0])
    fv = np.nan_to_num(out[..., 1])
    ou, ov = _backend.geodesic_wmedian(fu, fv, valid, d, ys, xs, radius, kappa, threads)
    filled = np.isfinite(ou) & np.isfinite(ov)
    out[ys[filled], xs[filled], 0] = ou[filled]
    out[ys[filled], xs[filled], 1] = ov[filled]
    return out, filled


@dataclass
class FlowResult:
    flow: np.ndarray  # F_non on the mask, F_rig elsewhere
    consistent: np.ndarray  # forward vectors passing the bi-directional check
    raw: np.ndarray  # forward SGM flow before filtering, NaN off the mask
    ranges: list = field(default_factory=list)


def nonrigid_flow(img0, img1, mask, f_rig, disparity, f_pri=None, pri_valid=None, features=None,
                  params: FlowParams = FlowParams(), threads=None) -> FlowResult:
    """Per-component forward/backward SGM flow, consistency check, rigid background fill and median filters."""
    mask = np.asarray(mask, dtype=bool)
    f_rig = np.nan_to_num(np.asarray(f_rig, dtype=np.float64))
    h, w = mask.shape
    raw = np.full((h, w, 2), np.nan)
    ok = np.zeros((h, w), dtype=bool)
    ranges = []
    for comp in components(mask):
        rng = estimate_range(comp, f_pri, pri_valid, f_rig, features, params)
        ranges.append(rng)
        f0 = masked_sgm_flow(img0, img1, comp, rng, params, threads)
        m1 = forward_warp_mask(comp, np.nan_to_num(f0), params.mask_dilate)
        f1 = masked_sgm_flow(img1, img0, m1, rng.negated(), params, threads)
        raw[comp] = f0[comp]
        ok |= comp & bidirectional_check(np.where(comp[..., None], f0, np.nan), f1, params.check_tol)
    flow = np.where(mask[..., None], np.nan_to_num(raw), f_rig)
    if mask.any():
        holes = mask & ~ok
        flow, filled = weighted_median_fill(flow, ~mask | ok, holes, disparity, params.wm_radius,
                                            params.kappa_geo, threads)
        ys, xs = np.nonzero(holes)
        flow[ys[~filled], xs[~filled]] = f_rig[ys[~filled], xs[~filled]]
        med = np.stack([cv2.medianBlur(flow[..., c].astype(np.float32), params.median) for c in range(2)], -1)
        flow[mask] = med[mask]
    return FlowResult(flow, ok, raw, ranges)
