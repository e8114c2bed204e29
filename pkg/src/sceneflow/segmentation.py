"""Initial motion segmentation: unary cue maps, edge-aware Potts weights and GrabCut-style alternation."""
from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np
from skimage.segmentation import slic

from .geometry import Pose, StereoRig, forward_warp_mask, in_bounds, pixel_grid, visibility_map, warp_points
from .matching import tncc_points, to_gray
from .maxflow import OFFSETS, BinaryMrf, GraphCutSolver, edge_slices, energy

BINS = 64
KAPPA_FLOOR = 1e-6


@dataclass(frozen=True)
class SegParams:
    tau: float = 1.0
    lam_ncc: float = 4.0
    tau_ncc: float = 0.5
    tau_w: float = 0.005
    lam_flo: float = 4.0
    tau_flo: float = 0.75
    gamma: float = 0.3
    lam_col: float = 0.5
    lam_mask: float = 2.0
    mask_bg: float = -0.1
    mask_dilate: int = 2
    lam_potts: float = 10.0
    kappa3: float = 0.2
    lam_gro: float = 10.0
    gro_frac: float = 0.01
    ground: bool = False
    max_iter: int = 5
    superpixels: int = 850
    smooth: bool = True


# ---------------------------------------------------------------- color model

def color_bins(img, bins: int = BINS) -> np.ndarray:
    """Flat histogram bin of every pixel; ``img`` is RGB (or gray) in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    q = np.clip(np.floor(img * bins), 0, bins - 1).astype(np.int64)
    return (q[..., 0] * bins + q[..., 1]) * bins + q[..., 2]


def _histogram(idx: np.ndarray, bins: int) -> np.ndarray:
    h = np.bincount(idx, minlength=bins ** 3).astype(np.float64) + 1.0
    return (h / h.sum()).reshape(bins, bins, bins)


@dataclass
class ColorModel:
    theta0: np.ndarray  # background
    theta1: np.ndarray  # foreground
    count: int = 1  # number of per-frame models averaged in

    @property
    def bins(self) -> int:
        return self.theta0.shape[0]

    @classmethod
    def fit(cls, img, labels, bins: int = BINS) -> "ColorModel":
        """Laplace-smoothed (+1 per bin) histograms of background and foreground pixels."""
        idx = color_bins(img, bins).ravel()
        s = np.asarray(labels, dtype=bool).ravel()
        return cls(_histogram(idx[~s], bins), _histogram(idx[s], bins))

    def averaged(self, other: "ColorModel") -> "ColorModel":
        """Running arithmetic mean with one more per-frame model."""
        n = self.count
        return ColorModel((self.theta0 * n + other.theta0) / (n + 1), (self.theta1 * n + other.theta1) / (n + 1),
                          n + 1)

    def log_ratio(self, img) -> np.ndarray:
        idx = color_bins(img, self.bins)
        return np.log(self.theta1.ravel()[idx]) - np.log(self.theta0.ravel()[idx])

    def log_prior(self) -> float:
        """Log density of the +1 pseudo-count prior; makes the refit an exact minimizer."""
        return float(np.log(self.theta0).sum() + np.log(self.theta1).sum())


def color_term(img, model: ColorModel | None, lam_col: float = 0.5) -> np.ndarray:
    """``lam_col * (log theta1 - log theta0)`` per pixel; zero without a model."""
    shape = np.asarray(img).shape[:2]
    if model is None:
        return np.zeros(shape)
    return lam_col * model.log_ratio(img)


# ---------------------------------------------------------------- data terms

def appearance_term(img, targets, disparity, rig: StereoRig, w_var, params: SegParams = SegParams()) -> np.ndarray:
    """Averaged ``TNCC - tau_ncc`` over rigidly warped targets, weighted by ``lam_ncc * w_var``.

    ``targets`` holds ``(image, pose)`` pairs. A target is skipped where the
    warped point leaves the image; where the visibility test predicts
    occlusion the per-target value is capped at 0.
    """
    g = to_gray(img)
    h, w = g.shape
    disparity = np.asarray(disparity, dtype=np.float64)
    uu, vv = pixel_grid(h, w)
    acc = np.zeros((h, w))
    cnt = np.zeros((h, w))
    fin = np.isfinite(disparity)
    for tgt, pose in targets:
        up, vp, zh = warp_points(uu, vv, disparity, rig, pose)
        with np.errstate(invalid="ignore"):
            ok = fin & (zh > 0) & np.isfinite(up) & np.isfinite(vp) & in_bounds(up, vp, w, h)
        ys, xs = np.nonzero(ok)
        if len(ys) == 0:
            continue
        c = tncc_points(g, to_gray(tgt), xs, ys, up[ok], vp[ok], params.tau) - params.tau_ncc
        vis = visibility_map(np.where(fin, disparity, 0.0), rig, pose)[ok]
        c = np.where(vis, c, np.minimum(c, 0.0))
        acc[ok] += c
        cnt[ok] += 1
    avg = np.divide(acc, cnt, out=np.zeros((h, w)), where=cnt > 0)
    out = params.lam_ncc * np.asarray(w_var, dtype=np.float64) * avg
    lo = -params.lam_ncc * params.tau_ncc
    hi = params.lam_ncc * (params.tau - params.tau_ncc)
    assert np.all((out >= lo - 1e-9) & (out <= hi + 1e-9))
    return out


def flow_term(f_rig, f_other, valid, w_var, params: SegParams = SegParams()) -> np.ndarray:
    """``lam_flo * w_var * (min(r, 2 tau_p) - tau_p) / tau_p`` with ``tau_p = max(tau_flo, gamma |F_rig|)``."""
    f_rig = np.asarray(f_rig, dtype=np.float64)
    f_other = np.asarray(f_other, dtype=np.float64)
    r = np.linalg.norm(f_rig - f_other, axis=-1)
    tau_p = np.maximum(params.tau_flo, params.gamma * np.linalg.norm(f_rig, axis=-1))
    with np.errstate(invalid="ignore"):
        val = (np.minimum(r, 2.0 * tau_p) - tau_p) / tau_p
    ok = np.asarray(valid, dtype=bool) & np.isfinite(val)
    out = np.where(ok, params.lam_flo * np.asarray(w_var, dtype=np.float64) * np.where(ok, val, 0.0), 0.0)
    assert np.all(np.abs(out) <= params.lam_flo + 1e-9)
    return out


def soft_mask(prev_mask, prev_flow, dilate: int = 2, background: float = -0.1) -> np.ndarray:
    """Signed soft mask: 1 where the previous mask lands after warping by the previous flow, else ``background``."""
    fg = forward_warp_mask(np.asarray(prev_mask, dtype=bool), np.asarray(prev_flow, dtype=np.float64), dilate)
    return np.where(fg, 1.0, background)


def ground_prior(disparity, d_max: float, params: SegParams = SegParams(), iters: int = 200, inlier: float = 1.0,
                 min_support: float = 0.2, seed: int = 0) -> np.ndarray:
    """RANSAC ground plane ``d = a u + b v + c`` (``b > 0``, ``|a| < 0.1 b``) turned into a background cue.

    ``C = lam_gro * (min(r, tau_gro) / tau_gro - 1)`` with ``tau_gro = gro_frac * d_max``; zero map when the
    plane has less than ``min_support`` of the valid pixels as inliers.
    """
    d = np.asarray(disparity, dtype=np.float64)
    h, w = d.shape
    out = np.zeros((h, w))
    uu, vv = pixel_grid(h, w)
    valid = np.isfinite(d)
    n = int(valid.sum())
    if n < 3:
        return out
    pu, pv, pd = uu[valid], vv[valid], d[valid]
    rng = np.random.default_rng(seed)
    # evaluate hypotheses on a fixed subsample
    sub = rng.choice(n, size=min(n, 20000), replace=False)
    su, sv, sd = pu[sub], pv[sub], pd[sub]
    best, best_cnt = None, -1
    for _ in range(iters):
        i = rng.choice(n, size=3, replace=False)
        a_mat = np.stack([pu[i], pv[i], np.ones(3)], axis=1)
        if abs(np.linalg.det(a_mat)) < 1e-9:
            continue
        a, b, c = np.linalg.solve(a_mat, pd[i])
        if not (b > 0 and abs(a) < 0.1 * b):
            continue
        cnt = int(np.sum(np.abs(a * su + b * sv + c - sd) < inlier))
        if cnt > best_cnt:
            best, best_cnt = (a, b, c), cnt
    if best is None or best_cnt < min_support * len(sub):
        return out
    a, b, c = best
    tau_g = params.gro_frac * d_max
    r = np.abs(d - (a * uu + b * vv + c))
    out[valid] = params.lam_gro * (np.minimum(r[valid], tau_g) / tau_g - 1.0)
    return out


@dataclass
class SegPriors:
    mask: np.ndarray | None = None  # soft mask in [-0.1, 1]
    color: ColorModel | None = None  # averaged past models
    ground: np.ndarray | None = None  # <= 0


def prior_term(img, priors: SegPriors | None, params: SegParams = SegParams()) -> np.ndarray:
    """``lam_mask * C_mask + C_pcol (+ C_gro)``; zero map without priors."""
    shape = np.asarray(img).shape[:2]
    out = np.zeros(shape)
    if priors is None:
        return out
    if priors.mask is not None:
        out += params.lam_mask * priors.mask
    if priors.color is not None:
        out += color_term(img, priors.color, params.lam_col)
    if priors.ground is not None:
        out += priors.ground
    return out


# ---------------------------------------------------------------- pairwise

def edge_map(img, sigma: float = 1.5) -> np.ndarray:
    """Sobel magnitude of the blurred image scaled by its 99th percentile, clamped to [0, 1]."""
    g = to_gray(img).astype(np.float64)
    g = cv2.GaussianBlur(g, (0, 0), sigma, borderType=cv2.BORDER_REPLICATE)
    gx = cv2.Sobel(g, cv2.CV_64F, 1, 0, ksize=3, borderType=cv2.BORDER_REPLICATE)
    gy = cv2.Sobel(g, cv2.CV_64F, 0, 1, ksize=3, borderType=cv2.BORDER_REPLICATE)
    mag = np.hypot(gx, gy)
    p = float(np.percentile(mag, 99))
    if p <= 0:
        return np.zeros_like(mag)
    return np.clip(mag / p, 0.0, 1.0)


def disparity_laplacian(disparity) -> np.ndarray:
    d = np.nan_to_num(np.asarray(disparity, dtype=np.float64), nan=0.0)
    return np.abs(cv2.Laplacian(d, cv2.CV_64F, ksize=1, borderType=cv2.BORDER_REPLICATE))


@dataclass
class EdgeWeights:
    col: np.ndarray  # (4, H, W) over maxflow.OFFSETS
    dep: np.ndarray
    str: np.ndarray
    kappa1: float
    kappa2: float
    kappa3: float
    lam_potts: float

    @property
    def total(self) -> np.ndarray:
        return self.lam_potts * (self.col + self.dep + self.str)


def _pair_values(a: np.ndarray, fn):
    """``fn(a_p, a_q)`` on every forward 8-neighbour edge, as (4, H, W) plus the flat sample."""
    shape = a.shape[:2]
    out = np.zeros((4,) + shape)
    vals = []
    for k in range(4):
        p, q = edge_slices(shape, k)
        v = fn(a[p], a[q])
        out[k][p] = v
        vals.append(v.ravel())
    return out, np.concatenate(vals)


def potts_weights(img, disparity, edges=None, params: SegParams = SegParams()) -> EdgeWeights:
    """``w_col``, ``w_dep`` and ``w_str`` on the 8-connected grid; kappas 1 and 2 are sample means."""
    im = np.asarray(img, dtype=np.float64)
    if im.ndim == 2:
        im = im[..., None]
    shape = im.shape[:2]
    d2, s2 = _pair_values(im, lambda a, b: np.sum((a - b) ** 2, axis=-1))
    k1 = max(2.0 * float(s2.mean()), KAPPA_FLOOR)
    lap = disparity_laplacian(disparity)
    ls, sl = _pair_values(lap, lambda a, b: np.abs(a + b))
    k2 = max(2.0 * float(sl.mean()), KAPPA_FLOOR)
    e = edge_map(img) if edges is None else np.asarray(edges, dtype=np.float64)
    es, _ = _pair_values(e, lambda a, b: np.abs(a + b))
    exists = np.zeros((4,) + shape, dtype=bool)
    for k in range(4):
        exists[k][edge_slices(shape, k)[0]] = True
    col = np.where(exists, np.exp(-d2 / k1), 0.0)
    dep = np.where(exists, np.exp(-ls / k2), 0.0)
    st = np.where(exists, np.exp(-es / params.kappa3), 0.0)
    return EdgeWeights(col, dep, st, k1, k2, params.kappa3, params.lam_potts)


# ---------------------------------------------------------------- smoothing and prior flow

def superpixels(img, n_segments: int = 850, iters: int = 10, compactness: float = 40.0) -> np.ndarray:
    """SLIC labels; the high compactness keeps the count near ``n_segments`` on noisy textures."""
    im = np.asarray(img, dtype=np.float64)
    axis = None if im.ndim == 2 else -1
    return slic(im, n_segments=n_segments, compactness=compactness, max_num_iter=iters, start_label=0,
                channel_axis=axis)


def smooth_costs(cost, labels, mask=None) -> np.ndarray:
    """Replace every value by the mean over its superpixel.

    With ``mask``, means are taken over the masked pixels of each segment and
    only masked pixels change.
    """
    cost = np.asarray(cost, dtype=np.float64)
    lab = np.asarray(labels).ravel()
    sel = np.ones(lab.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).ravel()
    n = int(lab.max()) + 1 if lab.size else 0
    sums = np.bincount(lab[sel], weights=cost.ravel()[sel], minlength=n)
    cnt = np.bincount(lab[sel], minlength=n)
    means = sums / np.maximum(cnt, 1)
    out = cost.ravel().copy()
    out[sel] = means[lab[sel]]
    return out.reshape(cost.shape)


def _zncc_search(g0, g1w, block, radius):
    """Best integer shift in ``[-radius, radius]^2`` of ``g1w`` against ``g0`` with parabola offsets."""
    h, w = g0.shape
    k = (block, block)
    bt = cv2.BORDER_REPLICATE
    m0 = cv2.blur(g0, k, borderType=bt)
    v0 = cv2.blur(g0 * g0, k, borderType=bt) - m0 * m0
    n = 2 * radius + 1
    scores = np.empty((n, n, h, w))
    pad = cv2.copyMakeBorder(g1w, radius, radius, radius, radius, bt)
    for j, dy in enumerate(range(-radius, radius + 1)):
        for i, dx in enumerate(range(-radius, radius + 1)):
            g1 = pad[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
            m1 = cv2.blur(g1, k, borderType=bt)
            v1 = cv2.blur(g1 * g1, k, borderType=bt) - m1 * m1
            cov = cv2.blur(g0 * g1, k, borderType=bt) - m0 * m1
            den = v0 * v1
            with np.errstate(invalid="ignore", divide="ignore"):
                s = np.where(den > 1e-12, cov / np.sqrt(np.maximum(den, 1e-300)), 0.0)
            scores[j, i] = s
    flat = scores.reshape(n * n, h, w)
    centre = radius * n + radius
    # zero shift wins ties
    best = np.full((h, w), centre)
    bs = flat[centre].copy()
    for idx in range(n * n):
        better = flat[idx] > bs
        best[better] = idx
        bs[better] = flat[idx][better]
    by, bx = np.divmod(best, n)

    def fit(a, b, c):
        den = a - 2 * b + c
        with np.errstate(invalid="ignore", divide="ignore"):
            off = np.where(den < 0, 0.5 * (a - c) / den, 0.0)
        return np.clip(np.nan_to_num(off), -0.5, 0.5)

    yy, xx = np.mgrid[0:h, 0:w]
    s0 = scores[by, bx, yy, xx]
    sx = fit(scores[by, np.maximum(bx - 1, 0), yy, xx], s0, scores[by, np.minimum(bx + 1, n - 1), yy, xx])
    sy = fit(scores[np.maximum(by - 1, 0), bx, yy, xx], s0, scores[np.minimum(by + 1, n - 1), bx, yy, xx])
    sx[(bx == 0) | (bx == n - 1)] = 0.0
    sy[(by == 0) | (by == n - 1)] = 0.0
    return np.stack([bx - radius + sx, by - radius + sy], axis=-1)


def _remap(img, flow):
    h, w = img.shape[:2]
    uu, vv = pixel_grid(h, w)
    return cv2.remap(img, (uu + flow[..., 0]).astype(np.float32), (vv + flow[..., 1]).astype(np.float32),
                     cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)


def block_flow(img0, img1, levels: int = 3, block: int = 9, radius: int = 4) -> np.ndarray:
    """Coarse-to-fine ZNCC block matching; dense ``(H, W, 2)`` flow from ``img0`` to ``img1``."""
    g0 = to_gray(img0).astype(np.float64)
    g1 = to_gray(img1).astype(np.float64)
    pyr = [(g0, g1)]
    for _ in range(levels - 1):
        a, b = pyr[-1]
        pyr.append((cv2.pyrDown(a), cv2.pyrDown(b)))
    flow = None
    for a, b in reversed(pyr):
        h, w = a.shape
        if flow is None:
            flow = np.zeros((h, w, 2))
        else:
            flow = 2.0 * cv2.resize(flow, (w, h), interpolation=cv2.INTER_LINEAR)
        warped = _remap(b, flow)
        flow = flow + _zncc_search(a, warped, block, radius)
        flow = np.stack([cv2.medianBlur(flow[..., c].astype(np.float32), 5) for c in range(2)], -1).astype(np.float64)
    return flow


def bidirectional_check(fwd, bwd, tol: float = 1.0) -> np.ndarray:
    """``|F_f(p) + F_b(p + F_f(p))| <= tol`` with nearest sampling; targets outside the image fail."""
    h, w = fwd.shape[:2]
    uu, vv = pixel_grid(h, w)
    with np.errstate(invalid="ignore"):
        xt = np.rint(uu + fwd[..., 0])
        yt = np.rint(vv + fwd[..., 1])
        inb = np.isfinite(xt) & np.isfinite(yt) & (xt >= 0) & (xt < w) & (yt >= 0) & (yt < h)
    xi = np.where(inb, xt, 0).astype(np.int64)
    yi = np.where(inb, yt, 0).astype(np.int64)
    back = bwd[yi, xi]
    with np.errstate(invalid="ignore"):
        err = np.linalg.norm(fwd + back, axis=-1)
        return inb & (err <= tol)


def prior_flow(img0, img1, levels: int = 3, block: int = 9, radius: int = 4, tol: float = 1.0):
    """Block-matching flow with a bi-directional validity mask."""
    fwd = block_flow(img0, img1, levels, block, radius)
    bwd = block_flow(img1, img0, levels, block, radius)
    return fwd, bidirectional_check(fwd, bwd, tol)


# ---------------------------------------------------------------- alternation

@dataclass
class SegResult:
    mask: np.ndarray
    model: ColorModel
    energies: list = field(default_factory=list)  # MAP energy after each cut
    iterations: int = 0


def seg_mrf(cost, weights: EdgeWeights, fixed=None) -> BinaryMrf:
    """Background pays ``cost``; foreground pays nothing."""
    cost = np.asarray(cost, dtype=np.float64)
    return BinaryMrf(cost, np.zeros_like(cost), weights.total, fixed)


def map_energy(img, labels, base, model: ColorModel, weights: EdgeWeights, lam_col: float) -> float:
    """Segmentation energy with the color term in per-label form plus the histogram prior.

    It differs from the cut energy by a label-independent constant, and the
    Laplace-smoothed refit minimizes it exactly, so the alternation never
    increases it.
    """
    s = np.asarray(labels, dtype=bool)
    idx = color_bins(img, model.bins)
    l0 = -lam_col * np.log(model.theta0.ravel()[idx])
    l1 = -lam_col * np.log(model.theta1.ravel()[idx])
    mrf = BinaryMrf(np.asarray(base, dtype=np.float64) + l0, l1, weights.total)
    return energy(mrf, s) - lam_col * model.log_prior()


def segment(img, base_cost, init, weights: EdgeWeights, params: SegParams = SegParams()) -> SegResult:
    """GrabCut-style alternation of graph cuts and color-model refits.

    ``base_cost`` is the sum of every unary except the current color term;
    ``init`` seeds the color models. Stops after ``max_iter`` cuts or when
    the labeling no longer changes.
    """
    base_cost = np.asarray(base_cost, dtype=np.float64)
    labels = np.asarray(init, dtype=bool)
    model = ColorModel.fit(img, labels)
    solver = None
    energies = []
    it = 0
    for it in range(1, params.max_iter + 1):
        u0 = base_cost + color_term(img, model, params.lam_col)
        if solver is None:
            solver = GraphCutSolver(seg_mrf(u0, weights))
            new, _ = solver.min_cut()
        else:
            new, _ = solver.resolve(u0, np.zeros_like(u0))
        energies.append(map_energy(img, new, base_cost, model, weights, params.lam_col))
        changed = bool(np.any(new != labels))
        labels = new
        model = ColorModel.fit(img, labels)
        if not changed:
            break
    return SegResult(labels, model, energies, it)


@dataclass
class SegTerms:
    ncc: np.ndarray
    flo: np.ndarray
    pri: np.ndarray

    @property
    def evidence(self) -> np.ndarray:
        return self.ncc + self.flo


def initial_segmentation(img, terms: SegTerms, weights: EdgeWeights, params: SegParams = SegParams(),
                         labels=None) -> SegResult:
    """Smooth the noisy cue maps over superpixels, seed with positive evidence and alternate."""
    ncc, flo = terms.ncc, terms.flo
    if params.smooth:
        if labels is None:
            labels = superpixels(img, params.superpixels)
        ncc = smooth_costs(ncc, labels)
        flo = smooth_costs(flo, labels)
    init = (ncc + flo) > 0
    return segment(img, ncc + flo + terms.pri, init, weights, params)
