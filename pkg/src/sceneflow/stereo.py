"""Binocular SGM stereo, occlusion and uncertainty maps, range reduction and multi-frame refinement."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, StereoRig
from .matching import CostVolume, pose_cost_volume, stereo_cost_volume, to_gray
from .sgm import SgmParams, direction_color_weights, sgm_1d


@dataclass(frozen=True)
class StereoParams:
    d_max: int = 96  # global maximum disparity at working scale
    tau: float = 1.0
    lr_tol: float = 1.0
    tau_u: float = 3.0  # 90th percentile of U on a calibration scene
    tau_c: float = 0.1
    tau_epi: float = 0.25
    hist_frac: float = 0.005
    sgm: SgmParams = field(default_factory=SgmParams)


@dataclass
class StereoOutput:
    disparity: np.ndarray  # subpixel; NaN where undefined
    occlusion: np.ndarray  # True = occluded / inconsistent
    uncertainty: np.ndarray
    flat: np.ndarray  # pixels whose costs do not discriminate labels
    d_max: int
    cost: CostVolume | None = None
    index: np.ndarray | None = None

    def normalized_uncertainty(self, tau_u: float) -> np.ndarray:
        """``u = min(U / tau_u, 1)``; flat pixels count as fully uncertain."""
        u = np.minimum(self.uncertainty / tau_u, 1.0)
        u[self.flat] = 1.0
        return u

    def unreliable(self, tau_u: float) -> np.ndarray:
        return (self.uncertainty > tau_u) | self.flat


def lr_consistency(d_left: np.ndarray, d_right: np.ndarray, tol: float = 1.0) -> np.ndarray:
    """Occlusion mask: ``|D_L(p) - D_R(p - (D_L(p), 0))| > tol`` or target outside the image."""
    h, w = d_left.shape
    xs = np.arange(w)[None, :] - np.nan_to_num(d_left, nan=-1e9)
    xr = np.rint(xs).astype(np.int64)
    inb = (xr >= 0) & (xr < w) & np.isfinite(d_left)
    ys = np.broadcast_to(np.arange(h)[:, None], (h, w))
    dr = np.full((h, w), np.nan)
    dr[inb] = d_right[ys[inb], xr[inb]]
    with np.errstate(invalid="ignore"):
        ok = inb & (np.abs(d_left - dr) <= tol)
    return ~ok


def reduce_range(disparity: np.ndarray, occlusion: np.ndarray, d_max_global: int, frac: float = 0.005) -> int:
    """Highest unit-width histogram bin holding at least ``frac`` of the non-occluded disparities."""
    sel = ~np.asarray(occlusion, dtype=bool) & np.isfinite(disparity)
    vals = disparity[sel]
    if vals.size == 0:
        return int(d_max_global)
    bins = np.clip(np.floor(vals).astype(np.int64), 0, int(d_max_global))
    counts = np.bincount(bins, minlength=int(d_max_global) + 1)
    keep = np.flatnonzero(counts >= frac * vals.size)
    if keep.size == 0:
        return int(d_max_global)
    return int(min(keep.max(), d_max_global))


def _flat_pixels(cost: np.ndarray) -> np.ndarray:
    return np.ptp(cost, axis=2) == 0


def _solve(vol: CostVolume, img, params: StereoParams, threads):
    ew = direction_color_weights(img, params.sgm.directions)
    return sgm_1d(vol, params.sgm, ew, subpixel=True, threads=threads)


def right_volume(vol: CostVolume) -> CostVolume:
    """Right-view costs ``C_R(x, d) = C_L(x + d, d)``; NCC is symmetric, so no second matching pass."""
    h, w, nl = vol.cost.shape
    shift = vol.labels.astype(int)
    if np.array_equal(shift, np.arange(nl)):
        # element (y, x, k) sits k * (nl + 1) entries after (y, x, 0); pad the tail so the view stays in bounds
        flat = np.full(h * w * nl + nl * (nl + 1), vol.tau, dtype=vol.cost.dtype)
        flat[: h * w * nl] = vol.cost.ravel()
        s = flat.itemsize
        view = np.lib.stride_tricks.as_strided(flat, (h, w, nl), (w * nl * s, nl * s, (nl + 1) * s), writeable=False)
        inside = np.arange(w)[:, None] + shift[None, :] < w
        out = np.where(inside, view, vol.cost.dtype.type(vol.tau))
    else:
        out = np.full_like(vol.cost, vol.tau)
        for k, d in enumerate(shift):
            if d < w:
                out[:, : w - d, k] = vol.cost[:, d:, k]
    return CostVolume(out, vol.labels, vol.grid, vol.tau, np.ones((h, w), dtype=bool))


def binocular(left, right, params: StereoParams = StereoParams(), d_max: int | None = None, threads=None,
              keep_cost: bool = True) -> StereoOutput:
    """SGM disparity of the left view with left-right check and uncertainty."""
    d_max = params.d_max if d_max is None else int(d_max)
    gl, gr = to_gray(left), to_gray(right)
    vol = stereo_cost_volume(gl, gr, d_max, params.tau)
    res = _solve(vol, left, params, threads)
    res_r = _solve(right_volume(vol), right, params, threads)
    occ = lr_consistency(res.labeling, res_r.labeling, params.lr_tol)
    flat = _flat_pixels(vol.cost)
    return StereoOutput(res.labeling, occ, res.uncertainty, flat, d_max, vol if keep_cost else None, res.index)


def blend_weights(u: np.ndarray, tau_c: float = 0.1) -> np.ndarray:
    """``alpha = max(u - tau_c, 0) / (1 - tau_c)``."""
    return np.maximum(np.asarray(u, dtype=np.float64) - tau_c, 0.0) / (1.0 - tau_c)


def temporal_targets(images: dict, rig: StereoRig, pose_prev: Pose | None, pose_cur: Pose | None):
    """(image, pose) pairs seen from the current left view.

    ``images`` holds any of ``"l_prev", "r_prev", "l_next", "r_next"``.
    ``pose_prev`` maps frame t-1 to t, ``pose_cur`` maps t to t+1.
    """
    lr = rig.left_to_right
    out = []
    if pose_prev is not None:
        back = pose_prev.inverse()
        if images.get("l_prev") is not None:
            out.append((images["l_prev"], back))
        if images.get("r_prev") is not None:
            out.append((images["r_prev"], lr @ back))
    if pose_cur is not None:
        if images.get("l_next") is not None:
            out.append((images["l_next"], pose_cur))
        if images.get("r_next") is not None:
            out.append((images["r_next"], lr @ pose_cur))
    return out


def epipolar_cost(left, binoc: StereoOutput, targets, rig: StereoRig, params: StereoParams = StereoParams(),
                  d_max: int | None = None) -> tuple[CostVolume, np.ndarray]:
    """Blended cost ``(1 - alpha) C + alpha C_avr`` on ``[0, d_max]`` and the blend weights."""
    d_max = binoc.d_max if d_max is None else int(d_max)
    c = binoc.cost.cost[:, :, : d_max + 1].astype(np.float64)
    c = np.where(binoc.occlusion[..., None], np.minimum(c, params.tau_epi), c)
    u = binoc.normalized_uncertainty(params.tau_u)
    alpha = blend_weights(u, params.tau_c)
    region = u > params.tau_c
    if targets and region.any():
        acc = np.zeros_like(c)
        for img, pose in targets:
            acc += pose_cost_volume(left, img, (0, d_max), rig, pose, params.tau_epi, mask=region).cost
        avr = acc / len(targets)
        a = alpha[..., None]
        c = np.where(region[..., None], (1.0 - a) * c + a * avr, c)
    else:
        alpha = np.zeros_like(alpha)  # nothing to blend
    labels = np.arange(0, d_max + 1, dtype=np.float64)
    return CostVolume(c.astype(np.float32), labels, (len(labels), 1), params.tau, np.ones(c.shape[:2], bool)), alpha


def epipolar_refine(left, images: dict, rig: StereoRig, pose_prev: Pose | None, pose_cur: Pose | None,
                    binoc: StereoOutput, params: StereoParams = StereoParams(), d_max: int | None = None,
                    threads=None) -> StereoOutput:
    """Re-run SGM on the binocular cost blended with the temporal pose-warped costs."""
    targets = temporal_targets(images, rig, pose_prev, pose_cur)
    vol, _ = epipolar_cost(left, binoc, targets, rig, params, d_max)
    res = _solve(vol, left, params, threads)
    return StereoOutput(res.labeling, binoc.occlusion, res.uncertainty, _flat_pixels(vol.cost),
                        vol.n_labels - 1, vol, res.index)
