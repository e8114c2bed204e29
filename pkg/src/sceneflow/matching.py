"""Patch NCC / TNCC scores and cost volumes over disparity and flow labels."""
from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from . import _backend
from .geometry import Pose, StereoRig, warp_points

INVALID = float("nan")


@dataclass
class CostVolume:
    """Per-pixel costs ``cost[v, u, k]`` over labels ``labels[k]``.

    1D volumes have ``labels`` of shape ``(L,)`` and ``grid = (L, 1)``. 2D
    volumes have ``labels`` of shape ``(L, 2)`` holding ``(du, dv)`` in
    row-major order of ``grid = (n_u, n_v)``, so label index order is
    lexicographic in ``(du, dv)``. ``mask`` marks pixels that carry costs.
    """

    cost: np.ndarray
    labels: np.ndarray
    grid: tuple
    tau: float
    mask: np.ndarray

    @property
    def is_2d(self) -> bool:
        return self.labels.ndim == 2

    @property
    def n_labels(self) -> int:
        return self.cost.shape[2]


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        return img
    return (0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]).astype(np.float32)


def ncc(img_a, p, img_b, q) -> float:
    """Zero-mean NCC of the 5x5 patch at integer ``p`` in ``img_a`` and at continuous ``q`` in ``img_b``.

    Returns ``INVALID`` (NaN) when ``q`` lies outside ``img_b``.
    """
    r = _backend.ncc_points(to_gray(img_a), to_gray(img_b), [int(round(p[0]))], [int(round(p[1]))],
                            [float(q[0])], [float(q[1])])
    return float(r[0])


def tncc_from_ncc(score, tau: float = 1.0):
    """``min(1 - NCC, tau)`` with invalid scores mapped to ``tau``."""
    score = np.asarray(score, dtype=np.float64)
    out = np.fmin(np.subtract(1.0, score), tau)  # NaN scores become tau
    return float(out) if out.ndim == 0 else out


def tncc(img_a, p, img_b, q, tau: float = 1.0) -> float:
    return tncc_from_ncc(ncc(img_a, p, img_b, q), tau)


def tncc_points(ref, tgt, xs, ys, qx, qy, tau: float = 1.0) -> np.ndarray:
    return tncc_from_ncc(_backend.ncc_points(ref, tgt, xs, ys, qx, qy), tau)


def _mask_coords(shape, mask):
    if mask is None:
        mask = np.ones(shape, dtype=bool)
    ys, xs = np.nonzero(mask)
    return mask, xs.astype(np.int32), ys.astype(np.int32)


def _fill_volume(ref, tgt, shape, mask, labels, targets, tau, box=None):
    """``targets(k, xs, ys) -> (qx, qy)`` for label ``k``.

    With ``box = (y0, y1, x0, x1)`` only that window of ``ref`` is stored;
    coordinates passed to ``targets`` stay in full-image pixels.
    """
    ref = to_gray(ref)
    tgt = to_gray(tgt)
    oy, ox = 0, 0
    if box is not None:
        y0, y1, x0, x1 = box
        oy, ox = y0, x0
        shape = (y1 - y0, x1 - x0)
        mask = None if mask is None else np.asarray(mask, dtype=bool)[y0:y1, x0:x1]
    mask, xs, ys = _mask_coords(shape, mask)
    n_l = len(labels)
    cost = np.full(shape + (n_l,), tau, dtype=np.float32)
    if len(xs) == 0:
        return cost, mask
    cys, cxs = ys, xs
    xs = (xs + ox).astype(np.int32)
    ys = (ys + oy).astype(np.int32)
    step = max(1, (1 << 21) // len(xs))
    for k0 in range(0, n_l, step):
        ks = range(k0, min(k0 + step, n_l))
        q = [targets(k, xs, ys) for k in ks]
        qx = np.concatenate([a for a, _ in q])
        qy = np.concatenate([b for _, b in q])
        vals = tncc_points(ref, tgt, np.tile(xs, len(ks)), np.tile(ys, len(ks)), qx, qy, tau)
        cost[cys, cxs, k0:k0 + len(ks)] = vals.reshape(len(ks), -1).T
    return cost, mask


def stereo_cost_volume(left, right, d_max: int, tau: float = 1.0, d_min: int = 0, mask=None) -> CostVolume:
    """``cost(p, d) = tncc(p, p - (d, 0))`` for integer ``d`` in ``[d_min, d_max]``."""
    labels = np.arange(d_min, d_max + 1, dtype=np.float64)
    gl = to_gray(left)
    shape = gl.shape
    cost = tncc_from_ncc(_backend.ncc_shift_volume(gl, to_gray(right), d_min, d_max), tau).astype(np.float32)
    mask = np.ones(shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    cost[~mask] = tau
    return CostVolume(cost, labels, (len(labels), 1), tau, mask)


def pose_cost_volume(ref, target, d_range, rig: StereoRig, pose: Pose, tau: float = 1.0, mask=None) -> CostVolume:
    """``cost(p, d) = tncc(p, rigid_warp(p, d))``; points behind the camera cost ``tau``."""
    d_min, d_max = d_range
    labels = np.arange(d_min, d_max + 1, dtype=np.float64)
    shape = to_gray(ref).shape

    def targets(k, xs, ys):
        up, vp, zh = warp_points(xs, ys, labels[k], rig, pose)
        bad = ~(zh > 0)
        up = np.where(bad, np.nan, up)
        return up, vp

    cost, mask = _fill_volume(ref, target, shape, mask, labels, targets, tau)
    return CostVolume(cost, labels, (len(labels), 1), tau, mask)


def flow_labels(frange) -> tuple[np.ndarray, tuple]:
    u_min, u_max, v_min, v_max = (int(x) for x in frange)
    if u_max < u_min or v_max < v_min:
        raise ValueError(f"empty flow range {frange}")
    us = np.arange(u_min, u_max + 1)
    vs = np.arange(v_min, v_max + 1)
    uu, vv = np.meshgrid(us, vs, indexing="ij")
    return np.stack([uu.ravel(), vv.ravel()], axis=1).astype(np.float64), (len(us), len(vs))


def flow_cost_volume(ref, target, frange, tau: float = 1.0, mask=None, box=None) -> CostVolume:
    """``cost(p, u) = tncc(p, p + u)`` for 2D integer shifts in ``frange = (u_min, u_max, v_min, v_max)``.

    ``box = (y0, y1, x0, x1)`` restricts the stored volume to a window of ``ref``.
    """
    labels, grid = flow_labels(frange)
    shape = to_gray(ref).shape

    def targets(k, xs, ys):
        return xs + labels[k, 0], ys + labels[k, 1]

    cost, mask = _fill_volume(ref, target, shape, mask, labels, targets, tau, box)
    return CostVolume(cost, labels, grid, tau, mask)


def patch_stddev(img) -> np.ndarray:
    g = to_gray(img).astype(np.float64)
    m = cv2.blur(g, (5, 5), borderType=cv2.BORDER_REPLICATE)
    m2 = cv2.blur(g * g, (5, 5), borderType=cv2.BORDER_REPLICATE)
    var = m2 - m * m
    # cancellation noise on flat patches
    var[var < 1e-12] = 0.0
    return np.sqrt(var)


def patch_stddev_weight(img, tau_w: float = 0.005) -> np.ndarray:
    """``min(std, tau_w) / tau_w`` of the 5x5 patch around each pixel."""
    return np.minimum(patch_stddev(img), tau_w) / tau_w
