"""Fusion of the rigid and non-rigid flow proposals by a binary graph cut on the initial foreground."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import in_bounds, pixel_grid
from .matching import tncc_points, to_gray
from .maxflow import BinaryMrf, GraphCutSolver, energy
from .segmentation import EdgeWeights, SegParams, flow_term, smooth_costs


def fusion_unaries(img0, img1, f_rig, f_non, consistent, w_var, mask=None, params: SegParams = SegParams()):
    """Fusion cues ``(C_ncc, C_flo)``.

    ``C_ncc = lam_ncc * w_var * (TNCC(p, p + F_rig) - TNCC(p, p + F_non))`` and
    ``C_flo`` compares ``F_rig`` with ``F_non``. Both vanish where the rigid
    target leaves the image or ``F_non`` failed the consistency check, and
    outside ``mask`` when given.
    """
    g0 = to_gray(img0)
    g1 = to_gray(img1)
    h, w = g0.shape
    f_rig = np.asarray(f_rig, dtype=np.float64)
    f_non = np.asarray(f_non, dtype=np.float64)
    uu, vv = pixel_grid(h, w)
    xr = uu + f_rig[..., 0]
    yr = vv + f_rig[..., 1]
    with np.errstate(invalid="ignore"):
        live = in_bounds(xr, yr, w, h) & np.asarray(consistent, dtype=bool) & np.all(np.isfinite(f_non), axis=-1)
    if mask is not None:
        live &= np.asarray(mask, dtype=bool)
    ncc = np.zeros((h, w))
    ys, xs = np.nonzero(live)
    if len(ys):
        t_rig = tncc_points(g0, g1, xs, ys, xr[live], yr[live], params.tau)
        t_non = tncc_points(g0, g1, xs, ys, xs + f_non[live, 0], ys + f_non[live, 1], params.tau)
        ncc[live] = params.lam_ncc * np.asarray(w_var, dtype=np.float64)[live] * (t_rig - t_non)
    flo = flow_term(f_rig, f_non, live, w_var, params)
    return ncc, flo


@dataclass
class FusionProblem:
    f_rig: np.ndarray
    f_non: np.ndarray
    mask: np.ndarray  # initial foreground: the free variables
    cost: np.ndarray  # background (rigid) pays this; foreground pays 0
    weights: EdgeWeights

    def mrf(self) -> BinaryMrf:
        fixed = np.where(np.asarray(self.mask, dtype=bool), -1, 0).astype(np.int8)
        cost = np.where(self.mask, self.cost, 0.0)
        return BinaryMrf(cost, np.zeros_like(cost), self.weights.total, fixed)


@dataclass
class FusionResult:
    flow: np.ndarray
    mask: np.ndarray
    energy: float
    energy_rigid: float  # every free pixel rigid
    energy_nonrigid: float  # every free pixel non-rigid


def build_problem(img0, img1, f_rig, f_non, consistent, w_var, mask, col, pri, weights: EdgeWeights,
                  params: SegParams = SegParams(), superpixels=None) -> FusionProblem:
    """Fusion energy: segmentation energy with the two substituted cues, smoothed over superpixels."""
    ncc, flo = fusion_unaries(img0, img1, f_rig, f_non, consistent, w_var, mask, params)
    if params.smooth and superpixels is not None:
        ncc = smooth_costs(ncc, superpixels, mask)
        flo = smooth_costs(flo, superpixels, mask)
    return FusionProblem(np.asarray(f_rig), np.asarray(f_non), np.asarray(mask, dtype=bool), ncc + flo + col + pri,
                         weights)


def fuse(problem: FusionProblem) -> FusionResult:
    """Single graph cut over the free pixels; the flow takes the selected proposal per pixel."""
    mask = problem.mask
    mrf = problem.mrf()
    if mask.any():
        labels, _ = GraphCutSolver(mrf).min_cut()
    else:
        labels = np.zeros(mask.shape, dtype=bool)
    e = energy(mrf, labels, mask)
    e_rig = energy(mrf, np.zeros(mask.shape, dtype=bool), mask)
    e_non = energy(mrf, mask, mask)
    flow = np.where(labels[..., None], problem.f_non, problem.f_rig)
    return FusionResult(flow, labels, e, e_rig, e_non)
