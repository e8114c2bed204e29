"""Frame-sequential orchestration: stereo, odometry, refinement, segmentation, flow and fusion."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import cv2
import numpy as np

from . import _backend
from .config import Config, profile
from .flow import nonrigid_flow
from .fusion import build_problem, fuse
from .geometry import Pose, StereoRig, forward_warp_mask, rigid_flow, warp_points
from .matching import patch_stddev_weight
from .metrics import SceneFlowMetrics, evaluate  # noqa: F401  re-exported
from .odometry import estimate_motion, feature_matches
from .segmentation import (ColorModel, SegPriors, SegTerms, appearance_term, color_term, flow_term, ground_prior,
                           initial_segmentation, potts_weights, prior_flow, prior_term, soft_mask, superpixels)
from .stereo import StereoOutput, binocular, epipolar_refine, reduce_range, temporal_targets


# ---------------------------------------------------------------- resampling

def resample(img, s: float, size: tuple, nearest: bool = False) -> np.ndarray:
    """Resize by exactly ``s`` about pixel centres to ``size = (w, h)``; Gaussian prefilter when shrinking."""
    img = np.asarray(img)
    w, h = size
    if s == 1.0 and img.shape[1] == w and img.shape[0] == h:
        return img.copy()
    src = img.astype(np.float32) if img.dtype == bool else img
    if s < 1.0 and not nearest:
        sigma = 0.5 * np.sqrt(1.0 / (s * s) - 1.0)
        src = cv2.GaussianBlur(src, (0, 0), sigma, borderType=cv2.BORDER_REPLICATE)
    off = 0.5 / s - 0.5
    m = np.array([[1.0 / s, 0.0, off], [0.0, 1.0 / s, off]])
    interp = cv2.INTER_NEAREST if nearest else cv2.INTER_LINEAR
    out = cv2.warpAffine(src, m, (w, h), flags=interp | cv2.WARP_INVERSE_MAP, borderMode=cv2.BORDER_REPLICATE)
    if img.dtype == bool:
        out = out > 0.5
    return out


def _nan_fill(d, fill=None) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    bad = ~np.isfinite(d)
    if not bad.any():
        return d
    src = np.zeros_like(d) if fill is None else np.asarray(fill, dtype=np.float64)
    return np.where(bad, np.nan_to_num(src), d)


# ---------------------------------------------------------------- state and outputs

@dataclass
class FrameInputs:
    left: np.ndarray
    right: np.ndarray
    left_next: np.ndarray
    right_next: np.ndarray
    left_prev: np.ndarray | None = None
    right_prev: np.ndarray | None = None
    prior_flow: tuple | None = None  # (flow, valid) at input resolution


@dataclass
class FrameState:
    index: int = 0
    mask: np.ndarray | None = None  # final mask at the stereo working scale
    flow: np.ndarray | None = None  # final flow at the stereo working scale
    pose: Pose | None = None  # camera motion from the previous frame to this one
    color: ColorModel | None = None  # average of past per-frame color models
    next_stereo: StereoOutput | None = None  # binocular result for this frame, computed one step early


@dataclass
class FrameOutput:
    disparity: np.ndarray
    disparity_next: np.ndarray
    flow: np.ndarray
    pose: Pose
    mask: np.ndarray
    initial_mask: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


class Pipeline:
    def __init__(self, rig: StereoRig, config: Config | None = None, threads: int = 1):
        self.rig = rig
        self.cfg = config or profile("general")
        self.threads = max(1, int(threads))
        s1, s2 = self.cfg.scales(rig.width)
        self.s1, self.s2 = s1, s2
        self.rig1 = rig.scaled(s1)
        self.rig2 = rig.scaled(s2)
        self.d_max = self.cfg.working_d_max(self.rig1.width)

    # -- helpers
    def _down(self, img, s, rig: StereoRig, nearest=False):
        return resample(img, s, (rig.width, rig.height), nearest)

    def _up(self, img, s, nearest=False):
        """Working-scale map back to input resolution."""
        img = np.asarray(img)
        if s == 1.0:
            return img.copy()
        src = img.astype(np.float32) if img.dtype == bool else img
        off = 0.5 * s - 0.5
        m = np.array([[s, 0.0, off], [0.0, s, off]])
        interp = cv2.INTER_NEAREST if nearest else cv2.INTER_LINEAR
        out = cv2.warpAffine(src, m, (self.rig.width, self.rig.height), flags=interp | cv2.WARP_INVERSE_MAP,
                             borderMode=cv2.BORDER_REPLICATE)
        return out > 0.5 if img.dtype == bool else out

    def _check(self, img, name):
        h, w = np.asarray(img).shape[:2]
        if (w, h) != (self.rig.width, self.rig.height):
            raise ValueError(f"{name} is {w}x{h}, calibration says {self.rig.width}x{self.rig.height}")

    # -- the frame step
    def process_frame(self, inp: FrameInputs, state: FrameState | None = None):
        """One frame; returns ``(FrameOutput, next FrameState)``."""
        state = state or FrameState()
        for name in ("left", "right", "left_next", "right_next"):
            self._check(getattr(inp, name), name)
        _backend.set_threads(self.threads)
        cv2.setNumThreads(self.threads)
        cfg, rig1, th = self.cfg, self.rig1, self.threads
        segp, flp = cfg.seg_params(), cfg.flow_params()
        timings, diag = {}, {}
        clock = time.perf_counter()

        def lap(name):
            nonlocal clock
            now = time.perf_counter()
            timings[name] = now - clock
            clock = now

        down = lambda x: None if x is None else self._down(x, self.s1, rig1)  # noqa: E731
        L, R, Ln, Rn = down(inp.left), down(inp.right), down(inp.left_next), down(inp.right_next)
        Lp, Rp = down(inp.left_prev), down(inp.right_prev)
        sp = cfg.stereo_params(self.d_max)
        lap("resample")

        binoc = state.next_stereo
        if binoc is None or binoc.disparity.shape != L.shape[:2]:
            binoc = binocular(L, R, sp, threads=th)
        binoc_next = binocular(Ln, Rn, sp, threads=th)
        d_red = reduce_range(binoc.disparity, binoc.occlusion, self.d_max, sp.hist_frac)
        lap("binocular")

        moving = None
        if state.mask is not None and state.flow is not None:
            moving = forward_warp_mask(state.mask, state.flow, segp.mask_dilate)
        try:
            pose, hyps = estimate_motion(L, Ln, binoc.disparity, binoc.occlusion, rig1, moving, state.pose,
                                         cfg.vo_params())
            diag["pose_source"] = min(hyps, key=lambda h: h.score).provenance
        except Exception as e:  # keep the sequence going
            pose = state.pose if state.pose is not None else Pose.identity()
            diag["failure_odometry"] = repr(e)
        lap("odometry")

        prev_pose = state.pose if (Lp is not None and state.pose is not None) else None
        images = dict(l_prev=Lp, r_prev=Rp, l_next=Ln, r_next=Rn)
        refined = epipolar_refine(L, images, rig1, prev_pose, pose, binoc, sp, d_red, threads=th)
        D = _nan_fill(refined.disparity, binoc.disparity)
        f_rig = rigid_flow(D, rig1, pose)
        lap("epipolar")

        seg_mask = np.zeros(D.shape, dtype=bool)
        try:
            seg_mask, F1, S1, model = self._motion(inp, L, Ln, D, d_red, f_rig, pose, prev_pose, images, state,
                                                   segp, flp, lap, diag)
        except Exception as e:
            F1, S1, model = f_rig, np.zeros(D.shape, dtype=bool), None
            diag["failure"] = repr(e)
        # outputs at input resolution
        D_up = self._up(D, self.s1) / self.s1
        S_up = self._up(S1, self.s1, nearest=True)
        F_non_up = self._up(F1, self.s1, nearest=True) / self.s1
        f_rig_up = rigid_flow(D_up, self.rig, pose)
        F_up = np.where(S_up[..., None], F_non_up, f_rig_up)
        D2 = self._next_disparity(D_up, F_up, S_up, pose, binoc_next)
        lap("output")

        frame_model = ColorModel.fit(L, S1)
        color = frame_model if state.color is None else state.color.averaged(frame_model)
        new_state = FrameState(state.index + 1, S1, F1, pose, color, binoc_next)
        out = FrameOutput(D_up, D2, F_up, pose, S_up, self._up(seg_mask, self.s1, nearest=True), diag, timings)
        return out, new_state

    def _motion(self, inp, L, Ln, D, d_red, f_rig, pose, prev_pose, images, state, segp, flp, lap, diag):
        cfg, rig1, th = self.cfg, self.rig1, self.threads
        wv = patch_stddev_weight(L, segp.tau_w)
        targets = temporal_targets(images, rig1, prev_pose, pose)
        c_ncc = appearance_term(L, targets, D, rig1, wv, segp)
        if inp.prior_flow is not None:
            pf, pv = inp.prior_flow
            fp = self._down(np.nan_to_num(np.asarray(pf, dtype=np.float32)), self.s1, rig1) * self.s1
            fv = self._down(np.asarray(pv, dtype=bool) & np.all(np.isfinite(pf), axis=-1), self.s1, rig1,
                            nearest=True)
        else:
            fp, fv = prior_flow(L, Ln)
        c_flo = flow_term(f_rig, fp, fv, wv, segp)
        priors = SegPriors()
        if state.mask is not None and state.flow is not None:
            priors.mask = soft_mask(state.mask, state.flow, segp.mask_dilate, segp.mask_bg)
        priors.color = state.color
        if segp.ground:
            priors.ground = ground_prior(D, d_red, segp)
        c_pri = prior_term(L, priors, segp)
        ew = potts_weights(L, D, None, segp)
        labels = superpixels(L, segp.superpixels)
        seg = initial_segmentation(L, SegTerms(c_ncc, c_flo, c_pri), ew, segp, labels)
        diag["grabcut_iterations"] = seg.iterations
        lap("segmentation")

        r = self.s2 / self.s1
        if seg.mask.any():
            feats = feature_matches(L, Ln)
            if r == 1.0:
                res = nonrigid_flow(L, Ln, seg.mask, f_rig, D, fp, fv, feats, flp, th)
                f_non, consistent = res.flow, res.consistent
            else:
                rig2 = self.rig2
                L2 = self._down(inp.left, self.s2, rig2)
                Ln2 = self._down(inp.left_next, self.s2, rig2)
                m2 = resample(seg.mask, r, (rig2.width, rig2.height), nearest=True)
                fr2 = resample(f_rig.astype(np.float32), r, (rig2.width, rig2.height)) * r
                dd2 = resample(D.astype(np.float32), r, (rig2.width, rig2.height)) * r
                fp2 = resample(np.asarray(fp, dtype=np.float32), r, (rig2.width, rig2.height)) * r
                fv2 = resample(fv, r, (rig2.width, rig2.height), nearest=True)
                feats2 = tuple((np.asarray(a) + 0.5) * r - 0.5 for a in feats)
                res = nonrigid_flow(L2, Ln2, m2, fr2, dd2, fp2, fv2, feats2, flp, th)
                up = lambda x, n: _resize_to(x, r, (rig1.width, rig1.height), n)  # noqa: E731
                f_non = up(res.flow.astype(np.float32), True) / r
                consistent = up(res.consistent, True)
            diag["flow_ranges"] = [x.as_tuple() for x in res.ranges]
        else:
            f_non, consistent = f_rig.copy(), np.zeros(D.shape, dtype=bool)
        lap("flow")

        col = color_term(L, seg.model, segp.lam_col)
        prob = build_problem(L, Ln, f_rig, f_non, consistent, wv, seg.mask, col, c_pri, ew, segp, labels)
        fr = fuse(prob)
        diag["fusion_energy"] = (fr.energy, fr.energy_rigid, fr.energy_nonrigid)
        lap("fusion")
        return seg.mask, fr.flow, fr.mask, seg.model

    def _next_disparity(self, D, F, S, pose: Pose, binoc_next: StereoOutput):
        """Disparity of every point at t+1: pose-transformed for rigid pixels, sampled at ``p + F`` otherwise."""
        h, w = D.shape
        vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
        _, _, zh = warp_points(uu, vv, D, self.rig, pose)
        with np.errstate(divide="ignore", invalid="ignore"):
            d2 = np.where(zh > 0, D / zh, np.nan)
        if S.any():
            dn = self._up(_nan_fill(binoc_next.disparity), self.s1) / self.s1
            xt = np.clip(np.rint(uu + F[..., 0]), 0, w - 1).astype(np.int64)
            yt = np.clip(np.rint(vv + F[..., 1]), 0, h - 1).astype(np.int64)
            d2 = np.where(S, dn[yt, xt], d2)
        return d2

    # -- sequences
    def run(self, lefts, rights, prior_flows=None, load=None):
        """Yield one ``FrameOutput`` per frame for ``N + 1`` input pairs.

        ``load`` maps an item of ``lefts``/``rights`` to an image (identity by default).
        """
        load = load or (lambda x: x)
        n = min(len(lefts), len(rights))
        if n < 2:
            raise ValueError("need at least two stereo pairs")
        state = FrameState()
        prev = None
        cur = (load(lefts[0]), load(rights[0]))
        for t in range(n - 1):
            nxt = (load(lefts[t + 1]), load(rights[t + 1]))
            pf = None if prior_flows is None else prior_flows[t]
            inp = FrameInputs(cur[0], cur[1], nxt[0], nxt[1], None if prev is None else prev[0],
                              None if prev is None else prev[1], pf)
            out, state = self.process_frame(inp, state)
            yield out
            prev, cur = cur, nxt


def _resize_to(img, r: float, size: tuple, nearest: bool) -> np.ndarray:
    """Map from a grid scaled by ``r`` back to ``size`` about pixel centres."""
    img = np.asarray(img)
    src = img.astype(np.float32) if img.dtype == bool else img
    off = 0.5 * r - 0.5
    m = np.array([[r, 0.0, off], [0.0, r, off]])
    interp = cv2.INTER_NEAREST if nearest else cv2.INTER_LINEAR
    out = cv2.warpAffine(src, m, size, flags=interp | cv2.WARP_INVERSE_MAP, borderMode=cv2.BORDER_REPLICATE)
    return out > 0.5 if img.dtype == bool else out


def process_frame(pipeline: Pipeline, inputs: FrameInputs, state: FrameState | None = None):
    return pipeline.process_frame(inputs, state)
