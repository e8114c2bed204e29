"""Direct stereo visual odometry: robust inverse-compositional alignment plus hypothesis selection."""
from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from .geometry import Intrinsics, Pose, StereoRig, warp_points
from .matching import tncc_points, to_gray

TUKEY_C = 4.685
MAD_C = 1.4826
PROVENANCE = ("identity", "previous", "feature", "translation")


@dataclass(frozen=True)
class VoParams:
    levels: int = 3
    max_iter: int = 50
    eps: float = 1e-6
    halvings: int = 8
    step: int = 2
    moving_weight: float = 1.0 / 8.0
    n_translations: int = 16
    use_translations: bool = False
    feature_min_inliers: int = 10
    feature_models: int = 2
    tau: float = 1.0


@dataclass
class PoseHypothesis:
    pose: Pose
    provenance: str
    score: float = float("inf")
    ok: bool = True


@dataclass
class AlignInfo:
    ok: bool
    iterations: int = 0
    energy: float = float("nan")
    trace: list = field(default_factory=list)  # (energy before, energy after) of accepted steps


def tukey_rho(r, sigma: float):
    """Tukey bi-weight loss with ``k = 4.685 sigma``; saturates at ``k^2 / 6``."""
    k = TUKEY_C * sigma
    r = np.abs(np.asarray(r, dtype=np.float64))
    z = np.minimum(r / k, 1.0)
    out = (k * k / 6.0) * (1.0 - (1.0 - z * z) ** 3)
    return float(out) if out.ndim == 0 else out


def tukey_weight(r, sigma: float):
    k = TUKEY_C * sigma
    z = np.asarray(r, dtype=np.float64) / k
    return np.where(np.abs(z) < 1.0, (1.0 - z * z) ** 2, 0.0)


def mad_scale(r, floor: float = 1e-4) -> float:
    r = np.asarray(r, dtype=np.float64)
    if r.size == 0:
        return floor
    return max(MAD_C * float(np.median(np.abs(r - np.median(r)))), floor)


def base_weights(occlusion, moving=None, moving_weight: float = 1.0 / 8.0) -> np.ndarray:
    """0 at occluded pixels, 1 elsewhere, scaled by ``moving_weight`` at predicted-moving pixels."""
    w = np.where(np.asarray(occlusion, dtype=bool), 0.0, 1.0)
    if moving is not None:
        w = np.where(np.asarray(moving, dtype=bool), w * moving_weight, w)
    return w


def image_gradient(img):
    gy, gx = np.gradient(np.asarray(img, dtype=np.float64))
    return gx, gy


def select_targets(img, disparity, weights, step: int = 2, margin: int = 2) -> np.ndarray:
    """Every ``step``-th pixel with valid disparity, nonzero weight and gradient above the median.

    Pixels within ``margin`` of the border are skipped: they leave the image
    under tiny warps, which makes the robust energy jump.
    """
    gx, gy = image_gradient(img)
    mag = np.hypot(gx, gy)
    cand = np.zeros(mag.shape, dtype=bool)
    cand[::step, ::step] = True
    cand[:margin] = cand[-margin:] = False
    cand[:, :margin] = cand[:, -margin:] = False
    cand &= np.isfinite(disparity) & (disparity >= 0) & (weights > 0)
    if not cand.any():
        return cand
    thr = np.median(mag[cand])
    return cand & (mag > thr)


def _pyramid(img, levels):
    out = [np.asarray(img, dtype=np.float32)]
    for _ in range(levels - 1):
        out.append(cv2.pyrDown(out[-1]))
    return out


def _bilinear(img, x, y):
    h, w = img.shape
    inb = np.isfinite(x) & np.isfinite(y) & (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xs = np.where(inb, x, 0.0)
    ys = np.where(inb, y, 0.0)
    x0 = np.minimum(np.floor(xs).astype(np.int64), w - 2 if w > 1 else 0)
    y0 = np.minimum(np.floor(ys).astype(np.int64), h - 2 if h > 1 else 0)
    fx = xs - x0
    fy = ys - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    v = (1 - fy) * ((1 - fx) * img[y0, x0] + fx * img[y0, x1]) + fy * ((1 - fx) * img[y1, x0] + fx * img[y1, x1])
    return v, inb


def warp_jacobian(u, v, d, rig: StereoRig) -> np.ndarray:
    """d(u', v')/d(xi) at the identity, shape (n, 2, 6), twist order (v, omega)."""
    k = rig.intrinsics
    f = k.f
    a = (u - k.cx) / f
    b = (v - k.cy) / f
    rho = d / rig.fb
    z = np.zeros_like(a)
    ju = np.stack([f * rho, z, -f * a * rho, -f * a * b, f * (1 + a * a), -f * b], axis=-1)
    jv = np.stack([z, f * rho, -f * b * rho, -f * (1 + b * b), f * a * b, f * a], axis=-1)
    return np.stack([ju, jv], axis=1)


def _level_rig(rig: StereoRig, level: int) -> StereoRig:
    s = 0.5 ** level
    k = rig.intrinsics
    return StereoRig(Intrinsics(k.f * s, k.cx * s, k.cy * s), rig.baseline,
                     int(np.ceil(rig.width * s)), int(np.ceil(rig.height * s)))


def _energy(i1, us, vs, ds, i0v, wb, rig, pose, sigma):
    up, vp, zh = warp_points(us, vs, ds, rig, pose)
    val, inb = _bilinear(i1, up, vp)
    inb &= zh > 0
    r = val - i0v
    rho = tukey_rho(r, sigma)
    rho = np.where(inb, rho, (TUKEY_C * sigma) ** 2 / 6.0)
    return float(np.sum(wb * rho)), r, inb


def irls_align(img_t, img_next, disparity, rig: StereoRig, weights, init: Pose = None,
               params: VoParams = VoParams()):
    """Robust photometric alignment of ``img_t`` to ``img_next``.

    Returns ``(pose, info)``; ``pose`` maps frame-t points into frame t+1.
    When the normal equations are rank deficient the initial pose is
    returned with ``info.ok = False``.
    """
    init = Pose.identity() if init is None else init
    pyr0 = _pyramid(to_gray(img_t), params.levels)
    pyr1 = _pyramid(to_gray(img_next), params.levels)
    disparity = np.asarray(disparity, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    pose = init
    info = AlignInfo(ok=True)
    for level in range(params.levels - 1, -1, -1):
        s = 2 ** level
        i0, i1 = pyr0[level].astype(np.float64), pyr1[level].astype(np.float64)
        h, w = i0.shape
        disp = disparity[::s, ::s][:h, :w] / s
        wl = weights[::s, ::s][:h, :w]
        lrig = _level_rig(rig, level)
        tmask = select_targets(i0, disp, wl, params.step if level == 0 else 1)
        vs, us = np.nonzero(tmask)
        if len(us) < 6:
            return init, AlignInfo(ok=False)
        us = us.astype(np.float64)
        vs = vs.astype(np.float64)
        ds = disp[tmask]
        wb = wl[tmask]
        i0v = i0[tmask]
        gx, gy = image_gradient(i0)
        jw = warp_jacobian(us, vs, ds, lrig)
        J = gx[tmask][:, None] * jw[:, 0] + gy[tmask][:, None] * jw[:, 1]
        for it in range(params.max_iter):
            up, vp, zh = warp_points(us, vs, ds, lrig, pose)
            val, inb = _bilinear(i1, up, vp)
            inb &= zh > 0
            r = val - i0v
            sigma = mad_scale(r[inb & (wb > 0)])
            wt = np.where(inb, wb * tukey_weight(r, sigma), 0.0)
            H = (J * wt[:, None]).T @ J
            g = (J * wt[:, None]).T @ np.where(inb, r, 0.0)
            ev = np.linalg.eigvalsh(H)
            if ev[0] <= 1e-9 * max(ev[-1], 1e-300):
                return init, AlignInfo(ok=False, iterations=info.iterations)
            xi = np.linalg.solve(H, g)
            e0, _, _ = _energy(i1, us, vs, ds, i0v, wb, lrig, pose, sigma)
            accepted = False
            for _ in range(params.halvings + 1):
                cand = pose @ Pose.from_twist(xi).inverse()
                e1, _, _ = _energy(i1, us, vs, ds, i0v, wb, lrig, cand, sigma)
                if e1 <= e0:
                    accepted = True
                    break
                xi = 0.5 * xi
            info.iterations += 1
            if not accepted:
                break
            info.trace.append((e0, e1))
            pose = cand
            if np.linalg.norm(xi) < params.eps:
                break
    info.energy = info.trace[-1][1] if info.trace else float("nan")
    return pose, info


def tncc_score(img_t, img_next, disparity, rig: StereoRig, weights, pose: Pose, tau: float = 1.0) -> float:
    """``sum_p w_p TNCC(p, w(p; D, P))`` over pixels with positive weight and valid disparity."""
    sel = (np.asarray(weights) > 0) & np.isfinite(disparity)
    vs, us = np.nonzero(sel)
    up, vp, zh = warp_points(us, vs, disparity[sel], rig, pose)
    up = np.where(zh > 0, up, np.nan)
    c = tncc_points(to_gray(img_t), to_gray(img_next), us, vs, up, vp, tau)
    return float(np.sum(np.asarray(weights)[sel] * c))


def forward_translation_candidates(median_depth: float, n: int = 16, enabled: bool = True,
                                   lo: float = 0.1, hi: float = 4.0, unit: float = 0.01) -> list:
    """``n`` forward motions ``t = (0, 0, -m)`` with ``m`` geometric in ``[lo, hi] * unit * median_depth``."""
    if not enabled or n <= 0:
        return []
    mags = np.geomspace(lo, hi, n) * unit * float(median_depth)
    return [Pose.translation((0.0, 0.0, -m)) for m in mags]


def _match_corners(g0, g1, pts, radius=40, half=5, min_score=0.8):
    h, w = g0.shape
    src, dst = [], []
    for x, y in pts:
        xi, yi = int(round(x)), int(round(y))
        if xi < half or yi < half or xi >= w - half or yi >= h - half:
            continue
        tpl = g0[yi - half:yi + half + 1, xi - half:xi + half + 1]
        if tpl.std() < 1e-3:
            continue
        x0, x1 = max(xi - radius - half, 0), min(xi + radius + half + 1, w)
        y0, y1 = max(yi - radius - half, 0), min(yi + radius + half + 1, h)
        win = g1[y0:y1, x0:x1]
        if win.shape[0] <= 2 * half or win.shape[1] <= 2 * half:
            continue
        res = cv2.matchTemplate(win, tpl, cv2.TM_CCOEFF_NORMED)
        _, best, _, loc = cv2.minMaxLoc(res)
        if best < min_score:
            continue
        bx, by = loc
        dx = dy = 0.0
        # parabola refinement of the correlation peak
        if 0 < bx < res.shape[1] - 1:
            a, b, c = res[by, bx - 1], res[by, bx], res[by, bx + 1]
            den = a - 2 * b + c
            dx = 0.5 * (a - c) / den if den < 0 else 0.0
        if 0 < by < res.shape[0] - 1:
            a, b, c = res[by - 1, bx], res[by, bx], res[by + 1, bx]
            den = a - 2 * b + c
            dy = 0.5 * (a - c) / den if den < 0 else 0.0
        src.append((xi, yi))
        dst.append((x0 + bx + half + dx, y0 + by + half + dy))
    return np.asarray(src, dtype=np.float64).reshape(-1, 2), np.asarray(dst, dtype=np.float64).reshape(-1, 2)


def feature_matches(img_t, img_next, max_corners: int = 300, radius: int = 40):
    """Corner correspondences ``(src, dst)`` between the two images (pixel coordinates)."""
    g0 = to_gray(img_t)
    g1 = to_gray(img_next)
    pts = cv2.goodFeaturesToTrack(g0, max_corners, 0.01, 5)
    if pts is None:
        return np.zeros((0, 2)), np.zeros((0, 2))
    return _match_corners(g0, g1, pts.reshape(-1, 2), radius)


def _pnp(obj, img, k, min_inliers):
    cv2.setRNGSeed(1234)
    found, rvec, tvec, inl = cv2.solvePnPRansac(obj, img, k.K, None, iterationsCount=200, reprojectionError=2.0,
                                               confidence=0.999, flags=cv2.SOLVEPNP_P3P)
    if not found or inl is None or len(inl) < min_inliers:
        return None, None
    inl = inl.ravel()
    rvec, tvec = cv2.solvePnPRefineLM(obj[inl], img[inl], k.K, None, rvec, tvec)
    r, _ = cv2.Rodrigues(rvec)
    return Pose(r, tvec.ravel()), inl


def feature_poses(img_t, img_next, disparity, rig: StereoRig, occlusion=None, moving=None, min_inliers: int = 10,
                  matches=None, models: int = 2) -> list:
    """Up to ``models`` poses from corner matches via sequential P3P RANSAC.

    Each later model is fitted to the matches left over by the earlier ones,
    so a large independently moving object and the background both get a
    hypothesis. Matches starting on ``moving`` pixels are not used.
    """
    src, dst = feature_matches(img_t, img_next) if matches is None else matches
    if len(src) < 6:
        return []
    xi = src[:, 0].astype(int)
    yi = src[:, 1].astype(int)
    d = disparity[yi, xi]
    ok = np.isfinite(d) & (d > 0.5)
    if occlusion is not None:
        ok &= ~np.asarray(occlusion, dtype=bool)[yi, xi]
    if moving is not None:
        ok &= ~np.asarray(moving, dtype=bool)[yi, xi]
    k = rig.intrinsics
    z = rig.fb / np.where(ok, d, 1.0)
    obj = np.stack([(src[:, 0] - k.cx) / k.f * z, (src[:, 1] - k.cy) / k.f * z, z], axis=1)
    poses = []
    idx = np.flatnonzero(ok)
    for _ in range(models):
        if len(idx) < max(min_inliers, 6):
            break
        pose, inl = _pnp(obj[idx], dst[idx], k, min_inliers)
        if pose is None:
            break
        poses.append(pose)
        idx = np.delete(idx, inl)
    return poses


def feature_init(img_t, img_next, disparity, rig: StereoRig, occlusion=None, min_inliers: int = 10,
                 matches=None):
    """Pose from corner matches and back-projected disparity via P3P RANSAC. Returns ``(pose, ok)``."""
    poses = feature_poses(img_t, img_next, disparity, rig, occlusion, None, min_inliers, matches, models=1)
    return (poses[0], True) if poses else (Pose.identity(), False)


def select_pose(hypotheses: list, img_t, img_next, disparity, rig: StereoRig, weights,
                params: VoParams = VoParams()):
    """Refine every hypothesis and return the one with the lowest weighted TNCC residual.

    Ties go to the earlier hypothesis, so callers list them in provenance order.
    """
    if not hypotheses:
        raise ValueError("need at least one hypothesis")
    best = None
    for h in hypotheses:
        pose, info = irls_align(img_t, img_next, disparity, rig, weights, h.pose, params)
        h.pose = pose
        h.ok = info.ok
        h.score = tncc_score(img_t, img_next, disparity, rig, weights, pose, params.tau)
        if best is None or h.score < best.score:
            best = h
    return best


def estimate_motion(img_t, img_next, disparity, occlusion, rig: StereoRig, moving=None, previous: Pose = None,
                    params: VoParams = VoParams()):
    """Full odometry step; returns ``(pose, hypotheses)``."""
    w = base_weights(occlusion, moving, params.moving_weight)
    w = np.where(np.isfinite(disparity), w, 0.0)
    hyps = [PoseHypothesis(Pose.identity(), "identity")]
    if previous is not None:
        hyps.append(PoseHypothesis(previous, "previous"))
    for p in feature_poses(img_t, img_next, disparity, rig, occlusion, moving, params.feature_min_inliers,
                           models=params.feature_models):
        hyps.append(PoseHypothesis(p, "feature"))
    if params.use_translations:
        valid = np.isfinite(disparity) & (disparity > 0)
        if valid.any():
            zmed = float(np.median(rig.fb / disparity[valid]))
            for p in forward_translation_candidates(zmed, params.n_translations):
                hyps.append(PoseHypothesis(p, "translation"))
    best = select_pose(hyps, img_t, img_next, disparity, rig, w, params)
    return best.pose, hyps
