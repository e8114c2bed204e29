"""Scene-flow error metrics: D1, D2, Fl and SF outlier rates with the 3 px / 5% rule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ABS_THR = 3.0
REL_THR = 0.05


def outliers(err, magnitude, abs_thr: float = ABS_THR, rel_thr: float = REL_THR) -> np.ndarray:
    """A value is an outlier when its error reaches both ``abs_thr`` and ``rel_thr * magnitude``.

    Non-finite errors (missing estimates) count as outliers.
    """
    err = np.asarray(err, dtype=np.float64)
    mag = np.abs(np.asarray(magnitude, dtype=np.float64))
    with np.errstate(invalid="ignore"):
        bad = (err >= abs_thr) & (err >= rel_thr * mag)
    return bad | ~np.isfinite(err)


def disparity_outliers(est, gt) -> np.ndarray:
    return outliers(np.abs(np.asarray(est, dtype=np.float64) - gt), gt)


def flow_outliers(est, gt) -> np.ndarray:
    est = np.asarray(est, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    return outliers(np.linalg.norm(est - gt, axis=-1), np.linalg.norm(gt, axis=-1))


@dataclass
class SceneFlowMetrics:
    d1: dict = field(default_factory=dict)  # region -> outlier rate in %
    d2: dict = field(default_factory=dict)
    fl: dict = field(default_factory=dict)
    sf: dict = field(default_factory=dict)
    epe_disp: float = float("nan")
    epe_flow: float = float("nan")
    counts: dict = field(default_factory=dict)

    def table(self) -> str:
        rows = ["         bg      fg      all"]
        for name in ("d1", "d2", "fl", "sf"):
            vals = getattr(self, name)
            rows.append(f"{name.upper():>3}  " + "  ".join(f"{vals.get(r, float('nan')):6.2f}"
                                                          for r in ("bg", "fg", "all")))
        rows.append(f"EPE disparity {self.epe_disp:.4f}  flow {self.epe_flow:.4f}")
        return "\n".join(rows)


def _rates(bad, valid, fg) -> dict:
    out = {}
    for name, sel in (("bg", valid & ~fg), ("fg", valid & fg), ("all", valid)):
        n = int(sel.sum())
        out[name] = 100.0 * float(bad[sel].sum()) / n if n else float("nan")
    return out


def evaluate(est: dict, gt: dict) -> SceneFlowMetrics:
    """Outlier rates of ``est`` against ``gt``.

    Both hold ``"d1"`` (H, W), ``"d2"`` (H, W) and ``"flow"`` (H, W, 2);
    ``gt`` may hold a foreground ``"mask"``. NaN ground truth is skipped; SF
    uses pixels where all three ground truths exist.
    """
    shape = np.asarray(gt["d1"]).shape
    for key in ("d1", "d2", "flow"):
        for src, name in ((est, "estimate"), (gt, "ground truth")):
            if np.asarray(src[key]).shape[:2] != shape:
                raise ValueError(f"{name} {key} has shape {np.asarray(src[key]).shape[:2]}, expected {shape}")
    fg = np.asarray(gt.get("mask", np.zeros(shape, dtype=bool)), dtype=bool)
    g1 = np.asarray(gt["d1"], dtype=np.float64)
    g2 = np.asarray(gt["d2"], dtype=np.float64)
    gf = np.asarray(gt["flow"], dtype=np.float64)
    v1 = np.isfinite(g1)
    v2 = np.isfinite(g2)
    vf = np.all(np.isfinite(gf), axis=-1)
    b1 = disparity_outliers(est["d1"], g1)
    b2 = disparity_outliers(est["d2"], g2)
    bf = flow_outliers(est["flow"], gf)
    vs = v1 & v2 & vf
    m = SceneFlowMetrics(_rates(b1, v1, fg), _rates(b2, v2, fg), _rates(bf, vf, fg), _rates(b1 | b2 | bf, vs, fg))
    e1 = np.abs(np.asarray(est["d1"], dtype=np.float64) - g1)[v1]
    ef = np.linalg.norm(np.asarray(est["flow"], dtype=np.float64) - gf, axis=-1)[vf]
    m.epe_disp = float(np.nanmean(e1)) if e1.size else float("nan")
    m.epe_flow = float(np.nanmean(ef)) if ef.size else float("nan")
    m.counts = {"d1": int(v1.sum()), "d2": int(v2.sum()), "flow": int(vf.sum()), "sf": int(vs.sum())}
    return m
