"""Camera model, rigid poses and the disparity-driven rigid warp.

Conventions: pixel coordinates are ``(u, v)`` = (column, row); maps are
indexed ``[v, u]``. A pose ``P = [R|t]`` maps a 3D point from the source
camera frame into the target camera frame, ``x' = R x + t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np


@dataclass(frozen=True)
class Intrinsics:
    f: float
    cx: float
    cy: float

    def __post_init__(self):
        if not self.f > 0:
            raise ValueError(f"focal length must be positive, got {self.f}")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.f, 0.0, self.cx], [0.0, self.f, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [[1.0 / self.f, 0.0, -self.cx / self.f], [0.0, 1.0 / self.f, -self.cy / self.f], [0.0, 0.0, 1.0]]
        )

    def scaled(self, s: float) -> "Intrinsics":
        """Intrinsics of the image resized by factor ``s`` (pixel-center aligned)."""
        return Intrinsics(self.f * s, (self.cx + 0.5) * s - 0.5, (self.cy + 0.5) * s - 0.5)


@dataclass(frozen=True)
class Pose:
    r: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "r", np.asarray(self.r, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def translation(cls, t) -> "Pose":
        return cls(np.eye(3), t)

    @classmethod
    def from_twist(cls, xi) -> "Pose":
        """Exponential map of ``xi = (vx, vy, vz, wx, wy, wz)``."""
        xi = np.asarray(xi, dtype=np.float64)
        v, w = xi[:3], xi[3:]
        theta = np.linalg.norm(w)
        W = hat(w)
        if theta < 1e-10:
            R = np.eye(3) + W
            V = np.eye(3) + 0.5 * W
        else:
            a = np.sin(theta) / theta
            b = (1.0 - np.cos(theta)) / theta**2
            c = (theta - np.sin(theta)) / theta**3
            R = np.eye(3) + a * W + b * W @ W
            V = np.eye(3) + b * W + c * W @ W
        return cls(orthonormalize(R), V @ v)

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.r
        m[:3, 3] = self.t
        return m

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def inverse(self) -> "Pose":
        return invert(self)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.r.T + self.t

    def rotation_angle(self) -> float:
        """Rotation magnitude in radians."""
        c = np.clip((np.trace(self.r) - 1.0) / 2.0, -1.0, 1.0)
        return float(np.arccos(c))


def hat(w) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def orthonormalize(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


def compose(a: Pose, b: Pose) -> Pose:
    """Pose applying ``b`` first, then ``a`` (matrix product ``a @ b``)."""
    return Pose(a.r @ b.r, a.r @ b.t + a.t)


def invert(a: Pose) -> Pose:
    return Pose(a.r.T, -a.r.T @ a.t)


@dataclass(frozen=True)
class StereoRig:
    intrinsics: Intrinsics
    baseline: float
    width: int
    height: int

    def __post_init__(self):
        if not self.baseline > 0:
            raise ValueError(f"baseline must be positive, got {self.baseline}")

    @property
    def fb(self) -> float:
        return self.intrinsics.f * self.baseline

    @property
    def left_to_right(self) -> Pose:
        return Pose.translation((-self.baseline, 0.0, 0.0))

    def scaled(self, s: float) -> "StereoRig":
        w = int(round(self.width * s))
        h = int(round(self.height * s))
        return StereoRig(self.intrinsics.scaled(s), self.baseline, w, h)

    def depth(self, d):
        return self.fb / np.asarray(d, dtype=np.float64)


def warp_points(u, v, d, rig: StereoRig, pose: Pose):
    """Vectorised rigid warp.

    Returns ``(u', v', z_h)`` where ``z_h`` is the homogeneous depth of the
    transformed point; the warped point's disparity in the target frame is
    ``d / z_h`` and ``z_h <= 0`` means it lands behind the target camera.
    """
    k = rig.intrinsics
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    x = (u - k.cx) / k.f
    y = (v - k.cy) / k.f
    w = d / rig.fb
    r, t = pose.r, pose.t
    X = r[0, 0] * x + r[0, 1] * y + r[0, 2] + t[0] * w
    Y = r[1, 0] * x + r[1, 1] * y + r[1, 2] + t[1] * w
    Z = r[2, 0] * x + r[2, 1] * y + r[2, 2] + t[2] * w
    with np.errstate(divide="ignore", invalid="ignore"):
        up = k.f * X / Z + k.cx
        vp = k.f * Y / Z + k.cy
    return up, vp, Z


def rigid_warp(p, d: float, rig: StereoRig, pose: Pose) -> np.ndarray:
    """Warp one pixel ``p = (u, v)`` with disparity ``d`` into the target view."""
    up, vp, _ = warp_points(p[0], p[1], d, rig, pose)
    return np.array([float(up), float(vp)])


def pixel_grid(h: int, w: int):
    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    return uu, vv


def rigid_flow(disparity: np.ndarray, rig: StereoRig, pose: Pose) -> np.ndarray:
    """Flow ``(H, W, 2)`` induced by camera motion on a static scene."""
    h, w = disparity.shape
    uu, vv = pixel_grid(h, w)
    up, vp, _ = warp_points(uu, vv, disparity, rig, pose)
    return np.stack([up - uu, vp - vv], axis=-1)


def in_bounds(up, vp, w: int, h: int):
    return (up >= 0) & (up <= w - 1) & (vp >= 0) & (vp <= h - 1)


def visibility_map(disparity: np.ndarray, rig: StereoRig, pose: Pose, tol: float = 1.0) -> np.ndarray:
    """Z-buffer visibility of each source pixel in the target view.

    A pixel is visible when it lands inside the image in front of the camera
    and no other pixel hitting the same rounded target pixel has a target
    disparity larger by more than ``tol``.
    """
    h, w = disparity.shape
    uu, vv = pixel_grid(h, w)
    up, vp, zh = warp_points(uu, vv, disparity, rig, pose)
    ok = (zh > 0) & np.isfinite(up) & np.isfinite(vp)
    ok &= in_bounds(up, vp, w, h)
    ti = np.zeros((h, w), dtype=np.int64)
    ti[ok] = np.rint(vp[ok]).astype(np.int64) * w + np.rint(up[ok]).astype(np.int64)
    dt = np.zeros((h, w))
    dt[ok] = disparity[ok] / zh[ok]
    zbuf = np.full(h * w, -np.inf)
    np.maximum.at(zbuf, ti[ok], dt[ok])
    vis = np.zeros((h, w), dtype=bool)
    vis[ok] = zbuf[ti[ok]] - dt[ok] <= tol
    return vis


def forward_warp_mask(mask: np.ndarray, flow: np.ndarray, dilate: int = 2) -> np.ndarray:
    """Scatter ``mask`` along ``flow`` (nearest pixel) and dilate by ``dilate`` px."""
    h, w = mask.shape
    out = np.zeros((h, w), dtype=np.uint8)
    ys, xs = np.nonzero(mask)
    if len(ys):
        f = flow[ys, xs]
        ok = np.all(np.isfinite(f), axis=1)
        xt = np.rint(xs[ok] + f[ok, 0]).astype(np.int64)
        yt = np.rint(ys[ok] + f[ok, 1]).astype(np.int64)
        inb = (xt >= 0) & (xt < w) & (yt >= 0) & (yt < h)
        out[yt[inb], xt[inb]] = 1
    if dilate > 0:
        k = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (2 * dilate + 1, 2 * dilate + 1))
        out = cv2.dilate(out, k)
    return out.astype(bool)
