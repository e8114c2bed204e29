"""Deterministic ray-traced stereo sequences of textured planes with exact ground truth.

World frame: x right, y down, z forward. A camera with pose ``(R, C)``
(rotation camera-to-world, centre ``C``) sees world point ``X`` at
``R^T (X - C)``. Movers are rigid boxes with a constant per-frame velocity.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy.ndimage import gaussian_filter

from .geometry import Intrinsics, Pose, StereoRig

TEX_SIZE = 512


@dataclass
class Surface:
    origin: np.ndarray  # body-frame point
    axis1: np.ndarray  # unit in-plane axes; normal = axis1 x axis2
    axis2: np.ndarray
    extent: tuple | None = None  # half sizes along axis1/axis2, None = unbounded
    texel: float = 0.03
    seed: int = 0
    tint: tuple = (1.0, 1.0, 1.0)


@dataclass
class Mover:
    surfaces: list
    center: np.ndarray
    velocity: np.ndarray  # world translation per frame
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))  # body rotation per frame (axis-angle)

    def pose(self, t: int) -> Pose:
        """Body-to-world pose at frame ``t``."""
        return Pose(Pose.from_twist(np.r_[0, 0, 0, self.omega * t]).r, self.center + self.velocity * t)


@dataclass
class SceneSpec:
    rig: StereoRig
    frames: int
    surfaces: list
    movers: list = field(default_factory=list)
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    noise: float = 0.01
    seed: int = 0

    def camera(self, t: int) -> Pose:
        """Camera-to-world pose at frame ``t``."""
        return Pose(Pose.from_twist(np.r_[0, 0, 0, self.omega * t]).r, self.velocity * t)

    def camera_from_world(self, t: int) -> Pose:
        return self.camera(t).inverse()

    def relative_pose(self, t: int) -> Pose:
        """Camera motion from frame ``t`` to ``t + 1`` (maps frame-t points into frame t+1)."""
        return self.camera_from_world(t + 1) @ self.camera(t)


@dataclass
class Frame:
    left: np.ndarray  # (H, W, 3) float in [0, 1]
    right: np.ndarray
    disparity: np.ndarray  # GT at frame t
    flow: np.ndarray  # (H, W, 2) GT flow to t+1 (NaN where undefined)
    disparity_next: np.ndarray  # disparity of each frame-t point in frame t+1
    mask: np.ndarray  # mover footprint
    occluded: np.ndarray  # left pixels not visible in the right view
    flow_occluded: np.ndarray  # frame-t points hidden or out of view at t+1
    pose: Pose | None  # camera motion t -> t+1
    surface_id: np.ndarray = None


def box_surfaces(size, texel=0.03, seed=0, tint=(1.0, 1.0, 1.0)) -> list:
    """Six faces of an axis-aligned box of full ``size`` centred at the origin."""
    sx, sy, sz = (0.5 * float(s) for s in size)
    ex, ey, ez = np.eye(3)
    faces = [
        (-sz * ez, ex, ey, (sx, sy)),
        (sz * ez, ey, ex, (sy, sx)),
        (-sx * ex, ey, ez, (sy, sz)),
        (sx * ex, ez, ey, (sz, sy)),
        (-sy * ey, ez, ex, (sz, sx)),
        (sy * ey, ex, ez, (sx, sz)),
    ]
    return [Surface(o, a, b, e, texel, seed + i, tint) for i, (o, a, b, e) in enumerate(faces)]


def _texture(seed: int, tint) -> np.ndarray:
    rng = np.random.default_rng(seed)
    base = rng.standard_normal((TEX_SIZE, TEX_SIZE, 3)).astype(np.float32)
    base[..., 1] = 0.6 * base[..., 0] + 0.4 * base[..., 1]
    base[..., 2] = 0.5 * base[..., 0] + 0.5 * base[..., 2]
    sm = gaussian_filter(base, sigma=(1.2, 1.2, 0), mode="wrap")
    sm -= sm.mean(axis=(0, 1))
    sm /= 3.0 * sm.std(axis=(0, 1)) + 1e-9
    tex = np.clip(0.5 + 0.4 * sm, 0.05, 0.95) * np.asarray(tint, dtype=np.float32)
    return tex


def _sample_texture(tex, s, t):
    n = tex.shape[0]
    s0 = np.floor(s)
    t0 = np.floor(t)
    fs = (s - s0)[..., None]
    ft = (t - t0)[..., None]
    i0 = np.mod(s0.astype(np.int64), n)
    j0 = np.mod(t0.astype(np.int64), n)
    i1 = (i0 + 1) % n
    j1 = (j0 + 1) % n
    return ((1 - ft) * ((1 - fs) * tex[j0, i0] + fs * tex[j0, i1]) + ft * ((1 - fs) * tex[j1, i0] + fs * tex[j1, i1]))


class _World:
    """All surfaces of a frame in world coordinates, with owner ids."""

    def __init__(self, spec: SceneSpec, t: int):
        self.items = []
        for s in spec.surfaces:
            self.items.append((s, Pose.identity(), -1))
        for mi, m in enumerate(spec.movers):
            bp = m.pose(t)
            for s in m.surfaces:
                self.items.append((s, bp, mi))


def _trace(spec: SceneSpec, world: _World, cam: Pose, textures, want_color=True):
    """Ray-cast from a camera (camera-to-world pose). Returns depth, color, surface index, world points."""
    rig = spec.rig
    k = rig.intrinsics
    h, w = rig.height, rig.width
    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    dirs_c = np.stack([(uu - k.cx) / k.f, (vv - k.cy) / k.f, np.ones_like(uu)], axis=-1)
    dirs = dirs_c @ cam.r.T
    depth = np.full((h, w), np.inf)
    sid = np.full((h, w), -1, dtype=np.int64)
    st = np.zeros((h, w, 2))
    for i, (s, bp, _) in enumerate(world.items):
        o = bp.apply(s.origin)
        a1 = bp.r @ s.axis1
        a2 = bp.r @ s.axis2
        n = np.cross(a1, a2)
        den = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = ((o - cam.t) @ n) / den
        ok = np.isfinite(lam) & (lam > 1e-6)
        pts = cam.t + lam[..., None] * dirs
        rel = pts - o
        ls = rel @ a1
        lt = rel @ a2
        if s.extent is not None:
            ok &= (np.abs(ls) <= s.extent[0]) & (np.abs(lt) <= s.extent[1])
        closer = ok & (lam < depth)
        depth[closer] = lam[closer]
        sid[closer] = i
        st[closer, 0] = ls[closer]
        st[closer, 1] = lt[closer]
    color = None
    if want_color:
        color = np.zeros((h, w, 3), dtype=np.float64)
        for i, (s, _, _) in enumerate(world.items):
            m = sid == i
            if m.any():
                color[m] = _sample_texture(textures[i], st[m, 0] / s.texel, st[m, 1] / s.texel)
    pts = cam.t + depth[..., None] * dirs
    return depth, color, sid, pts


def validate(spec: SceneSpec) -> None:
    """Rejects specs where a frame leaves pixels without a surface in front of the camera."""
    for t in range(spec.frames + 1):
        world = _World(spec, t)
        d, _, _, _ = _trace(spec, world, spec.camera(t), None, want_color=False)
        if not np.all(np.isfinite(d)):
            raise ValueError(f"frame {t}: some pixels see no surface in front of the camera")


def _project(rig: StereoRig, pc):
    k = rig.intrinsics
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.f * pc[..., 0] / pc[..., 2] + k.cx
        v = k.f * pc[..., 1] / pc[..., 2] + k.cy
    return u, v


def render(spec: SceneSpec, with_last: bool = True) -> list:
    """Render ``spec.frames`` frames (plus one lookahead frame when ``with_last``).

    Ground truth that needs frame ``t+1`` is filled for all but the very last
    rendered frame.
    """
    rig = spec.rig
    h, w = rig.height, rig.width
    n_total = spec.frames + (1 if with_last else 0)
    owners = [-1] * len(spec.surfaces) + [mi for mi, m in enumerate(spec.movers) for _ in m.surfaces]
    all_surf = list(spec.surfaces) + [s for m in spec.movers for s in m.surfaces]
    textures = [_texture(s.seed, s.tint) for s in all_surf]
    owners = np.asarray(owners + [-1])
    raw = []
    for t in range(n_total):
        world = _World(spec, t)
        cam = spec.camera(t)
        right_cam = Pose(cam.r, cam.apply(np.array([rig.baseline, 0.0, 0.0])))
        zl, cl, sl, pl = _trace(spec, world, cam, textures)
        zr, cr, _, _ = _trace(spec, world, right_cam, textures)
        if not (np.all(np.isfinite(zl)) and np.all(np.isfinite(zr))):
            raise ValueError(f"frame {t}: some pixels see no surface in front of the camera")
        rng = np.random.default_rng([spec.seed, t])
        nl = rng.uniform(-spec.noise, spec.noise, cl.shape)
        nr = rng.uniform(-spec.noise, spec.noise, cr.shape)
        raw.append((zl, np.clip(cl + nl, 0, 1), sl, pl, zr, np.clip(cr + nr, 0, 1)))
    frames = []
    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    for t in range(n_total):
        zl, cl, sl, pl, zr, cr = raw[t]
        disp = rig.fb / zl
        mask = owners[sl] >= 0
        # left-right occlusion: the point seen at (u - d, v) in the right view is farther
        ur = uu - disp
        ok = ur >= 0
        dr = np.zeros((h, w))
        dr[ok] = cv2.remap((rig.fb / zr).astype(np.float32), ur.astype(np.float32), vv.astype(np.float32),
                           cv2.INTER_NEAREST)[ok]
        # something nearer covers the point in the right view
        occ = ~ok | (dr > disp + 0.5)
        flow = np.full((h, w, 2), np.nan)
        d_next = np.full((h, w), np.nan)
        focc = np.ones((h, w), dtype=bool)
        pose = None
        if t + 1 < n_total:
            pose = spec.relative_pose(t)
            # world point of every pixel at time t+1
            xw = pl.copy()
            for mi, m in enumerate(spec.movers):
                mm = owners[sl] == mi
                if mm.any():
                    body = m.pose(t).inverse().apply(xw[mm])
                    xw[mm] = m.pose(t + 1).apply(body)
            pc = spec.camera_from_world(t + 1).apply(xw)
            u1, v1 = _project(rig, pc)
            flow = np.stack([u1 - uu, v1 - vv], axis=-1)
            d_next = rig.fb / pc[..., 2]
            zn = raw[t + 1][0]
            inside = (pc[..., 2] > 0) & (u1 >= 0) & (u1 <= w - 1) & (v1 >= 0) & (v1 <= h - 1)
            dn = np.zeros((h, w))
            dn[inside] = rig.fb / zn[np.rint(v1[inside]).astype(int), np.rint(u1[inside]).astype(int)]
            focc = ~inside | (dn > d_next + 0.5)
        frames.append(Frame(cl.astype(np.float32), cr.astype(np.float32), disp, flow, d_next, mask, occ, focc,
                            pose, sl))
    return frames


# ----------------------------------------------------------------------------
# JSON spec

def _surface_to_dict(s: Surface) -> dict:
    return {"origin": list(map(float, s.origin)), "axis1": list(map(float, s.axis1)),
            "axis2": list(map(float, s.axis2)), "extent": None if s.extent is None else list(map(float, s.extent)),
            "texel": s.texel, "seed": s.seed, "tint": list(map(float, s.tint))}


def _surface_from_dict(d: dict) -> Surface:
    return Surface(np.asarray(d["origin"], float), np.asarray(d["axis1"], float), np.asarray(d["axis2"], float),
                   None if d.get("extent") is None else tuple(d["extent"]), d.get("texel", 0.03), d.get("seed", 0),
                   tuple(d.get("tint", (1.0, 1.0, 1.0))))


def spec_to_dict(spec: SceneSpec) -> dict:
    k = spec.rig.intrinsics
    return {
        "rig": {"f": k.f, "cx": k.cx, "cy": k.cy, "baseline": spec.rig.baseline,
                "width": spec.rig.width, "height": spec.rig.height},
        "frames": spec.frames,
        "noise": spec.noise,
        "seed": spec.seed,
        "velocity": list(map(float, spec.velocity)),
        "omega": list(map(float, spec.omega)),
        "surfaces": [_surface_to_dict(s) for s in spec.surfaces],
        "movers": [{"center": list(map(float, m.center)), "velocity": list(map(float, m.velocity)),
                    "omega": list(map(float, m.omega)), "surfaces": [_surface_to_dict(s) for s in m.surfaces]}
                   for m in spec.movers],
    }


def spec_from_dict(d: dict) -> SceneSpec:
    r = d["rig"]
    rig = StereoRig(Intrinsics(r["f"], r["cx"], r["cy"]), r["baseline"], int(r["width"]), int(r["height"]))
    movers = []
    for m in d.get("movers", []):
        if "box" in m:
            b = m["box"]
            surfs = box_surfaces(b["size"], b.get("texel", 0.03), b.get("seed", 100), tuple(b.get("tint", (1, 1, 1))))
        else:
            surfs = [_surface_from_dict(s) for s in m["surfaces"]]
        movers.append(Mover(surfs, np.asarray(m["center"], float), np.asarray(m["velocity"], float),
                            np.asarray(m.get("omega", [0, 0, 0]), float)))
    return SceneSpec(rig, int(d["frames"]), [_surface_from_dict(s) for s in d.get("surfaces", [])], movers,
                     np.asarray(d.get("velocity", [0, 0, 0]), float), np.asarray(d.get("omega", [0, 0, 0]), float),
                     float(d.get("noise", 0.01)), int(d.get("seed", 0)))


def load_spec(path) -> SceneSpec:
    with open(path) as fh:
        return spec_from_dict(json.load(fh))


def save_spec(spec: SceneSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(spec_to_dict(spec), fh, indent=1)


# ----------------------------------------------------------------------------
# ready-made scenes

def _rig(width, height, f, baseline=0.5):
    return StereoRig(Intrinsics(f, (width - 1) / 2.0, (height - 1) / 2.0), baseline, width, height)


def plane_scene(depth: float = 10.0, width: int = 96, height: int = 64, f: float = 240.0, baseline: float = 0.5,
                frames: int = 1, noise: float = 0.01, seed: int = 0, velocity=(0, 0, 0), omega=(0, 0, 0)) -> SceneSpec:
    """A single unbounded fronto-parallel plane."""
    plane = Surface(np.array([0.0, 0.0, depth]), np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), None,
                    texel=depth / f * 1.2, seed=seed + 1)
    return SceneSpec(_rig(width, height, f, baseline), frames, [plane], [], np.asarray(velocity, float),
                     np.asarray(omega, float), noise, seed)


def _street(f, depth_wall, seed, texel_scale=1.0):
    ground = Surface(np.array([0.0, 1.5, 0.0]), np.array([1.0, 0, 0]), np.array([0, 0, 1.0]), None,
                     texel=0.04 * texel_scale, seed=seed + 1, tint=(0.9, 0.9, 0.85))
    wall = Surface(np.array([0.0, 0.0, depth_wall]), np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), None,
                   texel=depth_wall / f * 1.3, seed=seed + 2, tint=(0.85, 0.95, 1.0))
    return [ground, wall]


def multiplane_scene(width: int = 320, height: int = 96, f: float = 260.0, baseline: float = 0.5,
                     noise: float = 0.01, seed: int = 0) -> SceneSpec:
    """Ground, back wall, a slanted side wall and two boxes."""
    surfs = _street(f, 22.0, seed)
    side = Surface(np.array([-4.0, 0.0, 12.0]), np.array([0, 0, 1.0]), np.array([0, 1.0, 0]), (10.0, 6.0),
                   texel=0.04, seed=seed + 3, tint=(1.0, 0.9, 0.8))
    surfs.append(side)
    for i, (c, s) in enumerate((((1.5, 0.5, 9.0), (1.6, 2.0, 1.6)), ((-1.0, 0.9, 14.0), (1.2, 1.2, 1.2)))):
        for b in box_surfaces(s, 0.035, seed + 10 + 10 * i, (1.0, 0.85, 0.85)):
            b.origin = b.origin + np.asarray(c)
            surfs.append(b)
    return SceneSpec(_rig(width, height, f, baseline), 1, surfs, [], np.zeros(3), np.zeros(3), noise, seed)


def street_scene(width: int = 620, height: int = 188, f: float = 500.0, baseline: float = 0.5, frames: int = 5,
                 mover: bool = True, mover_speed: float = 0.2, camera_speed: float = 0.2, noise: float = 0.01,
                 seed: int = 0, omega=(0.0, 0.0, 0.0)) -> SceneSpec:
    """Driving-like scene: ground, back wall, static boxes and one moving box."""
    surfs = _street(f, 20.0, seed)
    statics = (((-3.0, 0.5, 13.0), (1.5, 2.0, 1.5)), ((3.2, 0.25, 15.0), (1.8, 2.5, 1.8)))
    for i, (c, s) in enumerate(statics):
        for b in box_surfaces(s, 0.035, seed + 10 + 10 * i, (0.95, 0.95, 0.8)):
            b.origin = b.origin + np.asarray(c)
            surfs.append(b)
    movers = []
    if mover:
        box = box_surfaces((1.6, 1.4, 1.6), 0.03, seed + 50, (1.0, 0.55, 0.45))
        movers.append(Mover(box, np.array([-1.0, 0.8, 10.0]), np.array([mover_speed, 0.0, 0.0])))
    return SceneSpec(_rig(width, height, f, baseline), frames, surfs, movers,
                     np.array([0.0, 0.0, camera_speed]), np.asarray(omega, float), noise, seed)


def occlusion_band_scene(width: int = 320, height: int = 96, f: float = 260.0, baseline: float = 0.5,
                         band: int = 20, frames: int = 3, noise: float = 0.01, seed: int = 0) -> SceneSpec:
    """Near board in front of a wall; the wall strip left of the board is hidden in the right view.

    The camera moves left by more than a baseline per frame, so the strip is
    seen by both cameras of the next frame.
    """
    z_bg = 16.0
    d_bg = f * baseline / z_bg
    z_fg = f * baseline / (d_bg + band)
    wall = Surface(np.array([0.0, 0.0, z_bg]), np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), None,
                   texel=z_bg / f * 1.3, seed=seed + 2)
    board = Surface(np.array([0.6 * z_fg, 0.0, z_fg]), np.array([1.0, 0, 0]), np.array([0, 1.0, 0]),
                    (0.35 * z_fg, 1.0 * z_fg), texel=z_fg / f * 1.3, seed=seed + 3, tint=(1.0, 0.9, 0.8))
    return SceneSpec(_rig(width, height, f, baseline), frames, [wall, board], [],
                     np.array([-1.5 * baseline, 0.0, 0.0]), np.zeros(3), noise, seed)


def odometry_scene(mover: bool = False, frames: int = 10, width: int = 320, height: int = 96, f: float = 260.0,
                   baseline: float = 0.5, speed: float = 0.25, yaw_deg: float = 1.0, noise: float = 0.01,
                   seed: int = 0) -> SceneSpec:
    """Camera moving forward while turning, past two boxes; the optional mover is a near slab covering ~30%."""
    surfs = _street(f, 25.0, seed)
    for i, (c, s) in enumerate((((-4.0, 0.0, 16.0), (2.0, 3.0, 2.0)), ((4.5, 0.0, 18.0), (2.0, 3.0, 2.0)))):
        for b in box_surfaces(s, 0.04, seed + 10 + 10 * i, (0.95, 0.95, 0.8)):
            b.origin = b.origin + np.asarray(c)
            surfs.append(b)
    velocity = np.array([0.12 * speed, 0.0, speed])
    omega = np.array([0.0, np.radians(yaw_deg), 0.0])
    movers = []
    if mover:
        slab = box_surfaces((3.0, 2.0, 1.0), 0.03, seed + 50, (1.0, 0.55, 0.45))
        # keeps its distance to the camera and slides sideways relative to it
        movers.append(Mover(slab, np.array([-1.2, 0.2, 7.0]), velocity + np.array([speed, 0.0, 0.0]), omega))
    return SceneSpec(_rig(width, height, f, baseline), frames, surfs, movers, velocity, omega, noise, seed)
