"""File formats: images, 16-bit disparity and flow PNGs, masks, poses and calibration."""
from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

from .geometry import Intrinsics, Pose, StereoRig

FLOW_SCALE = 64.0
FLOW_OFFSET = 2.0 ** 15
DISP_SCALE = 256.0


def _check_write(ok: bool, path) -> None:
    if not ok:
        raise OSError(f"could not write {path}")


def _mkdir(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def read_image(path) -> np.ndarray:
    """RGB float32 image in [0, 1] (8- or 16-bit files)."""
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FileNotFoundError(f"cannot read image {path}")
    scale = 65535.0 if img.dtype == np.uint16 else 255.0
    img = img.astype(np.float32) / scale
    if img.ndim == 3:
        img = cv2.cvtColor(img[..., :3], cv2.COLOR_BGR2RGB)
    return img


def write_image(path, img) -> None:
    """8-bit PNG from an RGB (or gray) float image in [0, 1]."""
    a = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    if a.ndim == 3:
        a = cv2.cvtColor(a, cv2.COLOR_RGB2BGR)
    p = _mkdir(path)
    _check_write(cv2.imwrite(str(p), a), p)


def encode_disparity(d) -> np.ndarray:
    """``round(256 d)`` as uint16; NaN or negative is 0 (invalid), valid values stay >= 1."""
    d = np.asarray(d, dtype=np.float64)
    ok = np.isfinite(d) & (d >= 0)
    v = np.zeros(d.shape, dtype=np.uint16)
    v[ok] = np.clip(np.rint(d[ok] * DISP_SCALE), 1, 65535).astype(np.uint16)
    return v


def decode_disparity(v) -> np.ndarray:
    v = np.asarray(v)
    return np.where(v > 0, v.astype(np.float64) / DISP_SCALE, np.nan)


def write_disparity(path, d) -> None:
    p = _mkdir(path)
    _check_write(cv2.imwrite(str(p), encode_disparity(d)), p)


def read_disparity(path) -> np.ndarray:
    v = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if v is None:
        raise FileNotFoundError(f"cannot read disparity {path}")
    if v.dtype != np.uint16 or v.ndim != 2:
        raise ValueError(f"{path}: expected a 16-bit single-channel disparity PNG")
    return decode_disparity(v)


def encode_flow(flow, valid=None) -> np.ndarray:
    """``(H, W, 3)`` uint16 in file channel order (u, v, valid); ``value = 64 d + 2^15``."""
    f = np.asarray(flow, dtype=np.float64)
    ok = np.all(np.isfinite(f), axis=-1)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    enc = np.zeros(f.shape[:2] + (3,), dtype=np.uint16)
    for c in range(2):
        vals = np.clip(np.rint(np.nan_to_num(f[..., c]) * FLOW_SCALE + FLOW_OFFSET), 0, 65535)
        enc[..., c] = np.where(ok, vals, 0).astype(np.uint16)
    enc[..., 2] = ok
    return enc


def decode_flow(enc) -> tuple[np.ndarray, np.ndarray]:
    enc = np.asarray(enc)
    ok = enc[..., 2] > 0
    f = (enc[..., :2].astype(np.float64) - FLOW_OFFSET) / FLOW_SCALE
    f[~ok] = np.nan
    return f, ok


def write_flow(path, flow, valid=None) -> None:
    p = _mkdir(path)
    # OpenCV stores BGR: reverse so the file reads (u, v, valid) as (R, G, B)
    _check_write(cv2.imwrite(str(p), encode_flow(flow, valid)[..., ::-1].copy()), p)


def read_flow(path) -> tuple[np.ndarray, np.ndarray]:
    v = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if v is None:
        raise FileNotFoundError(f"cannot read flow {path}")
    if v.dtype != np.uint16 or v.ndim != 3 or v.shape[2] != 3:
        raise ValueError(f"{path}: expected a 16-bit three-channel flow PNG")
    return decode_flow(v[..., ::-1])


def write_mask(path, mask) -> None:
    p = _mkdir(path)
    _check_write(cv2.imwrite(str(p), np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)), p)


def read_mask(path) -> np.ndarray:
    v = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if v is None:
        raise FileNotFoundError(f"cannot read mask {path}")
    if v.ndim == 3:
        v = v[..., 0]
    return v > 127


def write_poses(path, poses) -> None:
    lines = [" ".join(f"{x:.12e}" for x in p.matrix[:3].ravel()) for p in poses]
    p = _mkdir(path)
    p.write_text("".join(line + "\n" for line in lines))


def read_poses(path) -> list:
    out = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        vals = [float(x) for x in line.split()]
        if len(vals) != 12:
            raise ValueError(f"{path}:{n}: expected 12 numbers, got {len(vals)}")
        m = np.eye(4)
        m[:3] = np.reshape(vals, (3, 4))
        out.append(Pose.from_matrix(m))
    return out


CALIB_KEYS = ("f", "cx", "cy", "baseline", "width", "height")


def write_calib(path, rig: StereoRig) -> None:
    k = rig.intrinsics
    vals = dict(f=k.f, cx=k.cx, cy=k.cy, baseline=rig.baseline, width=rig.width, height=rig.height)
    p = _mkdir(path)
    p.write_text("".join(f"{key} = {vals[key]!r}\n" for key in CALIB_KEYS))


def read_calib(path) -> StereoRig:
    from .config import parse_pairs

    text = Path(path).read_text()
    try:
        pairs = parse_pairs(text)
        missing = [k for k in CALIB_KEYS if k not in pairs]
        if missing:
            raise ValueError(f"missing keys {missing}")
        return StereoRig(Intrinsics(float(pairs["f"]), float(pairs["cx"]), float(pairs["cy"])),
                         float(pairs["baseline"]), int(pairs["width"]), int(pairs["height"]))
    except ValueError as e:
        raise ValueError(f"{path}: bad calibration ({e})") from None
