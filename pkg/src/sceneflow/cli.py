"""Command line: ``sceneflow run | eval | synth | viz``."""
from __future__ import annotations

import argparse
import glob
import sys
from pathlib import Path

import cv2
import numpy as np

from . import io
from .config import PROFILES, load_config, profile
from .metrics import evaluate
from .pipeline import Pipeline

NAME = "{:06d}.png"


class CliError(Exception):
    pass


def expand(pattern: str) -> list:
    """Files matching a printf-style (``%06d``) or glob pattern, in order."""
    if "%" in pattern:
        out, i = [], 0
        while Path(pattern % i).exists():
            out.append(pattern % i)
            i += 1
        if not out:  # sequences may start at 1
            i = 1
            while Path(pattern % i).exists():
                out.append(pattern % i)
                i += 1
        return out
    return sorted(glob.glob(pattern))


def _files(pattern: str, flag: str) -> list:
    files = expand(pattern)
    if not files:
        raise CliError(f"{flag}: no files match {pattern!r}")
    return files


def _read_image(path):
    try:
        return io.read_image(path)
    except FileNotFoundError as e:
        raise CliError(str(e)) from None


# ---------------------------------------------------------------- run

def save_frame(out: Path, t: int, res) -> None:
    """Write one pipeline output as disp_0, disp_1, flow and mask maps."""
    out = Path(out)
    io.write_disparity(out / "disp_0" / NAME.format(t), res.disparity)
    io.write_disparity(out / "disp_1" / NAME.format(t), res.disparity_next)
    io.write_flow(out / "flow" / NAME.format(t), res.flow)
    io.write_mask(out / "mask" / NAME.format(t), res.mask)


def cmd_run(args) -> int:
    lefts = _files(args.left, "--left")
    rights = _files(args.right, "--right")
    if len(lefts) != len(rights):
        raise CliError(f"--left matches {len(lefts)} files but --right matches {len(rights)}")
    if len(lefts) < 2:
        raise CliError(f"--left: need at least two frames, found {len(lefts)}")
    try:
        rig = io.read_calib(args.calib)
    except (OSError, ValueError) as e:
        raise CliError(f"--calib: {e}") from None
    cfg = profile(args.profile)
    try:
        if args.config:
            cfg = load_config(args.config, cfg)
        for item in args.set or []:
            if "=" not in item:
                raise ValueError(f"expected key=value, got {item!r}")
            k, v = item.split("=", 1)
            cfg = cfg.updated({k.strip(): v})
    except (OSError, KeyError, ValueError) as e:
        raise CliError(f"--config/--set: {e}") from None
    priors = None
    if args.prior_flow:
        pf = _files(args.prior_flow, "--prior-flow")
        if len(pf) < len(lefts) - 1:
            raise CliError(f"--prior-flow: need {len(lefts) - 1} files, found {len(pf)}")
        priors = []
        for p in pf[: len(lefts) - 1]:
            try:
                priors.append(io.read_flow(p))
            except (FileNotFoundError, ValueError) as e:
                raise CliError(f"--prior-flow: {e}") from None

    out = Path(args.out)
    pipe = Pipeline(rig, cfg, threads=args.threads)
    poses = []
    try:
        for t, res in enumerate(pipe.run(lefts, rights, priors, load=_read_image)):
            save_frame(out, t, res)
            poses.append(res.pose)
            note = f" [{res.diagnostics['failure']}]" if "failure" in res.diagnostics else ""
            if not args.quiet:
                print(f"frame {t}: {sum(res.timings.values()):.2f} s, moving {100 * res.mask.mean():.1f}%{note}")
    except ValueError as e:
        raise CliError(str(e)) from None
    io.write_poses(out / "poses.txt", poses)
    return 0


# ---------------------------------------------------------------- eval

def _load_maps(root: Path, name: str, need_mask: bool = False):
    maps = {"d1": io.read_disparity(root / "disp_0" / name), "d2": io.read_disparity(root / "disp_1" / name),
            "flow": io.read_flow(root / "flow" / name)[0]}
    if need_mask and (root / "mask" / name).exists():
        maps["mask"] = io.read_mask(root / "mask" / name)
    return maps


def cmd_eval(args) -> int:
    est, gt = Path(args.est), Path(args.gt)
    if not (gt / "disp_0").is_dir():
        raise CliError(f"--gt: {gt / 'disp_0'} is not a directory")
    names = sorted(p.name for p in (gt / "disp_0").glob("*.png"))
    if not names:
        raise CliError(f"--gt: no maps in {gt / 'disp_0'}")
    tot = {}
    for name in names:
        try:
            g = _load_maps(gt, name, need_mask=True)
            e = _load_maps(est, name)
        except (FileNotFoundError, ValueError) as err:
            raise CliError(str(err)) from None
        try:
            m = evaluate(e, g)
        except ValueError as err:
            raise CliError(f"{name}: {err}") from None
        print(f"{name}\n{m.table()}")
        for key in ("d1", "d2", "fl", "sf"):
            for region, rate in getattr(m, key).items():
                tot.setdefault((key, region), []).append(rate)
    if len(names) > 1:
        print("mean over frames")
        for key in ("d1", "d2", "fl", "sf"):
            vals = [np.nanmean(tot[(key, reg)]) if np.isfinite(tot[(key, reg)]).any() else np.nan
                    for reg in ("bg", "fg", "all")]
            print(f"{key.upper():>3}  " + "  ".join(f"{v:6.2f}" for v in vals))
    return 0


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    from . import synthetic

    try:
        spec = synthetic.load_spec(args.spec)
        frames = synthetic.render(spec)
    except (OSError, ValueError, KeyError) as e:
        raise CliError(f"--spec: {e}") from None
    out = Path(args.out)
    for t, fr in enumerate(frames):
        io.write_image(out / "image_2" / NAME.format(t), fr.left)
        io.write_image(out / "image_3" / NAME.format(t), fr.right)
    for t, fr in enumerate(frames[:-1]):
        io.write_disparity(out / "disp_0" / NAME.format(t), fr.disparity)
        io.write_disparity(out / "disp_1" / NAME.format(t), np.where(fr.flow_occluded, np.nan, fr.disparity_next))
        io.write_flow(out / "flow" / NAME.format(t), fr.flow, ~fr.flow_occluded)
        io.write_mask(out / "mask" / NAME.format(t), fr.mask)
    io.write_poses(out / "poses.txt", [fr.pose for fr in frames[:-1]])
    io.write_calib(out / "calib.txt", spec.rig)
    return 0


# ---------------------------------------------------------------- viz

def flow_to_color(flow, max_mag: float | None = None) -> np.ndarray:
    """Color-wheel RGB uint8: hue = direction, saturation = magnitude; invalid pixels are black."""
    f = np.asarray(flow, dtype=np.float64)
    ok = np.all(np.isfinite(f), axis=-1)
    u, v = np.where(ok, f[..., 0], 0.0), np.where(ok, f[..., 1], 0.0)
    mag = np.hypot(u, v)
    if max_mag is None:
        max_mag = float(mag[ok].max()) if ok.any() else 1.0
    ang = (np.degrees(np.arctan2(v, u)) % 360.0) / 2.0
    hsv = np.zeros(f.shape[:2] + (3,), dtype=np.uint8)
    hsv[..., 0] = np.rint(ang).astype(np.uint8) % 180
    hsv[..., 1] = np.clip(np.rint(255.0 * mag / max(max_mag, 1e-9)), 0, 255).astype(np.uint8)
    hsv[..., 2] = np.where(ok, 255, 0)
    return cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB)


def disparity_to_color(d, d_max: float | None = None) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    ok = np.isfinite(d)
    if d_max is None:
        d_max = float(d[ok].max()) if ok.any() else 1.0
    g = np.clip(np.rint(255.0 * np.where(ok, d, 0.0) / max(d_max, 1e-9)), 0, 255).astype(np.uint8)
    rgb = cv2.cvtColor(cv2.applyColorMap(g, cv2.COLORMAP_JET), cv2.COLOR_BGR2RGB)
    rgb[~ok] = 0
    return rgb


def cmd_viz(args) -> int:
    raw = cv2.imread(args.input, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise CliError(f"--input: cannot read {args.input}")
    if raw.dtype == np.uint16 and raw.ndim == 3:
        rgb = flow_to_color(io.read_flow(args.input)[0])
    elif raw.dtype == np.uint16 and raw.ndim == 2:
        rgb = disparity_to_color(io.read_disparity(args.input))
    elif raw.dtype == np.uint8 and raw.ndim == 2:
        rgb = np.repeat(np.where(raw > 127, 255, 0).astype(np.uint8)[..., None], 3, axis=-1)
    else:
        raise CliError(f"--input: {args.input} is not a disparity, flow or mask map")
    io.write_image(args.out, rgb.astype(np.float64) / 255.0)
    return 0


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sceneflow", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="process a rectified stereo sequence")
    r.add_argument("--left", required=True, help="left image pattern (%%06d style or glob)")
    r.add_argument("--right", required=True, help="right image pattern")
    r.add_argument("--calib", required=True, help="calibration file (f, cx, cy, baseline, width, height)")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--profile", default="general", choices=sorted(PROFILES))
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--prior-flow", help="pattern of external prior flow PNGs, one per output frame")
    r.add_argument("--config", help="key = value configuration file")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration value")
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="outlier rates of estimates against ground truth")
    e.add_argument("--est", required=True)
    e.add_argument("--gt", required=True)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="render a synthetic sequence with ground truth")
    s.add_argument("--spec", required=True, help="JSON scene description")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    v = sub.add_parser("viz", help="color-code a disparity, flow or mask map")
    v.add_argument("--input", required=True)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_viz)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
