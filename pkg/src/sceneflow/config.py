"""Parameter profiles and ``key = value`` configuration files."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .flow import FlowParams
from .odometry import VoParams
from .segmentation import SegParams
from .sgm import SgmParams
from .stereo import StereoParams

PROFILES = {
    "general": {},
    "road": {"ground_prior": True, "forward_candidates": True},
    "sintel": {"lam_col": 1.5, "tau_ncc": 0.25},
}


@dataclass(frozen=True)
class Config:
    profile: str = "general"
    # working resolutions, relative to an image of reference_width pixels
    stereo_scale: float = 0.65
    flow_scale: float = 0.4
    reference_width: int = 1242
    d_max: int = 255  # at reference_width
    # matching and SGM
    tau: float = 1.0
    lam_sgm: float = 200.0 / 255.0
    beta: float = 2.0
    gamma_sgm: float = 2.0
    # stereo
    lr_tol: float = 1.0
    tau_u: float = 3.0
    tau_c: float = 0.1
    tau_epi: float = 0.25
    hist_frac: float = 0.005
    # odometry
    vo_levels: int = 3
    vo_max_iter: int = 50
    moving_weight: float = 0.125
    forward_candidates: bool = False
    n_translations: int = 16
    # segmentation
    lam_ncc: float = 4.0
    tau_ncc: float = 0.5
    tau_w: float = 0.005
    lam_flo: float = 4.0
    tau_flo: float = 0.75
    gamma: float = 0.3
    lam_col: float = 0.5
    lam_mask: float = 2.0
    lam_potts: float = 10.0
    kappa3: float = 0.2
    lam_gro: float = 10.0
    ground_prior: bool = False
    seg_iters: int = 5
    superpixels: int = 850
    smooth_costs: bool = True
    # optical flow
    flow_bin: int = 2
    flow_pad: int = 2
    flow_max_side: int = 241
    flow_fallback: int = 16
    check_tol: float = 1.0
    wm_radius: int = 15
    kappa_geo: float = 2.0
    median: int = 5

    # -- derived parameter sets
    def scales(self, width: int) -> tuple[float, float]:
        """Effective (stereo, flow) scales for an input ``width`` pixels wide, never upsampling."""
        r = self.reference_width / float(width)
        return min(1.0, self.stereo_scale * r), min(1.0, self.flow_scale * r)

    def working_d_max(self, working_width: int) -> int:
        return max(1, int(round(self.d_max * working_width / float(self.reference_width))))

    def sgm_params(self) -> SgmParams:
        return SgmParams(self.lam_sgm, self.beta, self.gamma_sgm)

    def stereo_params(self, d_max: int) -> StereoParams:
        return StereoParams(d_max, self.tau, self.lr_tol, self.tau_u, self.tau_c, self.tau_epi, self.hist_frac,
                            self.sgm_params())

    def vo_params(self) -> VoParams:
        return dataclasses.replace(VoParams(), levels=self.vo_levels, max_iter=self.vo_max_iter,
                                   moving_weight=self.moving_weight, use_translations=self.forward_candidates,
                                   n_translations=self.n_translations, tau=self.tau)

    def seg_params(self) -> SegParams:
        return SegParams(tau=self.tau, lam_ncc=self.lam_ncc, tau_ncc=self.tau_ncc, tau_w=self.tau_w,
                         lam_flo=self.lam_flo, tau_flo=self.tau_flo, gamma=self.gamma, lam_col=self.lam_col,
                         lam_mask=self.lam_mask, lam_potts=self.lam_potts, kappa3=self.kappa3, lam_gro=self.lam_gro,
                         ground=self.ground_prior, max_iter=self.seg_iters, superpixels=self.superpixels,
                         smooth=self.smooth_costs)

    def flow_params(self) -> FlowParams:
        return FlowParams(tau=self.tau, bin=self.flow_bin, pad=self.flow_pad, max_side=self.flow_max_side,
                          fallback=self.flow_fallback, check_tol=self.check_tol, wm_radius=self.wm_radius,
                          kappa_geo=self.kappa_geo, median=self.median, sgm=self.sgm_params())

    def updated(self, values: dict) -> "Config":
        """Copy with ``values`` applied; string values are parsed to the field's type."""
        types = {f.name: f.type for f in fields(self)}
        out = {}
        for k, v in values.items():
            if k not in types:
                raise KeyError(f"unknown config key {k!r}")
            out[k] = _parse(v, types[k]) if isinstance(v, str) else v
        return dataclasses.replace(self, **out)


def _parse(text: str, typ) -> object:
    t = typ if isinstance(typ, str) else typ.__name__
    text = text.strip()
    if t == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if t == "int":
        return int(text)
    if t == "float":
        return float(text)
    return text


def profile(name: str = "general", **overrides) -> Config:
    if name not in PROFILES:
        raise KeyError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    return Config(profile=name).updated({**PROFILES[name], **overrides})


def parse_pairs(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path, base: Config | None = None) -> Config:
    """Config from a file; a ``profile`` key selects the base profile before the other keys apply."""
    pairs = parse_pairs(Path(path).read_text())
    if base is None:
        base = profile(pairs.pop("profile", "general"))
    else:
        pairs.pop("profile", None)
    return base.updated(pairs)


def dump_config(cfg: Config) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(cfg))
