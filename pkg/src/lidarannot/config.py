"""Pipeline configuration: parameter blocks, JSON round trip and flag overrides."""

from __future__ import annotations

import argparse
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .annotate import AnnotateParams
from .core import InvalidParameterError
from .pointmap import IcpConfig, NormalParams
from .pointray import RayParams
from .simworld import SensorModel

BLOCKS = {
    "icp": IcpConfig,
    "normals": NormalParams,
    "ray": RayParams,
    "annotate": AnnotateParams,
    "sensor": SensorModel,
}

# fields holding angles in radians; --help also shows them in degrees
ANGLE_FIELDS = {
    "min_motion_rot", "theta_res", "theta_0", "alpha_max", "beta_min", "d_theta", "d_phi",
    "ransac_max_tilt", "vertical_spacing", "top_elevation", "azimuth_step",
}

HELP = {
    "subsample_dl": "ICP frame subsampling grid (m)",
    "n_samples": "random frame points drawn per ICP iteration",
    "max_pair_dist": "reject ICP pairs farther apart than this (m)",
    "max_plane_dist": "reject ICP pairs with a larger plane distance from iteration 2 (m)",
    "max_iterations": "ICP iteration cap",
    "min_motion_trans": "ICP convergence: relative translation below this (m)",
    "min_motion_rot": "ICP convergence: relative rotation below this (rad)",
    "theta_res": "sensor angular resolution for normal neighbourhoods (rad)",
    "radius_factor": "normal neighbourhood radius as a multiple of theta_res",
    "theta_0": "incidence angle beyond which the lidar is not facing a surface (rad)",
    "R_0": "ideal range for normal estimation (m)",
    "alpha_max": "free-space update: maximum incidence angle (rad)",
    "beta_min": "free-space update: normals within this of vertical always qualify (rad)",
    "n_min": "observations needed before p_mov leaves the 0.5 prior",
    "d_theta": "frustum grid resolution in theta (rad)",
    "d_phi": "frustum grid resolution in phi (rad)",
    "crop_margin": "map crop margin around the frame's bounding box (m)",
    "tau_refine": "remove initial-map points with p_mov above this",
    "tau_short": "label ShortT when p_mov is above this",
    "tau_long": "label LongT when p_mov is below this",
    "ransac_dist": "ground plane inlier distance (m)",
    "ransac_iters": "RANSAC iterations",
    "backproject_max_dist": "back-projection nearest-neighbour gate (m)",
    "ransac_max_tilt": "ground plane normal must lie within this of vertical (rad)",
    "ransac_min_inlier_frac": "minimum ground inlier fraction",
    "n_beams": "number of lidar beams",
    "vertical_spacing": "elevation step between beams (rad)",
    "top_elevation": "elevation of the top beam (rad)",
    "azimuth_step": "azimuth step between firings (rad)",
    "max_range": "lidar maximum range (m)",
    "mount_height": "lidar height above the floor (m)",
    "noise_sigma": "Gaussian range noise (m)",
    "noise_seed": "seed of the range-noise stream",
}


@dataclass
class PipelineConfig:
    icp: IcpConfig = field(default_factory=IcpConfig)
    normals: NormalParams = field(default_factory=NormalParams)
    ray: RayParams = field(default_factory=RayParams)
    annotate: AnnotateParams = field(default_factory=AnnotateParams)
    sensor: SensorModel = field(default_factory=SensorModel)
    dl_map: float = 0.03
    seed: int = 0
    paths: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.dl_map > 0:
            raise InvalidParameterError("dl_map must be positive")

    def to_dict(self) -> dict:
        d = {name: asdict(getattr(self, name)) for name in BLOCKS}
        d.update(dl_map=self.dl_map, seed=self.seed, paths=dict(self.paths))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PipelineConfig:
        if not isinstance(d, dict):
            raise InvalidParameterError("config must be a JSON object")
        unknown = set(d) - set(BLOCKS) - {"dl_map", "seed", "paths"}
        if unknown:
            raise InvalidParameterError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for name, typ in BLOCKS.items():
            block = d.get(name, {})
            known = {f.name for f in fields(typ)}
            bad = set(block) - known
            if bad:
                raise InvalidParameterError(f"unknown keys in config block '{name}': {sorted(bad)}")
            kw[name] = typ(**block)
        return cls(
            **kw,
            dl_map=float(d.get("dl_map", 0.03)),
            seed=int(d.get("seed", 0)),
            paths={str(k): str(v) for k, v in d.get("paths", {}).items()},
        )


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise InvalidParameterError(f"cannot read config {path}: {e}") from e
    try:
        return PipelineConfig.from_dict(json.loads(text))
    except json.JSONDecodeError as e:
        raise InvalidParameterError(f"config {path} is not valid JSON: {e}") from e


def dump_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _describe_default(name: str, value) -> str:
    if name in ANGLE_FIELDS:
        return f"default: {value:.6g} rad = {math.degrees(value):.6g} deg"
    return f"default: {value}"


def add_config_arguments(parser: argparse.ArgumentParser, blocks=tuple(BLOCKS)) -> None:
    """One flag per parameter; unset flags leave the config file value untouched."""
    parser.add_argument("--config", help="JSON config file (flags override it)")
    for name in blocks:
        typ = BLOCKS[name]
        group = parser.add_argument_group(f"{name} parameters")
        default = typ()
        for f in fields(typ):
            value = getattr(default, f.name)
            kind = int if isinstance(value, int) and not isinstance(value, bool) else float
            group.add_argument(
                _flag(f.name),
                dest=f"{name}__{f.name}",
                type=kind,
                default=None,
                metavar="N" if kind is int else "X",
                help=f"{HELP.get(f.name, f.name)} ({_describe_default(f.name, value)})",
            )
    parser.add_argument("--dl-map", type=float, default=None, metavar="X",
                        help="map voxel size (m) (default: 0.03)")


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    """Config file (or defaults), then explicit flags, then validation."""
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    updates: dict[str, dict] = {}
    for key, value in vars(args).items():
        if "__" in key and value is not None:
            block, fname = key.split("__", 1)
            updates.setdefault(block, {})[fname] = value
    for block, changes in updates.items():
        setattr(cfg, block, replace(getattr(cfg, block), **changes))
    if getattr(args, "dl_map", None) is not None:
        cfg.dl_map = args.dl_map
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    cfg.__post_init__()
    return cfg
