"""Runtime configuration.

A single :class:`Config` dataclass holds every tunable constant used across
the package.  Module functions take their defaults from ``DEFAULTS`` so the
values live in exactly one place.  Configuration may be loaded from a JSON
file and overridden by environment variables (secrets only) and explicit
keyword overrides, in that order of increasing precedence.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Optional, Tuple


class ConfigError(ValueError):
    """Raised for unknown keys or malformed values in a config file."""


@dataclass
class Config:
    # keypoint candidate sampling
    fps_count: int = 24                      # candidate keypoints per prototype
    spur_min_px: int = 3                     # skeleton spurs shorter than this are pruned

    # patch features
    patch_size: int = 16                     # px, square patch side
    patch_stride: int = 8                    # px
    orient_bins: int = 8                     # gradient-orientation histogram bins

    # retrieval / matching
    rotations: Tuple[float, ...] = (0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0)
    bbs_threshold: float = 0.30              # below this the garment is a new category
    grid_rows: int = 4                       # coarse region grid
    grid_cols: int = 4
    depth_fallback_px: int = 5               # search radius for valid depth

    # client plumbing
    client_retries: int = 2                  # re-asks after a malformed reply
    reply_max_bytes: int = 16384
    mark_radius_px: int = 6
    image_long_side: int = 768               # downscale bound for HTTP image payloads
    vlm_url: str = ""
    vlm_key: str = ""
    vlm_model: str = "gpt-4o"
    vlm_temperature: float = 0.0
    vlm_timeout_s: float = 60.0

    # planner
    max_plan_attempts: int = 3               # N_max proposal attempts per round
    round_cap: int = 6                       # planning/execution rounds per episode

    # skills
    lift_height: float = 0.02                # m, approach/carry height above contact;
                                             # kept low so a carried edge drags rather
                                             # than reels the resting cloth toward it
    placement_height: float = 0.01           # m, final descend height above target
    rotate_step_deg: float = 10.0            # max sweep per waypoint step
    hang_orientation_deg: float = 30.0       # gripper tilt while carrying to a rack
    hang_drop: float = 0.075                 # m above the bar where a carry releases
    pull_fraction: float = 0.10              # pull distance as fraction of gripper gap
    min_gripper_clearance: float = 0.05      # m, between the two grippers

    # simulator
    solver_sweeps: int = 40                  # constraint projection sweeps per settle
    gravity_step: float = 0.005              # m pulled toward the table per sweep
    friction_slip: float = 0.004             # per-sweep xy drift a table contact resists
    contact_eps: float = 1e-4                # z below this counts as table contact
    grasp_radius: float = 0.02               # m, CLOSE captures particles within this
    edge_error_tol: float = 0.02             # max stretch as fraction of rest length
    particle_radius: float = 0.022           # m, render splat radius; covers the
                                             # half-diagonal of a 0.03 m cloth cell
                                             # so a flat sheet renders without holes
    rack_capture: float = 0.02               # m, hook distance around the rack bar
    ground_eps: float = 0.005                # m, below this a particle touches ground
    substep_length: float = 0.01             # m, gripper interpolation resolution
    render_size: int = 320                   # px, square observation raster
    camera_height: float = 1.0               # m above the table centre
    camera_span: float = 0.8                 # m of table captured across the image

    # evaluation
    ap_thresholds: Tuple[float, ...] = (15.0, 30.0, 45.0)   # px
    fold_iou_threshold: float = 0.90
    flatten_coverage_threshold: float = 0.90
    fold_mpe_threshold: float = 0.02         # m, mean particle error alternative gate
    hang_min_particles: int = 10

    def replace(self, **kw) -> "Config":
        return dataclasses.replace(self, **kw)


_FIELDS = {f.name: f for f in dataclasses.fields(Config)}

# environment variables consulted for secrets (never stored in files)
ENV_VARS = {
    "GARMENTKIT_VLM_URL": "vlm_url",
    "GARMENTKIT_VLM_KEY": "vlm_key",
}


def _coerce(name: str, value):
    f = _FIELDS[name]
    if f.type in ("int",) and isinstance(value, float) and value.is_integer():
        return int(value)
    if f.type.startswith("Tuple") and isinstance(value, list):
        return tuple(value)
    return value


def load_config(path: Optional[str] = None, env: Optional[dict] = None, **overrides) -> Config:
    """Build a Config from ``defaults < file < environment < overrides``.

    Unknown keys in the file or in overrides raise ConfigError.
    """
    values = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, val in raw.items():
            if key not in _FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce(key, val)
    env = os.environ if env is None else env
    for var, key in ENV_VARS.items():
        if env.get(var):
            values[key] = env[var]
    for key, val in overrides.items():
        if val is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, val)
    return Config(**values)


DEFAULTS = Config()
