"""Flat ``key = value`` configuration and the scenario description built from it."""
from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ..core import Pose2D

WORLDS_DIR = Path(str(resources.files("omninav.sim") / "worlds"))

DEFAULTS: dict[str, object] = {
    # scenario
    "world": "corridor.map",
    "start": "2.5, 5.0, 0",
    "requests": "",
    "seed": 0,
    "ticks": 4000,
    "dt": 0.05,
    "localization": "slam",  # slam | mcl | odometry | truth
    "planning_map": "estimate",  # estimate | truth
    # robot
    "wheel_diameter": 0.10,
    "wheel_offset": 0.20,
    "delta_deg": 30.0,
    "ppr": 500,
    "heading_source": "encoders",
    # plant noise
    "slip_x": 0.0,
    "slip_y": 0.0,
    "slip_theta": 0.0,
    "slip_transient": 0.0,
    "heading_sigma_deg": 0.0,
    "ir_range": 0.25,
    # lidar
    "lidar_beams": 360,
    "lidar_l_min": 0.15,
    "lidar_l_max": 12.0,
    "lidar_sigma": 0.01,
    "lidar_dropout": 0.0,
    "lidar_mount_deg": 0.0,
    # mapping and filter
    "resolution": 0.1,
    "logodds": "A",
    "free_on_max_range": False,
    "particles": 625,
    "filter_every": 1,
    "beam_stride": 1,
    "hit_threshold": 0.65,
    "p_hit_floor": 0.05,
    "sigma_bar_x": 0.25,
    "sigma_bar_y": 0.25,
    "sigma_bar_theta": 0.0,
    "sigma_x": 1.5,
    "sigma_y": 1.5,
    "sigma_theta": 0.005,
    "alpha_slow": 0.0125,
    "alpha_fast": 62.5,
    "omega_inject": 0.025,
    "drift_gamma": 0.1,
    "theta_eps_deg": 1.414,
    "inject_random": True,
    "kmeans_k": 3,
    "kmeans_epochs": 100,
    # planner
    "planner": "rrt-star",
    "planner_index": "kd",
    "max_iterations": 625,
    "delta_stop": 0.2,
    "delta_step": 1.0,
    "r_near": 1.5,
    "sample_margin": 1.0,
    "occupancy_threshold": 0.65,
    "clearance": 0.3,
    "replan_period": 40,
    # control: commands are per tick, so the error obeys
    # e[t+1] = (1 - kp - kd) e[t] + kd e[t-1]; these gains keep both roots inside the unit circle
    "kp_xy": 0.6,
    "kd_xy": 0.1,
    "kp_theta": 0.5,
    "kd_theta": 0.1,
    "v_max": 0.05,
    "omega_max": 0.1,
    "arrival_tolerance": 0.15,
}

_CHOICES = {
    "localization": ("slam", "mcl", "odometry", "truth"),
    "planning_map": ("estimate", "truth"),
    "planner": ("rrt", "rrt-star"),
    "planner_index": ("kd", "array"),
    "logodds": ("A", "B"),
    "heading_source": ("encoders", "true_heading_plus_noise"),
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw, default):
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(str(raw).strip())
        if isinstance(default, float):
            v = float(str(raw).strip())
            if not math.isfinite(v):
                raise ValueError
            return v
    except ValueError:
        raise ConfigError(f"{key}: expected a {type(default).__name__}, got {raw!r}") from None
    value = str(raw).strip()
    if key in _CHOICES and value not in _CHOICES[key]:
        raise ConfigError(f"{key}: expected one of {', '.join(_CHOICES[key])}, got {value!r}")
    return value


def parse_config_text(text: str) -> dict[str, str]:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string("[_]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return dict(cp["_"])


def resolve_config(raw: dict, base_dir: str | os.PathLike | None = None) -> dict:
    """Typed settings: defaults overlaid with ``raw``; ``room.*`` keys pass through."""
    out = dict(DEFAULTS)
    for key, value in raw.items():
        if key.startswith("room."):
            out[key] = value
        elif key in DEFAULTS:
            out[key] = _coerce(key, value, DEFAULTS[key])
        else:
            raise ConfigError(f"unknown config key {key!r}")
    for key in _CHOICES:
        out[key] = _coerce(key, out[key], DEFAULTS[key])
    if out["seed"] < 0:
        raise ConfigError("seed must be >= 0")
    out["_base_dir"] = str(base_dir) if base_dir is not None else None
    return out


def load_config(path: str | os.PathLike, overrides: dict | None = None) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from None
    raw = parse_config_text(text)
    raw.update(overrides or {})
    return resolve_config(raw, Path(path).resolve().parent)


def find_world(name: str, base_dir: str | None = None) -> Path:
    """Look next to the scenario file first, then among the bundled worlds."""
    p = Path(name)
    candidates = [p] if p.is_absolute() else ([Path(base_dir) / p] if base_dir else []) + [p, WORLDS_DIR / p]
    for c in candidates:
        if c.is_file():
            return c
    raise ConfigError(f"world file {name!r} not found")


def _floats(key: str, text: str, n: tuple[int, ...]) -> list[float]:
    try:
        vals = [float(t) for t in str(text).replace(";", ",").split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {text!r}") from None
    if len(vals) not in n or not all(math.isfinite(v) for v in vals):
        raise ConfigError(f"{key}: expected {' or '.join(map(str, n))} numbers, got {text!r}")
    return vals


def parse_pose(key: str, text: str) -> Pose2D:
    """``x, y`` or ``x, y, theta_deg``."""
    v = _floats(key, text, (2, 3))
    return Pose2D(v[0], v[1], math.radians(v[2]) if len(v) == 3 else 0.0)


@dataclass(frozen=True)
class Scenario:
    world: Path
    start: Pose2D
    rooms: dict[str, Pose2D] = field(default_factory=dict)
    requests: tuple[str, ...] = ()
    seed: int = 0
    ticks: int = 4000
    settings: dict = field(default_factory=lambda: dict(DEFAULTS))

    @classmethod
    def from_settings(cls, s: dict) -> "Scenario":
        rooms = {k[len("room."):]: parse_pose(k, v) for k, v in s.items() if k.startswith("room.")}
        requests = tuple(r.strip() for r in str(s["requests"]).split(",") if r.strip())
        unknown = [r for r in requests if r not in rooms]
        if unknown:
            raise ConfigError(f"requests name undefined rooms: {', '.join(unknown)}")
        if s["ticks"] < 1:
            raise ConfigError("ticks must be >= 1")
        return cls(find_world(s["world"], s.get("_base_dir")), parse_pose("start", s["start"]), rooms, requests,
                   s["seed"], s["ticks"], s)

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "Scenario":
        return cls.from_settings(load_config(path, overrides))
