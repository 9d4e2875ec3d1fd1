"""Fleet configuration: one structured text document driving every run.

Configs are YAML; every key has a default, unknown keys are rejected with
their full path, and the effective (fully materialized) document can be
echoed back out. Loading an echoed config reproduces the identical run
under the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .control import FilterCoeffs, GainSet, RateLimits
from .endpoint import PlantParams, VideoConfig
from .fabric import LinkProfile, periodic_outages
from .fleet import ControlConfig, Geofence, LocalizationConfig, MissionPlan, SafetyConfig, ntu_mission_plan
from .localization import MapEstimatorParams, OracleNoise
from .state import Pose4

__all__ = ["FleetConfig", "ConfigError", "load_config", "default_config_dict"]


class ConfigError(ValueError):
    """Invalid or unknown configuration content; message carries the key path."""


DEFAULTS: dict = {
    "seed": 1,
    "clock": "virtual",
    "duration_s": 120.0,
    "drones": {
        "count": 3,
        "start_spacing_m": 1.0,
        "plant": {
            "tau_v": 0.4,
            "tau_w": 0.25,
            "v_scale": 1.0,
            "w_scale": 100.0,
            "takeoff_alt": 1.0,
            "battery_rate": 8.0,
            "rc_timeout": 0.5,
            "takeoff_s": 2.0,
            "land_s": 2.0,
        },
    },
    "video": {"fps": 30.0, "frame_bytes": 11983, "mtu": 1400},
    "links": {
        "forward_latency_ms": 0.03,
        "wired": {
            "delay_min_ms": 0.15,
            "delay_mean_ms": 0.89,
            "delay_max_ms": 1.75,
            "jitter": "shifted-lognormal",
            "loss": 0.0,
        },
        "wireless": {
            "delay_min_ms": 4.14,
            "delay_mean_ms": 25.9,
            "delay_max_ms": 66.3,
            "jitter": "shifted-lognormal",
            "loss": 0.0,
            "bandwidth_cap_mbps": None,
            "outage": None,  # {start_s, period_s, duration_s} for a periodic schedule
            "outages": [],  # explicit [start_s, duration_s] windows
        },
    },
    "controller": {
        "kp": [0.8, 0.8, 1.0, 1.0],
        "kd": [0.3, 0.3, 0.2, 0.0],
        "alpha": 0.7,
        "beta": 0.3,
        "v_max_xy": 1.0,
        "v_max_z": 0.8,
        "w_max": 100.0,
        "rate_hz": 20.0,
        "filter_proportional": False,
        "prop_alpha": 0.7,
        "prop_beta": 0.3,
    },
    "localization": {
        "mode": "mle",
        "sigma_pos": 0.02,
        "sigma_yaw": 1.0,
        "p_fail": 0.02,
        "proc_latency_ms": 92.6,
        "rate_cap_hz": 10.8,
        "map": {
            "lam": 0.8,
            "t_lost": 1.0,
            "p_reassoc_fail": 0.3,
            "bias_rw_sigma": 0.01,
            "odom_sigma": 0.005,
        },
    },
    "safety": {
        "batt_land_pct": 15.0,
        "t_link_lost": 2.0,
        "t_fix_stale": 0.5,
        "hover_before_land": 3.0,
        "retry_s": 1.0,
    },
    "mission": {
        "letters": ["N", "T", "U"],
        "width": 0.6,
        "height": 1.0,
        "spacing": 0.1,
        "lateral_offset": 1.0,
        "arrival_radius": 0.1,
        "dwell": 0.5,
        "base": [0.0, 0.0, 1.0, 0.0],
    },
    "geofence": {"min": [-5.0, -5.0, 0.0], "max": [10.0, 5.0, 3.0]},
    "experiment": {"success_error_m": 0.5, "timeout_s": 120.0},
}


def default_config_dict() -> dict:
    return _deep_copy(DEFAULTS)


def _deep_copy(node):
    if isinstance(node, dict):
        return {k: _deep_copy(v) for k, v in node.items()}
    if isinstance(node, list):
        return [_deep_copy(v) for v in node]
    return node


def _merge(defaults: dict, override: dict, path: str) -> dict:
    out = {}
    for key, default_value in defaults.items():
        if key in override:
            value = override[key]
            here = f"{path}.{key}" if path else key
            if isinstance(default_value, dict):
                if value is None:
                    value = {}
                if not isinstance(value, dict):
                    raise ConfigError(f"{here}: expected a mapping")
                out[key] = _merge(default_value, value, here)
            else:
                out[key] = value
        else:
            out[key] = _deep_copy(default_value)
    unknown = set(override) - set(defaults)
    if unknown:
        where = path or "top level"
        raise ConfigError(f"unknown key(s) {sorted(unknown)} at {where}")
    return out


@dataclass
class FleetConfig:
    """Materialized configuration plus builders for the component configs."""

    raw: dict = field(default_factory=default_config_dict)

    def __post_init__(self):
        r = self.raw
        if r["clock"] not in ("virtual", "wall"):
            raise ConfigError(f"clock: expected virtual|wall, got {r['clock']!r}")
        if int(r["drones"]["count"]) < 1:
            raise ConfigError("drones.count must be >= 1")
        if r["localization"]["mode"] not in ("mle", "map"):
            raise ConfigError(f"localization.mode: expected mle|map, got {r['localization']['mode']!r}")
        for side in ("wired", "wireless"):
            jitter = r["links"][side]["jitter"]
            if jitter not in ("fixed", "shifted-lognormal"):
                raise ConfigError(f"links.{side}.jitter: expected fixed|shifted-lognormal")
        # construct everything once so bad numbers fail at load, not mid-run
        self.plant_params()
        self.video_config()
        self.control_config()
        self.localization_config()
        self.safety_config()
        self.geofence()
        self.link_profiles(horizon=float(r["duration_s"]))
        self.mission_plan()

    # -- scalar accessors ---------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def clock(self) -> str:
        return self.raw["clock"]

    @property
    def duration_s(self) -> float:
        return float(self.raw["duration_s"])

    @property
    def n_drones(self) -> int:
        return int(self.raw["drones"]["count"])

    @property
    def mode(self) -> str:
        return self.raw["localization"]["mode"]

    # -- component builders ----------------------------------------------------

    def plant_params(self) -> PlantParams:
        return PlantParams(**{k: float(v) for k, v in self.raw["drones"]["plant"].items()})

    def video_config(self) -> VideoConfig:
        v = self.raw["video"]
        return VideoConfig(fps=float(v["fps"]), frame_bytes=int(v["frame_bytes"]), mtu=int(v["mtu"]))

    def start_pose(self, i: int) -> Pose4:
        dx = float(self.raw["drones"]["start_spacing_m"])
        base = self.raw["mission"]["base"]
        return Pose4(float(base[0]) + i * dx, float(base[1]), 0.0, float(base[3]))

    def link_profiles(self, horizon: float) -> tuple[LinkProfile, LinkProfile, float]:
        """(wired, wireless, forward_latency_ms); outages materialized to horizon."""
        links = self.raw["links"]

        def build(side: str, extra_outages=()) -> LinkProfile:
            s = links[side]
            cap = s.get("bandwidth_cap_mbps")
            return LinkProfile(
                delay_min_ms=float(s["delay_min_ms"]),
                delay_mean_ms=float(s["delay_mean_ms"]),
                delay_max_ms=float(s["delay_max_ms"]),
                jitter_shape=s["jitter"],
                loss_prob=float(s["loss"]),
                outages=tuple(extra_outages),
                bandwidth_cap_mbps=None if cap is None else float(cap),
            )

        w = links["wireless"]
        outages = [tuple(map(float, o)) for o in (w["outages"] or [])]
        if w["outage"]:
            o = w["outage"]
            known = {"start_s", "period_s", "duration_s"}
            unknown = set(o) - known
            if unknown:
                raise ConfigError(f"unknown key(s) {sorted(unknown)} at links.wireless.outage")
            outages += list(periodic_outages(
                float(o.get("start_s", 5.0)), float(o["period_s"]), float(o["duration_s"]), horizon
            ))
        outages.sort()
        return build("wired"), build("wireless", outages), float(links["forward_latency_ms"])

    def control_config(self) -> ControlConfig:
        c = self.raw["controller"]
        return ControlConfig(
            gains=GainSet(kp=tuple(map(float, c["kp"])), kd=tuple(map(float, c["kd"]))),
            coeffs=FilterCoeffs(float(c["alpha"]), float(c["beta"])),
            limits=RateLimits(float(c["v_max_xy"]), float(c["v_max_z"]), float(c["w_max"])),
            rate_hz=float(c["rate_hz"]),
            filter_proportional=bool(c["filter_proportional"]),
            prop_coeffs=FilterCoeffs(float(c["prop_alpha"]), float(c["prop_beta"])),
        )

    def localization_config(self) -> LocalizationConfig:
        loc = self.raw["localization"]
        return LocalizationConfig(
            mode=loc["mode"],
            noise=OracleNoise(
                sigma_pos=float(loc["sigma_pos"]),
                sigma_yaw=float(loc["sigma_yaw"]),
                p_fail=float(loc["p_fail"]),
                proc_latency_ms=float(loc["proc_latency_ms"]),
            ),
            rate_cap_hz=float(loc["rate_cap_hz"]),
            map_params=MapEstimatorParams(**{k: float(v) for k, v in loc["map"].items()}),
        )

    def safety_config(self) -> SafetyConfig:
        return SafetyConfig(**{k: float(v) for k, v in self.raw["safety"].items()})

    def geofence(self) -> Geofence:
        g = self.raw["geofence"]
        return Geofence(tuple(map(float, g["min"])), tuple(map(float, g["max"])))

    def mission_plan(self) -> MissionPlan:
        m = self.raw["mission"]
        base = m["base"]
        plan = ntu_mission_plan(
            self.n_drones,
            letters=tuple(str(x).upper() for x in m["letters"]),
            base=Pose4(*map(float, base)),
            width=float(m["width"]),
            height=float(m["height"]),
            spacing=float(m["spacing"]),
            lateral_offset=float(m["lateral_offset"]),
            arrival_radius=float(m["arrival_radius"]),
            dwell=float(m["dwell"]),
        )
        plan.check_geofence(self.geofence())
        return plan

    @property
    def experiment(self) -> dict:
        return self.raw["experiment"]

    # -- serialization --------------------------------------------------------------

    def with_overrides(self, **scalars) -> "FleetConfig":
        raw = _deep_copy(self.raw)
        for key, value in scalars.items():
            if value is None:
                continue
            if key not in raw or isinstance(raw[key], dict):
                raise ConfigError(f"cannot override {key!r}")
            raw[key] = value
        return FleetConfig(raw)

    def effective_yaml(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True, default_flow_style=False)


def load_config(path: str | Path | None = None, text: str | None = None) -> FleetConfig:
    """Parse and validate a config document; missing keys take defaults."""
    if text is None:
        if path is None:
            return FleetConfig()
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        text = p.read_text()
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError("config document must be a mapping")
    merged = _merge(DEFAULTS, data, "")
    try:
        return FleetConfig(merged)
    except (ValueError, TypeError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from e
