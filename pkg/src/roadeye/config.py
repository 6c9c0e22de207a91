"""Pipeline configuration: one JSON file, one defaults tree, strict keys.

DEFAULTS below is the single reference for every key and its default value;
config.sample.json in the repository root mirrors it (enforced by a test).
Unknown keys are rejected with their full dotted path.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass

from .detect import ClusterParams, DetectorNoise
from .geoloc import GeodeticPos
from .geometry import ObjectClass, RigidTransform, rotation_about_z
from .onboard import PixelMap, build_pixel_map
from .preproc import GeofenceBounds
from .scene import AgentSpec, ScenarioConfig
from .track import TrackerConfig


class ConfigError(ValueError):
    """Invalid configuration; the message carries the dotted key path."""


# The default scenario: three vehicles on separate lanes plus one crossing
# pedestrian, 10 s at 10 Hz. Reference points span the surveillance square
# corners at +-51.2 m around the default sensor location (40 N, 105 W).
DEFAULTS = {
    "seed": 0,
    "scene": {
        "duration": 10.0,
        "tick": 0.1,
        "mount_height": 4.74,
        "sensor_pitch_deg": 0.0,
        "sensor_yaw_deg": 0.0,
        "points_per_agent": 400,
        "ground_point_density": 0.2,
        "agents": [
            {"class": "vehicle", "route": [[-45.0, -3.5], [45.0, -3.5]], "speed": 8.0},
            {"class": "vehicle", "route": [[45.0, 3.5], [-45.0, 3.5]], "speed": 7.0},
            {"class": "vehicle", "route": [[-3.5, -45.0], [-3.5, 45.0]], "speed": 6.0},
            {"class": "pedestrian", "route": [[10.0, -8.0], [10.0, 8.0]], "speed": 1.2},
        ],
    },
    "geofence": {
        "x_min": -51.2, "x_max": 51.2,
        "y_min": -51.2, "y_max": 51.2,
        "z_min": -5.0, "z_max": 0.0,
    },
    "detector": {
        "backend": "oracle",
        "oracle": {
            "sigma_pos": 0.0,
            "sigma_dim": 0.0,
            "sigma_theta": 0.0,
            "p_miss": 0.0,
            "fp_rate": 0.0,
        },
        "cluster": {
            "voxel": 0.3,
            "min_points": 10,
        },
    },
    "tracker": {
        "d_o": 2.0,
        "gate_assoc": 3.0,
        "n_init": 3,
        "max_age": 5,
        "process_noise": 0.1,
        "measurement_noise": 0.1,
        "lift": "first",
    },
    "geoloc": {
        "gcp_file": None,
        "sensor_lat": 40.0,
        "sensor_lon": -105.0,
        "sensor_alt": 1600.0,
    },
    "relay": {
        "bind": "127.0.0.1:7700",
        "max_subscribers": 16,
        "queue_frames": 64,
    },
    "onboard": {
        "connect": "127.0.0.1:7700",
        "ref_a": {"lat": 39.99954006257453, "lon": -105.00060040566784, "u": 0.0, "v": 800.0},
        "ref_b": {"lat": 40.00045993742547, "lon": -104.99939959433216, "u": 800.0, "v": 0.0},
        "viewport": [800.0, 800.0],
        "ego": {
            "lat": 39.99975,
            "lon": -105.0,
            "heading": 0.0,
            "speed": 0.0,
            "rate_hz": 8.0,
            "noise_std": 0.0,
        },
    },
    "eval": {
        "dist_threshold": 2.0,
    },
}

# Keys whose values are free-form (not validated against the default shape).
_OPEN_KEYS = {"scene.agents"}


def _check_keys(user: dict, defaults: dict, path: str = ""):
    for key, value in user.items():
        dotted = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {dotted}")
        if dotted in _OPEN_KEYS:
            continue
        d = defaults[key]
        if isinstance(d, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{dotted}: expected an object")
            _check_keys(value, d, dotted)
        elif isinstance(d, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{dotted}: expected a boolean")
        elif isinstance(d, (int, float)) and d is not None:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{dotted}: expected a number")
        elif isinstance(d, str):
            if not isinstance(value, str):
                raise ConfigError(f"{dotted}: expected a string")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class PipelineConfig:
    """Validated, merged configuration with typed accessors per module."""

    data: dict

    def __getitem__(self, dotted: str):
        node = self.data
        for part in dotted.split("."):
            node = node[part]
        return node

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def scenario(self) -> ScenarioConfig:
        s = self.data["scene"]
        agents = []
        for k, a in enumerate(s["agents"]):
            try:
                cls = ObjectClass(a["class"])
                agents.append(
                    AgentSpec(
                        cls=cls,
                        route=a["route"],
                        speed=float(a["speed"]),
                        dims=tuple(a["dims"]) if a.get("dims") else None,
                    )
                )
            except (KeyError, ValueError) as e:
                raise ConfigError(f"scene.agents[{k}]: {e}") from None
        pitch = math.radians(float(s["sensor_pitch_deg"]))
        yaw = math.radians(float(s["sensor_yaw_deg"]))
        cp, sp = math.cos(pitch), math.sin(pitch)
        pitch_rot = [[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]]
        rot = rotation_about_z(yaw) @ pitch_rot
        pose = RigidTransform.from_rotation_translation(
            rot, rot @ [0.0, 0.0, -float(s["mount_height"])]
        )
        return ScenarioConfig(
            agents=agents,
            duration=float(s["duration"]),
            tick=float(s["tick"]),
            sensor_pose=pose,
            mount_height=float(s["mount_height"]),
            points_per_agent=int(s["points_per_agent"]),
            ground_point_density=float(s["ground_point_density"]),
            rng_seed=self.seed,
        )

    def geofence_bounds(self) -> GeofenceBounds:
        g = self.data["geofence"]
        return GeofenceBounds(**{k: float(v) for k, v in g.items()})

    def detector_noise(self) -> DetectorNoise:
        o = self.data["detector"]["oracle"]
        return DetectorNoise(**{k: float(v) for k, v in o.items()})

    def cluster_params(self) -> ClusterParams:
        c = self.data["detector"]["cluster"]
        return ClusterParams(
            voxel=float(c["voxel"]),
            min_points=int(c["min_points"]),
            ground_z=-float(self.data["scene"]["mount_height"]),
        )

    def tracker_config(self) -> TrackerConfig:
        t = self.data["tracker"]
        return TrackerConfig(
            d_o=float(t["d_o"]),
            gate_assoc=float(t["gate_assoc"]),
            n_init=int(t["n_init"]),
            max_age=int(t["max_age"]),
            process_noise=float(t["process_noise"]),
            measurement_noise=float(t["measurement_noise"]),
            lift=str(t["lift"]),
        )

    def sensor_geodetic(self) -> GeodeticPos:
        g = self.data["geoloc"]
        return GeodeticPos(lat=float(g["sensor_lat"]), lon=float(g["sensor_lon"]),
                           alt=float(g["sensor_alt"]))

    def pixel_map(self) -> PixelMap:
        o = self.data["onboard"]
        a, b = o["ref_a"], o["ref_b"]
        return build_pixel_map(
            ref_a_gps=GeodeticPos(lat=float(a["lat"]), lon=float(a["lon"]), alt=0.0),
            ref_a_px=(float(a["u"]), float(a["v"])),
            ref_b_gps=GeodeticPos(lat=float(b["lat"]), lon=float(b["lon"]), alt=0.0),
            ref_b_px=(float(b["u"]), float(b["v"])),
            viewport=tuple(float(v) for v in o["viewport"]),
        )


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Merge defaults <- file <- overrides, rejecting unknown keys."""
    data = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as f:
                user = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        _check_keys(user, DEFAULTS)
        data = _merge(data, user)
    if overrides:
        _check_keys(overrides, DEFAULTS)
        data = _merge(data, overrides)
    return PipelineConfig(data=data)
