"""Pipeline configuration: dataclasses plus YAML loading.

The file layout mirrors the per-module key groups (``ground.*``,
``cluster.*``, ``fusion.*``, camera and sensor blocks); every field has a
default so a missing file or empty mapping yields a runnable pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .clustering import ScanPattern
from .drivable import ClassRule, default_rules
from .fusion import CameraModel, ClassPrior, camera_mount, default_priors
from .ground import GroundConfig
from .transforms import RigidTransform


@dataclass
class RoiConfig:
    margin: float = 2.0
    sidewalk_margin: float = 3.0


@dataclass
class FusionConfig:
    delta: float = 0.5
    gate: float = 2.0
    priors: dict = field(default_factory=default_priors)

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("fusion delta must lie in [0, 1]")


@dataclass
class SafetyConfig:
    resolution: float = 0.1
    x_max: float = 60.0
    rules: dict = field(default_factory=default_rules)


@dataclass
class EgoConfig:
    width: float = 2.0
    decel: float = 2.5


@dataclass
class EvalConfig:
    match_dist: float = 1.0


@dataclass
class PipelineConfig:
    ground: GroundConfig = field(default_factory=GroundConfig)
    cluster: ScanPattern = field(default_factory=lambda: ScanPattern(
        d_phi=float(np.deg2rad(0.1)), d_alpha=float(np.deg2rad(0.1)),
        voxel=0.1, w_min=0.3, h_min=0.5))
    fusion: FusionConfig = field(default_factory=FusionConfig)
    safety: SafetyConfig = field(default_factory=SafetyConfig)
    ego: EgoConfig = field(default_factory=EgoConfig)
    roi: RoiConfig = field(default_factory=RoiConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    cameras: dict = field(default_factory=dict)
    sensors: dict = field(default_factory=dict)   # name -> RigidTransform

    def sensor_extrinsic(self, name: str) -> RigidTransform:
        return self.sensors.get(name, RigidTransform.identity())


def default_config() -> PipelineConfig:
    from .synth import default_cameras
    return PipelineConfig(cameras=default_cameras())


def _camera_from_dict(d: dict) -> CameraModel:
    mount = camera_mount(float(d.get("yaw", 0.0)),
                         tuple(d.get("position", (0.0, 0.0, 0.0))))
    return CameraModel(fx=float(d["fx"]), fy=float(d["fy"]),
                       cx=float(d["cx"]), cy=float(d["cy"]),
                       pitch=float(d.get("pitch", 0.0)),
                       cam_height=float(d["cam_height"]),
                       width=int(d.get("width", 1280)),
                       height=int(d.get("height", 960)),
                       mount=mount)


def _prior_from_dict(label: str, d: dict) -> ClassPrior:
    return ClassPrior(
        label,
        float(d["width"]), float(d.get("width_sd", 0.15)) ** 2,
        float(d["height"]), float(d.get("height_sd", 0.12)) ** 2,
        float(d.get("cam_height_sd", 0.02)) ** 2,
        float(d.get("wp_sd", 4.0)) ** 2,
        float(d.get("hp_sd", 4.0)) ** 2,
    )


def _sensor_from_dict(d: dict) -> RigidTransform:
    return RigidTransform.from_quat(
        float(d.get("qx", 0.0)), float(d.get("qy", 0.0)),
        float(d.get("qz", 0.0)), float(d.get("qw", 1.0)),
        tuple(d.get("t", (0.0, 0.0, 0.0))))


def config_from_dict(data: dict) -> PipelineConfig:
    cfg = default_config()
    data = data or {}
    if "ground" in data:
        cfg.ground = GroundConfig(**data["ground"])
    if "cluster" in data:
        cfg.cluster = ScanPattern(**data["cluster"])
    if "fusion" in data:
        fd = dict(data["fusion"])
        priors = fd.pop("priors", None)
        cfg.fusion = FusionConfig(**fd)
        if priors:
            cfg.fusion.priors = {label: _prior_from_dict(label, p)
                                 for label, p in priors.items()}
    if "safety" in data:
        sd = dict(data["safety"])
        rules = sd.pop("rules", None)
        cfg.safety = SafetyConfig(**sd)
        if rules:
            cfg.safety.rules = {label: ClassRule(label, **r)
                                for label, r in rules.items()}
            cfg.safety.rules.setdefault("UNKNOWN",
                                        default_rules()["UNKNOWN"])
    if "ego" in data:
        cfg.ego = EgoConfig(**data["ego"])
    if "roi" in data:
        cfg.roi = RoiConfig(**data["roi"])
    if "eval" in data:
        cfg.eval = EvalConfig(**data["eval"])
    if "cameras" in data:
        cfg.cameras = {name: _camera_from_dict(c)
                       for name, c in data["cameras"].items()}
    if "sensors" in data:
        cfg.sensors = {name: _sensor_from_dict(s)
                       for name, s in data["sensors"].items()}
    return cfg


def load_config(path) -> PipelineConfig:
    with open(path) as fh:
        return config_from_dict(yaml.safe_load(fh))
