"""Pipeline configuration: INI sections, typed defaults and overrides."""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field, fields
from typing import Iterable, Optional, Tuple

from .controlsim import ContactModel, ControllerParams, ForceReading
from .pathplan import ThresholdParams
from .scene import SceneSpec, Wrinkle


class ConfigError(ValueError):
    """Bad configuration value; the message names the offending key."""


@dataclass
class SegmentationConfig:
    ransac_threshold: float = 0.02
    z_angle_tol: float = 15.0
    ransac_iterations: int = 1000
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-6
    cluster_tol: float = 0.02
    min_size: int = 50


@dataclass
class DescriptorConfig:
    normal_radius: float = 0.02
    wild_radius: float = 0.03
    rsd_radius: float = 0.03
    rsd_max_radius: float = 0.2
    resolution: float = 0.002
    timing_repeats: int = 3


@dataclass
class PathplanConfig:
    lower_threshold: float = 0.4
    upper_threshold: float = 0.95
    dilate_size: int = 5
    erode_size: int = 11
    stride: int = 5
    min_range: float = 0.02
    rsd_min_range: float = 0.1
    break_cycles: bool = True


@dataclass
class ControlConfig:
    tangential_step: float = 0.002
    force_gain: float = 2.5e-6
    desired_fz: float = -200.0
    contact_force: Tuple[float, float, float] = (0.0, 0.0, -200.0)
    contact_torque: Tuple[float, float, float] = (0.0, 25.0, 0.0)
    stiffness: float = 2.0e5
    waypoint_radius: float = 0.004
    descent_step: float = 0.0005
    dt: float = 0.01
    max_steps: int = 20_000
    approach_height: float = 0.05
    iron_halfwidth: float = 0.04
    flatten: float = 0.9
    max_iterations: int = 5


@dataclass
class SceneConfig:
    board_extent: Tuple[float, float] = (0.60, 0.40)
    board_height: float = 0.80
    board_color: Tuple[float, float, float] = (0.30, 0.45, 0.70)
    garment_extent: Tuple[float, float] = (0.30, 0.24)
    garment_offset: Tuple[float, float] = (0.02, 0.0)
    garment_color: Tuple[float, float, float] = (0.90, 0.50, 0.10)
    garment_thickness: float = 0.003
    density: float = 150_000.0
    noise: float = 0.0003
    color_noise: float = 0.01
    cell: float = 0.001
    wrinkles: int = 2
    wrinkle_list: Tuple[Tuple[float, ...], ...] = ()


@dataclass
class PipelineConfig:
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    descriptor: DescriptorConfig = field(default_factory=DescriptorConfig)
    pathplan: PathplanConfig = field(default_factory=PathplanConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    seed: int = 1

    # -- derived parameter objects ------------------------------------------
    def thresholds(self) -> ThresholdParams:
        return ThresholdParams(self.pathplan.lower_threshold, self.pathplan.upper_threshold)

    def controller(self) -> ControllerParams:
        c = self.control
        return ControllerParams(
            tangential_step=c.tangential_step,
            force_gain=c.force_gain,
            desired_fz=c.desired_fz,
            contact_threshold=ForceReading(tuple(c.contact_force), tuple(c.contact_torque)),
            waypoint_radius=c.waypoint_radius,
            descent_step=c.descent_step,
            dt=c.dt,
            max_steps=c.max_steps,
        )

    def contact_model(self) -> ContactModel:
        return ContactModel(stiffness=self.control.stiffness, board_height=self.scene.board_height)

    def scene_base(self) -> SceneSpec:
        s = self.scene
        return SceneSpec(
            board_extent=tuple(s.board_extent),
            board_height=s.board_height,
            board_color=tuple(s.board_color),
            garment_extent=tuple(s.garment_extent),
            garment_offset=tuple(s.garment_offset),
            garment_color=tuple(s.garment_color),
            garment_thickness=s.garment_thickness,
            density=s.density,
            noise=s.noise,
            color_noise=s.color_noise,
            cell=s.cell,
            rng_seed=self.seed,
        )

    def scene_spec(self) -> SceneSpec:
        """Scene for this config: explicit wrinkles if listed, else random ones."""
        from .scene import suite_spec

        base = self.scene_base()
        if self.scene.wrinkle_list:
            wr = tuple(
                Wrinkle(center=(v[0], v[1]), direction=(v[2], v[3]), length=v[4], amplitude=v[5], width=v[6])
                for v in self.scene.wrinkle_list
            )
            return dataclasses.replace(base, wrinkles=wr)
        if self.scene.wrinkles == 0:
            return base
        return suite_spec(self.scene.wrinkles, self.seed, base)

    # -- validation -----------------------------------------------------------
    def validate(self) -> "PipelineConfig":
        s, d, p, c, sc = self.segmentation, self.descriptor, self.pathplan, self.control, self.scene

        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"{key}: {msg}")

        need(s.ransac_threshold > 0, "segmentation.ransac_threshold", "must be > 0")
        need(0 < s.z_angle_tol < 90, "segmentation.z_angle_tol", "must be in (0, 90)")
        need(s.ransac_iterations > 0, "segmentation.ransac_iterations", "must be > 0")
        need(s.kmeans_max_iters > 0, "segmentation.kmeans_max_iters", "must be > 0")
        need(s.kmeans_tol >= 0, "segmentation.kmeans_tol", "must be >= 0")
        need(s.cluster_tol > 0, "segmentation.cluster_tol", "must be > 0")
        need(s.min_size >= 1, "segmentation.min_size", "must be >= 1")
        need(d.normal_radius > 0, "descriptor.normal_radius", "must be > 0")
        need(d.wild_radius > 0, "descriptor.wild_radius", "must be > 0")
        need(d.rsd_radius > 0, "descriptor.rsd_radius", "must be > 0")
        need(d.rsd_max_radius > 0, "descriptor.rsd_max_radius", "must be > 0")
        need(d.resolution > 0, "descriptor.resolution", "must be > 0")
        need(d.timing_repeats >= 1, "descriptor.timing_repeats", "must be >= 1")
        need(0 <= p.lower_threshold < p.upper_threshold <= 1, "pathplan.lower_threshold",
             "need 0 <= lower_threshold < upper_threshold <= 1")
        for key in ("dilate_size", "erode_size"):
            v = getattr(p, key)
            need(v > 0 and v % 2 == 1, f"pathplan.{key}", "must be a positive odd integer")
        need(p.dilate_size <= p.erode_size, "pathplan.dilate_size", "must not exceed erode_size")
        need(p.stride >= 1, "pathplan.stride", "must be >= 1")
        need(p.min_range >= 0, "pathplan.min_range", "must be >= 0")
        need(p.rsd_min_range >= 0, "pathplan.rsd_min_range", "must be >= 0")
        need(c.tangential_step > 0, "control.tangential_step", "must be > 0")
        need(c.force_gain > 0, "control.force_gain", "must be > 0")
        need(c.stiffness > 0, "control.stiffness", "must be > 0")
        need(c.waypoint_radius > 0, "control.waypoint_radius", "must be > 0")
        need(c.descent_step > 0, "control.descent_step", "must be > 0")
        need(c.dt > 0, "control.dt", "must be > 0")
        need(c.max_steps > 0, "control.max_steps", "must be > 0")
        need(c.approach_height > 0, "control.approach_height", "must be > 0")
        need(c.iron_halfwidth > 0, "control.iron_halfwidth", "must be > 0")
        need(0 < c.flatten <= 1, "control.flatten", "must be in (0, 1]")
        need(c.max_iterations >= 0, "control.max_iterations", "must be >= 0")
        need(len(c.contact_force) == 3, "control.contact_force", "needs 3 components")
        need(len(c.contact_torque) == 3, "control.contact_torque", "needs 3 components")
        need(sc.density > 0, "scene.density", "must be > 0")
        need(sc.noise >= 0, "scene.noise", "must be >= 0")
        need(sc.cell > 0, "scene.cell", "must be > 0")
        need(sc.wrinkles >= 0, "scene.wrinkles", "must be >= 0")
        for i, w in enumerate(sc.wrinkle_list):
            need(len(w) == 7, f"scene.wrinkle_{i + 1}", "needs 7 values: cx cy dx dy length amplitude width")
        for key in ("board_color", "garment_color"):
            v = getattr(sc, key)
            need(len(v) == 3 and all(0 <= x <= 1 for x in v), f"scene.{key}", "needs 3 values in [0, 1]")
        return self


SECTIONS = ("segmentation", "descriptor", "pathplan", "control", "scene")


def _parse_value(current, text: str, key: str):
    text = text.strip()
    try:
        if isinstance(current, bool):
            word = text.lower()
            if word not in ("1", "true", "yes", "on", "0", "false", "no", "off"):
                raise ValueError(word)
            return word in ("1", "true", "yes", "on")
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, tuple):
            return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r}") from None
    return text


def set_value(cfg: PipelineConfig, dotted: str, text: str) -> None:
    """Assign ``section.key = text`` with the type of the current value."""
    if dotted == "seed":
        cfg.seed = _parse_value(cfg.seed, text, dotted)
        return
    if "." not in dotted:
        raise ConfigError(f"{dotted}: expected section.key")
    section, key = dotted.split(".", 1)
    if section not in SECTIONS:
        raise ConfigError(f"{dotted}: unknown section {section!r}")
    obj = getattr(cfg, section)
    if section == "scene" and key.startswith("wrinkle_"):
        vals = _parse_value((), text, dotted)
        obj.wrinkle_list = tuple(obj.wrinkle_list) + (vals,)
        return
    names = {f.name for f in fields(obj)}
    if key not in names:
        raise ConfigError(f"{dotted}: unknown key")
    setattr(obj, key, _parse_value(getattr(obj, key), text, dotted))


def load_config(path: Optional[str | os.PathLike] = None, overrides: Iterable[str] = ()) -> PipelineConfig:
    """Defaults, then the INI file (if any), then ``key=value`` overrides."""
    cfg = PipelineConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        if not parser.read(path, encoding="utf-8"):
            raise ConfigError(f"config file {path} not found")
        for section in parser.sections():
            if section == "run":
                for key, text in parser.items(section):
                    if key == "seed":
                        set_value(cfg, "seed", text)
                    else:
                        raise ConfigError(f"run.{key}: unknown key")
                continue
            if section not in SECTIONS:
                raise ConfigError(f"{section}: unknown section")
            for key, text in parser.items(section):
                set_value(cfg, f"{section}.{key}", text)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"{item}: expected key=value")
        key, text = item.split("=", 1)
        set_value(cfg, key.strip(), text)
    return cfg.validate()


def dump_config(cfg: PipelineConfig) -> str:
    """INI text reproducing ``cfg``."""
    lines = ["[run]", f"seed = {cfg.seed}", ""]
    for section in SECTIONS:
        obj = getattr(cfg, section)
        lines.append(f"[{section}]")
        for f in fields(obj):
            v = getattr(obj, f.name)
            if f.name == "wrinkle_list":
                for i, w in enumerate(v, start=1):
                    lines.append(f"wrinkle_{i} = " + " ".join(repr(float(x)) for x in w))
                continue
            if isinstance(v, tuple):
                v = " ".join(repr(float(x)) for x in v)
            lines.append(f"{f.name} = {v}")
        lines.append("")
    return "\n".join(lines)
