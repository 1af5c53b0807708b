"""Flat ``dotted.key = value`` pipeline configuration.

Example::

    # 2N = 6 transformation channels
    group.n_rotations = 3
    group.reflection = true
    voxel.size = 0.05, 0.05, 0.1
    precision = verify
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import AugParams, LidarModel
from .group import TransformGroup, build_group
from .sparse_conv import STRIDED, SUBMANIFOLD
from .tivoxel import VsaConfig


class ConfigError(ValueError):
    """Unknown key, unparsable value or inconsistent settings."""


@dataclass(frozen=True)
class PipelineConfig:
    n_rotations: int = 3
    beta: float | None = None  # None -> 2*pi/N
    reflection: bool = True
    voxel_size: tuple[float, float, float] = (0.05, 0.05, 0.1)
    point_range: tuple[float, ...] = (-12.8, -12.8, -3.0, 12.8, 12.8, 1.0)
    backbone_widths: tuple[int, ...] = (16, 32, 32, 64)
    backbone_modes: tuple[str, ...] = (SUBMANIFOLD, STRIDED, SUBMANIFOLD, STRIDED)
    backbone_kernel: int = 3
    backbone_stride: int = 2
    backbone_activation: str = "relu"
    backbone_weights: str | None = None
    vsa: VsaConfig = field(default_factory=VsaConfig)
    attention_channels: int = 32
    aug: AugParams = field(default_factory=AugParams)
    lidar: LidarModel = field(default_factory=LidarModel)
    precision: str = "verify"
    seed: int = 0
    max_feature_values: int = 1 << 20
    tol_backbone: float = 1e-6
    tol_bev_lattice: float = 1e-9
    tol_bev_interp: float = 0.5
    tol_tivoxel: float = 1e-6

    def __post_init__(self):
        if self.precision not in ("verify", "fast"):
            raise ConfigError(f"precision must be verify or fast, got {self.precision!r}")
        if len(self.backbone_widths) != len(self.backbone_modes):
            raise ConfigError("backbone.widths and backbone.modes differ in length")
        for m in self.backbone_modes:
            if m not in (SUBMANIFOLD, STRIDED):
                raise ConfigError(f"unknown backbone mode {m!r}")
        if len(self.voxel_size) != 3 or min(self.voxel_size) <= 0:
            raise ConfigError("voxel.size needs three positive values")
        r = self.point_range
        if len(r) != 6 or not all(r[i] < r[i + 3] for i in range(3)):
            raise ConfigError("voxel.range needs xmin, ymin, zmin, xmax, ymax, zmax with min < max")
        if self.n_rotations < 1 or (self.beta is not None and self.beta <= 0):
            raise ConfigError("group.n_rotations and group.beta must be positive")
        if self.backbone_kernel % 2 == 0 or self.backbone_kernel < 1:
            raise ConfigError("backbone.kernel must be odd")
        if self.vsa.num_grid_points * self.attention_channels > self.max_feature_values:
            raise ConfigError(
                f"J*C = {self.vsa.num_grid_points * self.attention_channels} exceeds memory.max_feature_values"
            )

    @property
    def dtype(self):
        return np.float64 if self.precision == "verify" else np.float32

    def group(self) -> TransformGroup:
        return build_group(self.n_rotations, self.beta, self.reflection)

    def with_overrides(self, **kw) -> "PipelineConfig":
        return replace(self, **kw)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in to_items(self))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def is_range_symmetric(self) -> bool:
        r = self.point_range
        return r[0] == -r[3] and r[1] == -r[4] and r[0] == r[1] and self.voxel_size[0] == self.voxel_size[1]


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.replace(",", " ").split())


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.replace(",", " ").split())


def _words(v: str) -> tuple[str, ...]:
    return tuple(v.replace(",", " ").split())


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _optional_float(v: str):
    return None if v.strip().lower() in ("", "none", "auto") else float(v)


def _optional_str(v: str):
    return None if v.strip().lower() in ("", "none") else v.strip()


# dotted key -> (section, attribute, parser); section None means top level
_KEYS = {
    "group.n_rotations": (None, "n_rotations", int),
    "group.beta": (None, "beta", _optional_float),
    "group.reflection": (None, "reflection", _bool),
    "voxel.size": (None, "voxel_size", _floats),
    "voxel.range": (None, "point_range", _floats),
    "backbone.widths": (None, "backbone_widths", _ints),
    "backbone.modes": (None, "backbone_modes", _words),
    "backbone.kernel": (None, "backbone_kernel", int),
    "backbone.stride": (None, "backbone_stride", int),
    "backbone.activation": (None, "backbone_activation", str),
    "backbone.weights": (None, "backbone_weights", _optional_str),
    "vsa.radii": ("vsa", "radii", _floats),
    "vsa.max_neighbors": ("vsa", "max_neighbors", _ints),
    "vsa.mlp_widths": ("vsa", "mlp_widths", _ints),
    "vsa.grid_per_axis": ("vsa", "grid_per_axis", int),
    "attention.channels": (None, "attention_channels", int),
    "aug.distance_offset_range": ("aug", "distance_offset_range", _floats),
    "aug.occlusion_probability": ("aug", "occlusion_probability", float),
    "aug.occlusion_sector_range": ("aug", "occlusion_sector_range", _floats),
    "aug.max_insertions": ("aug", "max_insertions", int),
    "aug.seed": ("aug", "seed", int),
    "aug.rotate_objects": ("aug", "rotate_objects", _bool),
    "lidar.azimuth_resolution": ("lidar", "azimuth_resolution", float),
    "lidar.elevation_resolution": ("lidar", "elevation_resolution", float),
    "precision": (None, "precision", str),
    "seed": (None, "seed", int),
    "memory.max_feature_values": (None, "max_feature_values", int),
    "check.tol_backbone": (None, "tol_backbone", float),
    "check.tol_bev_lattice": (None, "tol_bev_lattice", float),
    "check.tol_bev_interp": (None, "tol_bev_interp", float),
    "check.tol_tivoxel": (None, "tol_tivoxel", float),
}


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Parse ``key = value`` lines on top of ``base`` (defaults if omitted)."""
    top, sections = {}, {"vsa": {}, "aug": {}, "lidar": {}}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        section, attr, parse = _KEYS[key]
        try:
            parsed = parse(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {key}: {exc}") from None
        (top if section is None else sections[section])[attr] = parsed
    return build_config(top, sections, base)


def build_config(top, sections, base=None) -> PipelineConfig:
    base = base or PipelineConfig()
    try:
        kw = dict(top)
        for name in ("vsa", "aug", "lidar"):
            if sections.get(name):
                kw[name] = replace(getattr(base, name), **sections[name])
        return replace(base, **kw)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> PipelineConfig:
    return parse_config(Path(path).read_text())


def to_items(cfg: PipelineConfig):
    """(dotted key, formatted value) pairs in a fixed order."""

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, tuple):
            return ", ".join(fmt(x) for x in v)
        if isinstance(v, float):
            return repr(v)
        if v is None:
            return "none"
        return str(v)

    for key, (section, attr, _) in _KEYS.items():
        obj = cfg if section is None else getattr(cfg, section)
        yield key, fmt(getattr(obj, attr))


def effective_beta(cfg: PipelineConfig) -> float:
    return cfg.beta if cfg.beta is not None else 2 * math.pi / cfg.n_rotations

