"""Synthetic LiDAR-like scenes and the bundled mini scene."""
from __future__ import annotations

import math
from importlib import resources
from pathlib import Path

import numpy as np

from .structures import Box3D, PointCloud, ProposalSet

SENSOR_HEIGHT = 1.73
CAR_SIZE = (3.9, 1.6, 1.56)


def surface_points(box: Box3D, n: int, rng: np.random.Generator, inset: float = 0.02) -> PointCloud:
    """``n`` points spread over the faces of ``box`` (slightly inset so they stay inside)."""
    l, w, h = box.size - 2 * inset
    areas = np.array([w * h, w * h, l * h, l * h, l * w])
    face = rng.choice(5, size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=(n, 3)) * np.array([l, w, h])
    u[face == 0, 0] = l / 2
    u[face == 1, 0] = -l / 2
    u[face == 2, 1] = w / 2
    u[face == 3, 1] = -w / 2
    u[face == 4, 2] = h / 2
    return PointCloud(box.to_world(u), rng.uniform(0, 1, size=(n, 1)))


def lidar_ground(n: int, rng: np.random.Generator, max_radius: float = 12.0) -> PointCloud:
    """Ground returns on concentric scan rings around the sensor."""
    beams = np.radians(np.linspace(-24.8, -8.5, 24))
    radii = SENSOR_HEIGHT / np.tan(-beams)
    radii = radii[radii < max_radius]
    ring = rng.integers(0, len(radii), size=n)
    az = rng.uniform(-math.pi, math.pi, size=n)
    r = radii[ring] + rng.normal(0, 0.02, size=n)
    z = -SENSOR_HEIGHT + rng.normal(0, 0.01, size=n)
    return PointCloud(np.stack([r * np.cos(az), r * np.sin(az), z], axis=1), rng.uniform(0, 0.3, size=(n, 1)))


def synthetic_scene(n_points: int = 20000, n_boxes: int = 3, seed: int = 0, max_radius: float = 12.0):
    """Ground rings plus ``n_boxes`` car-sized objects, all within ``max_radius`` of the sensor.

    Returns ``(PointCloud, ProposalSet)``; exactly ``n_points`` points.
    """
    rng = np.random.default_rng(seed)
    lo = min(4.0, 0.35 * max_radius)
    hi = max(lo + 0.5, max_radius - 3.0)
    boxes = []
    for _ in range(1000 * max(n_boxes, 1)):
        if len(boxes) == n_boxes:
            break
        r = rng.uniform(lo, hi)
        az = rng.uniform(-math.pi, math.pi)
        yaw = rng.uniform(-math.pi, math.pi)
        box = Box3D((r * math.cos(az), r * math.sin(az), -SENSOR_HEIGHT + CAR_SIZE[2] / 2), CAR_SIZE, yaw)
        if all(np.hypot(*(box.center[:2] - b.center[:2])) > 5.0 for b in boxes):
            boxes.append(box)
    else:
        if len(boxes) < n_boxes:
            raise ValueError(f"cannot place {n_boxes} separated boxes within radius {max_radius}")
    n_obj = n_points // 4
    per_box = [n_obj // max(n_boxes, 1)] * n_boxes
    objs = [surface_points(b, k, rng) for b, k in zip(boxes, per_box)]
    ground = lidar_ground(n_points - sum(per_box), rng, max_radius)
    cloud = PointCloud.concat([ground, *objs]) if objs else ground
    return cloud, ProposalSet(tuple(boxes))


def random_cloud(n: int, rng: np.random.Generator, radius: float = 6.0, z=(-2.0, 0.5), n_features: int = 1) -> PointCloud:
    """Uniform points in a vertical cylinder."""
    r = radius * np.sqrt(rng.uniform(0, 1, n))
    a = rng.uniform(-math.pi, math.pi, n)
    xyz = np.stack([r * np.cos(a), r * np.sin(a), rng.uniform(*z, n)], axis=1)
    return PointCloud(xyz, rng.uniform(0, 1, (n, n_features)))


def mini_scene_paths() -> tuple[Path, Path]:
    """Paths of the bundled 20k-point scan and its 3 proposal boxes."""
    root = resources.files("teqdet") / "resources"
    return Path(str(root / "mini_scene.bin")), Path(str(root / "mini_boxes.txt"))
