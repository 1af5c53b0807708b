"""Distance-aware object augmentation.

A bank object is pushed away from the sensor along its bearing, thinned to
what a LiDAR with finite angular resolution would see at the new range,
optionally cut by an occluding azimuth sector, and pasted into a scene.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .structures import Box3D, PointCloud, ProposalSet


@dataclass(frozen=True)
class LidarModel:
    azimuth_resolution: float = math.radians(0.2)
    elevation_resolution: float = math.radians(0.4)

    def __post_init__(self):
        if not (self.azimuth_resolution > 0 and self.elevation_resolution > 0):
            raise ValueError("angular resolutions must be positive")


@dataclass(frozen=True)
class AugParams:
    distance_offset_range: tuple[float, float] = (5.0, 25.0)
    occlusion_probability: float = 0.5
    occlusion_sector_range: tuple[float, float] = (0.01, 0.05)
    max_insertions: int = 5
    seed: int = 0
    rotate_objects: bool = False

    def __post_init__(self):
        lo, hi = self.distance_offset_range
        if lo > hi or lo < 0:
            raise ValueError(f"bad distance_offset_range {self.distance_offset_range}")
        lo, hi = self.occlusion_sector_range
        if lo > hi or lo < 0:
            raise ValueError(f"bad occlusion_sector_range {self.occlusion_sector_range}")
        if not 0.0 <= self.occlusion_probability <= 1.0:
            raise ValueError("occlusion_probability must lie in [0, 1]")
        if self.max_insertions < 0:
            raise ValueError("max_insertions must be nonnegative")


def shift_object(box: Box3D, points: PointCloud, delta: float) -> tuple[Box3D, PointCloud]:
    """Translate box and points by ``delta`` along the BEV ray from the sensor to the box centre."""
    if delta < 0:
        raise ValueError("distance offset must be nonnegative")
    r = math.hypot(box.center[0], box.center[1])
    if r == 0.0:
        raise ValueError("box centre lies on the sensor axis; the shift direction is undefined")
    if delta == 0:
        return box, points
    offset = np.array([box.center[0] / r * delta, box.center[1] / r * delta, 0.0])
    return box.translated(offset), PointCloud(points.xyz + offset, points.features)


def spherical_coords(xyz: np.ndarray):
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    rng = np.sqrt(x * x + y * y + z * z)
    return rng, np.arctan2(y, x), np.arctan2(z, np.hypot(x, y))


def spherical_resample(points: PointCloud, lidar: LidarModel, return_index: bool = False):
    """Keep one point per (azimuth, elevation) bin: the one closest in angle to
    the bin centre, ties by smaller range then input order. Survivors keep
    their input order."""
    if not len(points):
        return (points, np.zeros(0, np.int64)) if return_index else points
    rng, az, el = spherical_coords(points.xyz)
    if (rng == 0).any():
        raise ValueError(f"point {int(np.argmax(rng == 0))} sits at the sensor origin")
    ia = np.floor(az / lidar.azimuth_resolution)
    ie = np.floor(el / lidar.elevation_resolution)
    dist2 = (az - (ia + 0.5) * lidar.azimuth_resolution) ** 2 + (el - (ie + 0.5) * lidar.elevation_resolution) ** 2
    order = np.lexsort((np.arange(len(points)), rng, dist2, ie, ia))
    sa, se = ia[order], ie[order]
    first = np.ones(len(order), bool)
    first[1:] = (sa[1:] != sa[:-1]) | (se[1:] != se[:-1])
    keep = np.sort(order[first])
    out = points.subset(keep)
    return (out, keep) if return_index else out


def _wrap_pi(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def simulate_occlusion(points: PointCloud, params: AugParams, rng: np.random.Generator) -> PointCloud:
    """With probability ``occlusion_probability`` drop every point inside one
    random azimuth sector.

    The sector centre is drawn uniformly over the azimuth span of the points,
    so the cut lands on the object; the width comes from
    ``occlusion_sector_range``.
    """
    if rng.random() >= params.occlusion_probability or not len(points):
        return points
    az = np.arctan2(points.xyz[:, 1], points.xyz[:, 0])
    ref = az[0]
    rel = _wrap_pi(az - ref)
    center = ref + rng.uniform(rel.min(), rel.max())
    width = rng.uniform(*params.occlusion_sector_range)
    inside = np.abs(_wrap_pi(az - center)) <= width / 2
    return points.subset(~inside)


def _rect_axes(box: Box3D):
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    return np.array([[c, s], [-s, c]])


def bev_overlap(a: Box3D, b: Box3D) -> bool:
    """True when the BEV rectangles share interior area (separating-axis test)."""
    ca, cb = a.bev_corners(), b.bev_corners()
    for axis in np.vstack([_rect_axes(a), _rect_axes(b)]):
        pa, pb = ca @ axis, cb @ axis
        if pa.max() <= pb.min() or pb.max() <= pa.min():
            return False
    return True


def _rotate_about_center(box: Box3D, points: PointCloud, angle: float):
    c, s = math.cos(angle), math.sin(angle)
    d = points.xyz[:, :2] - box.center[:2]
    xyz = points.xyz.copy()
    xyz[:, 0] = box.center[0] + c * d[:, 0] - s * d[:, 1]
    xyz[:, 1] = box.center[1] + s * d[:, 0] + c * d[:, 1]
    yaw = math.remainder(box.yaw + angle, 2 * math.pi)
    return Box3D(box.center, box.size, yaw), PointCloud(xyz, points.features)


def check_bank(bank, tol: float = 1e-4) -> None:
    for i, (box, pts) in enumerate(bank):
        if len(pts) and not box.contains(pts.xyz, margin=tol).all():
            raise ValueError(f"bank object {i}: points lie outside its box")


def augment_scene(
    scene: PointCloud,
    scene_boxes: ProposalSet,
    bank,
    params: AugParams,
    lidar: LidarModel = LidarModel(),
) -> tuple[PointCloud, ProposalSet]:
    """Paste up to ``max_insertions`` distance-shifted, resampled bank objects.

    An object is inserted only if its BEV footprint overlaps no existing or
    already inserted box; scene points inside it are removed first.
    """
    bank = list(bank)
    check_bank(bank)
    if params.max_insertions == 0 or not bank:
        return scene, scene_boxes
    rng = np.random.default_rng(params.seed)
    picks = rng.choice(len(bank), size=min(params.max_insertions, len(bank)), replace=False)

    boxes = scene_boxes
    pieces = []
    for k in picks:
        box, pts = bank[int(k)]
        if params.rotate_objects:
            box, pts = _rotate_about_center(box, pts, rng.uniform(-math.pi / 4, math.pi / 4))
        delta = rng.uniform(*params.distance_offset_range)
        box, pts = shift_object(box, pts, delta)
        pts = spherical_resample(pts, lidar)
        pts = simulate_occlusion(pts, params, rng)
        if not len(pts) or any(bev_overlap(box, other) for other in boxes):
            continue
        scene = scene.subset(~box.contains(scene.xyz))
        pieces.append(pts)
        boxes = boxes.appended(box)
    if pieces:
        scene = PointCloud.concat([scene, *pieces])
    return scene, boxes
