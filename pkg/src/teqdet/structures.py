"""Point clouds and oriented 3D boxes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class PointCloud:
    """LiDAR points: ``xyz`` is (n, 3), ``features`` is (n, f) with f >= 0."""

    xyz: np.ndarray
    features: np.ndarray = None

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        feats = self.features
        if feats is None:
            feats = np.zeros((len(xyz), 0))
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats.reshape(len(xyz), -1) if len(xyz) else feats.reshape(0, -1)
        if feats.shape[0] != xyz.shape[0]:
            raise ValueError(f"{xyz.shape[0]} points but {feats.shape[0]} feature rows")
        if not (np.isfinite(xyz).all() and np.isfinite(feats).all()):
            raise ValueError("point cloud contains non-finite values")
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "features", feats)

    def __len__(self) -> int:
        return self.xyz.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "PointCloud":
        return PointCloud(self.xyz[index], self.features[index])

    @staticmethod
    def concat(clouds) -> "PointCloud":
        clouds = list(clouds)
        return PointCloud(
            np.concatenate([c.xyz for c in clouds]),
            np.concatenate([c.features for c in clouds]),
        )

    def as_array(self) -> np.ndarray:
        return np.hstack([self.xyz, self.features])


@dataclass(frozen=True, eq=False)
class Box3D:
    """Oriented box in the LiDAR frame. ``size`` is (length, width, height)."""

    center: np.ndarray
    size: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64).reshape(3)
        size = np.asarray(self.size, dtype=np.float64).reshape(3)
        if not (size > 0).all():
            raise ValueError(f"box size must be strictly positive, got {size.tolist()}")
        if not (np.isfinite(center).all() and np.isfinite(size).all() and math.isfinite(self.yaw)):
            raise ValueError("box contains non-finite values")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", float(self.yaw))

    def corners(self) -> np.ndarray:
        """(8, 3) corners; bottom face first, counter-clockwise from (+l, +w)."""
        l, w, h = self.size / 2.0
        local = np.array(
            [[sx * l, sy * w, sz * h] for sz in (-1, 1) for sx, sy in ((1, 1), (-1, 1), (-1, -1), (1, -1))]
        )
        return self.to_world(local)

    def bev_corners(self) -> np.ndarray:
        return self.corners()[:4, :2]

    def to_world(self, local: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        local = np.asarray(local, dtype=np.float64)
        out = np.empty_like(local)
        out[:, 0] = c * local[:, 0] - s * local[:, 1] + self.center[0]
        out[:, 1] = s * local[:, 0] + c * local[:, 1] + self.center[1]
        out[:, 2] = local[:, 2] + self.center[2]
        return out

    def to_local(self, xyz: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        d = np.asarray(xyz, dtype=np.float64).reshape(-1, 3) - self.center
        out = np.empty_like(d)
        out[:, 0] = c * d[:, 0] + s * d[:, 1]
        out[:, 1] = -s * d[:, 0] + c * d[:, 1]
        out[:, 2] = d[:, 2]
        return out

    def contains(self, xyz: np.ndarray, margin: float = 0.0) -> np.ndarray:
        local = np.abs(self.to_local(xyz))
        return (local <= self.size / 2.0 + margin).all(axis=1)

    def translated(self, offset) -> "Box3D":
        return Box3D(self.center + np.asarray(offset, dtype=np.float64), self.size, self.yaw)


@dataclass(frozen=True, eq=False)
class ProposalSet:
    boxes: tuple[Box3D, ...] = ()
    scores: tuple[float | None, ...] = field(default=())

    def __post_init__(self):
        boxes = tuple(self.boxes)
        scores = tuple(self.scores) if self.scores else (None,) * len(boxes)
        if len(scores) != len(boxes):
            raise ValueError("one score slot per box is required")
        for s in scores:
            if s is not None and not math.isfinite(s):
                raise ValueError(f"non-finite proposal score {s}")
        object.__setattr__(self, "boxes", boxes)
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return len(self.boxes)

    def __iter__(self):
        return iter(self.boxes)

    def __getitem__(self, i: int) -> Box3D:
        return self.boxes[i]

    def appended(self, box: Box3D, score: float | None = None) -> "ProposalSet":
        return ProposalSet(self.boxes + (box,), self.scores + (score,))
