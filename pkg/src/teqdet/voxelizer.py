"""Mean-feature voxelization and the per-action voxel sets."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .group import TransformGroup, apply_to_points
from .structures import PointCloud

DEFAULT_VOXEL_SIZE = (0.05, 0.05, 0.1)


@dataclass(frozen=True, eq=False)
class SparseVoxelTensor:
    """Occupied cells of a regular 3D grid.

    ``coords`` holds integer (ix, iy, iz) rows sorted ascending on (iz, iy, ix);
    ``feats`` holds the matching (K, C) features. ``counts`` is the number of
    source points per voxel when the tensor came straight from ``voxelize``.
    """

    voxel_size: np.ndarray
    origin: np.ndarray
    spatial_shape: tuple[int, int, int]
    coords: np.ndarray
    feats: np.ndarray
    counts: np.ndarray | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "voxel_size", np.asarray(self.voxel_size, dtype=np.float64).reshape(3))
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        object.__setattr__(self, "spatial_shape", tuple(int(n) for n in self.spatial_shape))
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=np.int64).reshape(-1, 3))
        feats = np.asarray(self.feats)
        if feats.ndim != 2 or feats.shape[0] != self.coords.shape[0]:
            raise ValueError(f"feats shape {feats.shape} does not match {self.coords.shape[0]} coords")
        object.__setattr__(self, "feats", feats)

    @property
    def num_channels(self) -> int:
        return self.feats.shape[1]

    def __len__(self) -> int:
        return self.coords.shape[0]

    def keys(self) -> np.ndarray:
        return linear_keys(self.coords, self.spatial_shape)

    def centers(self) -> np.ndarray:
        """World coordinates of the voxel centres."""
        return self.origin + (self.coords + 0.5) * self.voxel_size

    def same_geometry(self, other: "SparseVoxelTensor") -> bool:
        return (
            self.spatial_shape == other.spatial_shape
            and np.array_equal(self.voxel_size, other.voxel_size)
            and np.array_equal(self.origin, other.origin)
        )

    def with_feats(self, feats: np.ndarray) -> "SparseVoxelTensor":
        return replace(self, feats=feats, counts=None)

    def validate(self) -> None:
        n = np.asarray(self.spatial_shape)
        if len(self) and ((self.coords < 0).any() or (self.coords >= n).any()):
            raise ValueError("voxel coordinate outside spatial shape")
        k = self.keys()
        if len(k) > 1 and not (np.diff(k) > 0).all():
            raise ValueError("coordinates are not unique and sorted")
        if not np.isfinite(self.feats).all():
            raise ValueError("non-finite voxel features")

    def to_dense(self) -> np.ndarray:
        """(nx, ny, nz, C) array, zero where empty."""
        nx, ny, nz = self.spatial_shape
        out = np.zeros((nx, ny, nz, self.num_channels), dtype=self.feats.dtype)
        out[self.coords[:, 0], self.coords[:, 1], self.coords[:, 2]] = self.feats
        return out

    @classmethod
    def from_dense(cls, dense: np.ndarray, mask: np.ndarray, voxel_size=(1, 1, 1), origin=(0, 0, 0)):
        ix, iy, iz = np.nonzero(mask)
        coords = np.stack([ix, iy, iz], axis=1)
        order = np.argsort(linear_keys(coords, mask.shape), kind="stable")
        coords = coords[order]
        return cls(voxel_size, origin, mask.shape, coords, dense[coords[:, 0], coords[:, 1], coords[:, 2]])


@dataclass(frozen=True, eq=False)
class EquivariantSet:
    """One tensor per group action; ``channels[i]`` was produced under ``group[i]``."""

    group: TransformGroup
    channels: tuple

    def __post_init__(self):
        channels = tuple(self.channels)
        if len(channels) != len(self.group):
            raise ValueError(f"{len(channels)} channels for a group of order {len(self.group)}")
        object.__setattr__(self, "channels", channels)

    def __len__(self) -> int:
        return len(self.channels)

    def __getitem__(self, i: int):
        return self.channels[i]

    def __iter__(self):
        return iter(self.channels)

    def permuted(self, perm: Sequence[int]) -> "EquivariantSet":
        """Set whose channel i is ``self.channels[perm[i]]``."""
        return EquivariantSet(self.group, tuple(self.channels[p] for p in perm))


def linear_keys(coords: np.ndarray, spatial_shape) -> np.ndarray:
    """Row-major keys ordering coordinates by (iz, iy, ix)."""
    nx, ny, _ = spatial_shape
    c = np.asarray(coords, dtype=np.int64)
    return (c[:, 2] * ny + c[:, 1]) * nx + c[:, 0]


def grid_shape(voxel_size, point_range) -> tuple[int, int, int]:
    vs = np.asarray(voxel_size, dtype=np.float64)
    lo, hi = np.asarray(point_range[:3], dtype=np.float64), np.asarray(point_range[3:], dtype=np.float64)
    cells = (hi - lo) / vs
    snapped = np.round(cells)
    cells = np.where(np.abs(cells - snapped) < 1e-6, snapped, np.ceil(cells))
    return tuple(int(n) for n in cells)


def _check_args(voxel_size, point_range):
    vs = np.asarray(voxel_size, dtype=np.float64).reshape(-1)
    rng = np.asarray(point_range, dtype=np.float64).reshape(-1)
    if vs.shape != (3,) or not (vs > 0).all():
        raise ValueError(f"voxel_size must be 3 positive values, got {vs.tolist()}")
    if rng.shape != (6,) or not (rng[:3] < rng[3:]).all():
        raise ValueError(f"range must be (xmin, ymin, zmin, xmax, ymax, zmax) with min < max, got {rng.tolist()}")
    return vs, rng


def voxelize(points: PointCloud, voxel_size, point_range) -> SparseVoxelTensor:
    """Average (x, y, z, features) over the points of every occupied voxel.

    Points outside ``[min, max)`` are dropped; boundary points go to the lower cell.
    """
    vs, rng = _check_args(voxel_size, point_range)
    shape = grid_shape(vs, rng)
    lo = rng[:3]
    data = points.as_array()
    idx = np.floor((points.xyz - lo) / vs).astype(np.int64)
    keep = (points.xyz >= lo).all(axis=1) & (points.xyz < rng[3:]).all(axis=1)
    keep &= (idx >= 0).all(axis=1) & (idx < np.asarray(shape)).all(axis=1)
    idx, data = idx[keep], data[keep]

    c = data.shape[1]
    if not len(idx):
        return SparseVoxelTensor(vs, lo, shape, np.zeros((0, 3), np.int64), np.zeros((0, c)), np.zeros(0, np.int64))

    keys = linear_keys(idx, shape)
    uniq, inverse = np.unique(keys, return_inverse=True)
    counts = np.bincount(inverse, minlength=len(uniq))
    sums = np.stack([np.bincount(inverse, weights=data[:, k], minlength=len(uniq)) for k in range(c)], axis=1)
    feats = sums / counts[:, None]

    nx, ny, _ = shape
    coords = np.stack([uniq % nx, (uniq // nx) % ny, uniq // (nx * ny)], axis=1)
    return SparseVoxelTensor(vs, lo, shape, coords, feats, counts)


def transform_and_voxelize(points: PointCloud, group: TransformGroup, voxel_size, point_range, executor=None):
    """Channel i is ``voxelize(T_i(points))``; one channel per group action."""
    _check_args(voxel_size, point_range)

    def one(action):
        return voxelize(apply_to_points(action, points), voxel_size, point_range)

    if executor is None:
        channels = [one(a) for a in group]
    else:
        channels = list(executor.map(one, group.actions))
    return EquivariantSet(group, tuple(channels))
