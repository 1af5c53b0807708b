"""Scene-level BEV alignment and max aggregation (TeBEV pooling)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .group import TransformAction, apply_to_xy, inverse
from .voxelizer import EquivariantSet, SparseVoxelTensor

# fractional pixel positions this close to an integer are treated as exact nodes
NODE_SNAP = 1e-9


@dataclass(frozen=True, eq=False)
class BevMap:
    """Dense (H, W, C) raster; pixel (u, v) is ``data[v, u]`` and its centre is
    ``origin + (u + 0.5, v + 0.5) * pixel_size``."""

    data: np.ndarray
    origin: np.ndarray
    pixel_size: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"BEV data must be (H, W, C) with positive sizes, got {data.shape}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(2))
        object.__setattr__(self, "pixel_size", np.asarray(self.pixel_size, dtype=np.float64).reshape(2))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def same_geometry(self, other: "BevMap") -> bool:
        return (
            self.data.shape == other.data.shape
            and np.array_equal(self.origin, other.origin)
            and np.array_equal(self.pixel_size, other.pixel_size)
        )

    def with_data(self, data: np.ndarray) -> "BevMap":
        return BevMap(data, self.origin, self.pixel_size)


@dataclass(frozen=True, eq=False)
class GridPointSet:
    """Ordered query points living in the frame of action ``action_index``."""

    points: np.ndarray
    action_index: int = 0

    def __len__(self) -> int:
        return self.points.shape[0]


def height_compress(v: SparseVoxelTensor) -> BevMap:
    """Stack the z-slices of ``v`` as channel blocks: block iz holds voxel (ix, iy, iz)."""
    nx, ny, nz = v.spatial_shape
    c = v.num_channels
    data = np.zeros((ny, nx, nz, c), dtype=v.feats.dtype if len(v) else np.float64)
    if len(v):
        data[v.coords[:, 1], v.coords[:, 0], v.coords[:, 2]] = v.feats
    return BevMap(data.reshape(ny, nx, nz * c), v.origin[:2], v.voxel_size[:2])


def gen_scene_grid(bev: BevMap) -> GridPointSet:
    """Pixel centres in world coordinates, row-major (v outer, u inner)."""
    h, w, _ = bev.shape
    v, u = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    pts = np.stack([u.ravel(), v.ravel()], axis=1)
    return GridPointSet(bev.origin + (pts + 0.5) * bev.pixel_size, 0)


def _pixel_coords(bev: BevMap, xy: np.ndarray) -> np.ndarray:
    uv = (xy - bev.origin) / bev.pixel_size - 0.5
    near = np.round(uv)
    return np.where(np.abs(uv - near) < NODE_SNAP, near, uv)


def bilinear_sample(bev: BevMap, xy) -> np.ndarray:
    """Bilinear interpolation between pixel centres; missing pixels count as zero.

    ``xy`` is (2,) or (n, 2); the result is (C,) or (n, C).
    """
    xy = np.asarray(xy, dtype=np.float64)
    single = xy.ndim == 1
    xy = xy.reshape(-1, 2)
    h, w, c = bev.shape
    uv = _pixel_coords(bev, xy)
    base = np.floor(uv)
    frac = (uv - base).astype(bev.data.dtype)
    base = base.astype(np.int64)

    flat = np.concatenate([bev.data.reshape(h * w, c), np.zeros((1, c), bev.data.dtype)])
    out = np.zeros((len(xy), c), dtype=bev.data.dtype)
    for du, dv in ((0, 0), (1, 0), (0, 1), (1, 1)):
        u = base[:, 0] + du
        v = base[:, 1] + dv
        wu = frac[:, 0] if du else 1 - frac[:, 0]
        wv = frac[:, 1] if dv else 1 - frac[:, 1]
        valid = (u >= 0) & (u < w) & (v >= 0) & (v < h)
        idx = np.where(valid, v * w + u, h * w)
        out += (wu * wv)[:, None] * flat[idx]
    return out[0] if single else out


def align_channel(e: BevMap, action: TransformAction, reference: BevMap | None = None) -> BevMap:
    """Resample ``e`` (computed in the frame of ``action``) onto the identity-frame grid.

    The identity-frame grid is that of ``reference`` (default: ``e`` itself).
    """
    ref = e if reference is None else reference
    grid = gen_scene_grid(ref).points
    samples = bilinear_sample(e, apply_to_xy(action, grid))
    h, w, _ = ref.shape
    return ref.with_data(samples.reshape(h, w, -1))


def aggregate_max(aligned) -> BevMap:
    """Elementwise max over aligned maps."""
    aligned = list(aligned)
    if not aligned:
        raise ValueError("nothing to aggregate")
    out = aligned[0].data.copy()
    for m in aligned[1:]:
        if not m.same_geometry(aligned[0]):
            raise ValueError("aligned maps disagree in geometry")
        np.maximum(out, m.data, out=out)
    return aligned[0].with_data(out)


def _check_set(eqset: EquivariantSet):
    if not len(eqset):
        raise ValueError("empty equivariant set")
    first = eqset[0]
    for ch in eqset:
        if not ch.same_geometry(first) or ch.num_channels != first.num_channels:
            raise ValueError("channels do not share voxel geometry")


def align_channels(eqset: EquivariantSet, executor=None) -> list[BevMap]:
    """Height-compress every channel and align it to the identity frame."""
    _check_set(eqset)

    def one(i):
        return align_channel(height_compress(eqset[i]), eqset.group[i])

    idx = range(len(eqset))
    return [one(i) for i in idx] if executor is None else list(executor.map(one, idx))


def tebev_pool(eqset: EquivariantSet, executor=None) -> BevMap:
    """Aligned, max-aggregated BEV map of an equivariant voxel set."""
    _check_set(eqset)
    if executor is not None:
        return aggregate_max(align_channels(eqset, executor))
    first = align_channel(height_compress(eqset[0]), eqset.group[0])
    out = first.data
    for i in range(1, len(eqset)):
        a = align_channel(height_compress(eqset[i]), eqset.group[i])
        np.maximum(out, a.data, out=out)
    return first


def transform_map(bev: BevMap, action: TransformAction) -> BevMap:
    """The map ``x -> bev(T^-1 x)`` sampled on ``bev``'s own grid."""
    return align_channel(bev, inverse(action))


def interior_mask(bev: BevMap, action: TransformAction) -> np.ndarray:
    """(H, W) mask of pixels whose pre-image under ``action`` keeps all four
    interpolation neighbours inside the raster."""
    h, w, _ = bev.shape
    uv = _pixel_coords(bev, apply_to_xy(inverse(action), gen_scene_grid(bev).points))
    ok = (uv[:, 0] >= 0) & (uv[:, 0] <= w - 1) & (uv[:, 1] >= 0) & (uv[:, 1] <= h - 1)
    return ok.reshape(h, w)
