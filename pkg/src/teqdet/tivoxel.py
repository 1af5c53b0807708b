"""Instance-level multi-grid pooling and cross-grid attention (TiVoxel pooling)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .bev import GridPointSet
from .group import TransformAction, TransformGroup, apply_to_xyz
from .structures import Box3D
from .voxelizer import EquivariantSet, SparseVoxelTensor


@dataclass(frozen=True)
class VsaConfig:
    radii: tuple[float, ...] = (0.4, 0.8)
    max_neighbors: tuple[int, ...] = (16, 16)
    mlp_widths: tuple[int, ...] = (32, 32)
    grid_per_axis: int = 4

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        nbrs = self.max_neighbors
        if np.isscalar(nbrs):
            nbrs = (int(nbrs),) * len(radii)
        nbrs = tuple(int(n) for n in nbrs)
        if not radii or any(r <= 0 for r in radii) or any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError(f"radii must be positive and strictly increasing, got {radii}")
        if len(nbrs) != len(radii) or min(nbrs) < 1:
            raise ValueError("max_neighbors needs one positive entry per radius")
        if len(self.mlp_widths) != 2 or min(self.mlp_widths) < 1:
            raise ValueError("mlp_widths must be two positive widths")
        if int(self.grid_per_axis) < 1:
            raise ValueError("grid_per_axis must be positive")
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "max_neighbors", nbrs)
        object.__setattr__(self, "mlp_widths", tuple(int(w) for w in self.mlp_widths))
        object.__setattr__(self, "grid_per_axis", int(self.grid_per_axis))

    @property
    def num_grid_points(self) -> int:
        return self.grid_per_axis ** 3


@dataclass(frozen=True, eq=False)
class VsaWeights:
    """Per-radius two-layer perceptrons ``(w1, b1, w2, b2)`` and a bias-free
    projection from the concatenated radius features to C."""

    mlps: tuple[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray], ...]
    projection: np.ndarray

    @property
    def c_out(self) -> int:
        return self.projection.shape[1]

    def astype(self, dtype) -> "VsaWeights":
        return VsaWeights(tuple(tuple(a.astype(dtype) for a in m) for m in self.mlps), self.projection.astype(dtype))

    def arrays(self) -> list[np.ndarray]:
        return [a for m in self.mlps for a in m] + [self.projection]


@dataclass(frozen=True, eq=False)
class AttentionWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray

    def __post_init__(self):
        shapes = {np.shape(self.wq), np.shape(self.wk), np.shape(self.wv)}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2 or len(set(next(iter(shapes)))) != 1:
            raise ValueError(f"attention weights must all be C x C, got {shapes}")
        for w in (self.wq, self.wk, self.wv):
            if not np.isfinite(w).all():
                raise ValueError("non-finite attention weight")

    @property
    def c(self) -> int:
        return self.wq.shape[0]

    def astype(self, dtype) -> "AttentionWeights":
        return AttentionWeights(self.wq.astype(dtype), self.wk.astype(dtype), self.wv.astype(dtype))


def init_tivoxel_weights(c_in: int, cfg: VsaConfig, c: int = 32, seed: int = 0):
    """Seeded uniform(+-1/sqrt(fan_in)) weights for VSA and attention."""
    rng = np.random.default_rng(seed)

    def lin(fan_in, fan_out):
        b = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-b, b, size=(fan_in, fan_out))

    h1, h2 = cfg.mlp_widths
    mlps = []
    for _ in cfg.radii:
        w1, w2 = lin(c_in + 3, h1), lin(h1, h2)
        b1 = rng.uniform(-0.1, 0.1, size=h1)
        b2 = rng.uniform(-0.1, 0.1, size=h2)
        mlps.append((w1, b1, w2, b2))
    vsa = VsaWeights(tuple(mlps), lin(h2 * len(cfg.radii), c))
    attn = AttentionWeights(lin(c, c), lin(c, c), lin(c, c))
    return vsa, attn


def lattice_offsets(size, g: int) -> np.ndarray:
    """Box-local centres of a g x g x g lattice, z-major then y then x."""
    t = (np.arange(g) + 0.5) / g - 0.5
    iz, iy, ix = np.meshgrid(t, t, t, indexing="ij")
    return np.stack([ix.ravel(), iy.ravel(), iz.ravel()], axis=1) * np.asarray(size, dtype=np.float64)


def gen_proposal_grids(box: Box3D, group: TransformGroup, g: int) -> list[GridPointSet]:
    """Set i holds ``T_i`` applied to the box lattice; order is shared by all sets."""
    if int(g) < 1:
        raise ValueError("grid_per_axis must be positive")
    base = box.to_world(lattice_offsets(box.size, int(g)))
    return [GridPointSet(apply_to_xyz(a, base), i) for i, a in enumerate(group)]


def grid_relabeling(action: TransformAction, g: int) -> np.ndarray:
    """``perm`` with ``lattice(T(box))[j] == T(lattice(box))[perm[j]]``.

    Rotations keep the box-local axes; a reflection flips the local y-axis.
    """
    idx = np.arange(g ** 3).reshape(g, g, g)  # (iz, iy, ix)
    if action.reflect:
        idx = idx[:, ::-1, :]
    return idx.ravel()


def neighbor_lists(query: np.ndarray, tensor: SparseVoxelTensor, radius: float, limit: int) -> list[np.ndarray]:
    """Per query point, up to ``limit`` voxel rows within ``radius`` of it,
    nearest first, ties by (ix, iy, iz)."""
    if not len(tensor):
        return [np.zeros(0, np.int64) for _ in range(len(query))]
    centers = tensor.centers()
    tree = cKDTree(centers)
    hits = tree.query_ball_point(query, radius * (1 + 1e-9) + 1e-12)
    r2 = radius * radius
    out = []
    for q, cand in zip(query, hits):
        cand = np.asarray(cand, dtype=np.int64)
        if not len(cand):
            out.append(cand)
            continue
        d = centers[cand] - q
        d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
        keep = d2 <= r2
        cand, d2 = cand[keep], d2[keep]
        c = tensor.coords[cand]
        order = np.lexsort((c[:, 2], c[:, 1], c[:, 0], d2))
        out.append(cand[order[:limit]])
    return out


def vsa_pool(
    grid: GridPointSet,
    tensor: SparseVoxelTensor,
    cfg: VsaConfig,
    weights: VsaWeights,
    channel_index: int | None = None,
) -> np.ndarray:
    """(J, C) features: ball query per radius, shared perceptron on
    (feature, offset) pairs, max over neighbours, concat radii, project."""
    if channel_index is not None and grid.action_index != channel_index:
        raise ValueError(f"grid lives in frame {grid.action_index} but tensor is channel {channel_index}")
    query = np.asarray(grid.points, dtype=np.float64)
    dtype = np.result_type(tensor.feats.dtype, weights.projection.dtype)
    centers = tensor.centers() if len(tensor) else np.zeros((0, 3))
    per_radius = []
    for radius, limit, (w1, b1, w2, b2) in zip(cfg.radii, cfg.max_neighbors, weights.mlps):
        nbrs = neighbor_lists(query, tensor, radius, limit)
        pooled = np.zeros((len(query), w2.shape[1]), dtype=dtype)
        rows = np.repeat(np.arange(len(query)), [len(n) for n in nbrs])
        if len(rows):
            cols = np.concatenate(nbrs)
            x = np.hstack([tensor.feats[cols], (centers[cols] - query[rows]).astype(dtype)])
            h = np.maximum(x @ w1 + b1, 0)
            h = np.maximum(h @ w2 + b2, 0)
            pooled_nonempty = np.full_like(pooled, -np.inf)
            np.maximum.at(pooled_nonempty, rows, h)
            has = np.zeros(len(query), bool)
            has[rows] = True
            pooled[has] = pooled_nonempty[has]
        per_radius.append(pooled)
    return np.hstack(per_radius) @ weights.projection


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def attention_scores(f: np.ndarray, w: AttentionWeights) -> np.ndarray:
    """Row-stochastic (2N, 2N) matrix softmax(Q K^T / sqrt(C))."""
    f = np.asarray(f)
    if f.ndim != 2 or f.shape[1] != w.c:
        raise ValueError(f"feature block {f.shape} does not match attention width {w.c}")
    q, k = f @ w.wq, f @ w.wk
    return _softmax_rows(q @ k.T / np.sqrt(w.c))


def cross_grid_attention(f: np.ndarray, w: AttentionWeights) -> np.ndarray:
    """Self-attention across the 2N transformation rows of one grid point,
    averaged over rows into a single C-vector."""
    s = attention_scores(f, w)
    return (s @ (f @ w.wv)).mean(axis=0)


def cross_grid_attention_vjp(f: np.ndarray, w: AttentionWeights, upstream: np.ndarray):
    """Gradients of ``upstream . cross_grid_attention(f, w)`` w.r.t. f, wq, wk, wv."""
    f = np.asarray(f)
    s = attention_scores(f, w)
    u = np.asarray(upstream).reshape(-1)
    if u.shape[0] != w.c:
        raise ValueError(f"upstream has length {u.shape[0]}, expected {w.c}")
    n = f.shape[0]
    q, k, v = f @ w.wq, f @ w.wk, f @ w.wv
    d_out = np.broadcast_to(u / n, (n, w.c))  # d/d(S V)
    d_v = s.T @ d_out
    d_s = d_out @ v.T
    d_z = s * (d_s - (d_s * s).sum(axis=1, keepdims=True))
    scale = 1.0 / np.sqrt(w.c)
    d_q = d_z @ k * scale
    d_k = d_z.T @ q * scale
    d_f = d_q @ w.wq.T + d_k @ w.wk.T + d_v @ w.wv.T
    return d_f, f.T @ d_q, f.T @ d_k, f.T @ d_v


def instance_features(box: Box3D, eqset: EquivariantSet, cfg: VsaConfig, vsa_w: VsaWeights) -> np.ndarray:
    """(2N, J, C) multi-grid features of one proposal."""
    grids = gen_proposal_grids(box, eqset.group, cfg.grid_per_axis)
    return np.stack([vsa_pool(grids[i], eqset[i], cfg, vsa_w, i) for i in range(len(eqset))])


def tivoxel_pool(
    box: Box3D,
    eqset: EquivariantSet,
    cfg: VsaConfig,
    vsa_w: VsaWeights,
    attn_w: AttentionWeights,
) -> np.ndarray:
    """Flattened (J * C,) transformation-invariant feature of one proposal."""
    if attn_w.c != vsa_w.c_out:
        raise ValueError(f"attention width {attn_w.c} != VSA output width {vsa_w.c_out}")
    first = eqset[0]
    for ch in eqset:
        if not ch.same_geometry(first):
            raise ValueError("channels do not share voxel geometry")
    feats = instance_features(box, eqset, cfg, vsa_w)
    return np.concatenate([cross_grid_attention(feats[:, j], attn_w) for j in range(feats.shape[1])])


def tivoxel_pool_many(boxes, eqset, cfg, vsa_w, attn_w, executor=None) -> np.ndarray:
    """(num_boxes, J * C) feature matrix."""
    boxes = list(boxes)
    width = cfg.num_grid_points * attn_w.c

    def one(b):
        return tivoxel_pool(b, eqset, cfg, vsa_w, attn_w)

    rows = [one(b) for b in boxes] if executor is None else list(executor.map(one, boxes))
    if not rows:
        return np.zeros((0, width))
    return np.stack(rows)
