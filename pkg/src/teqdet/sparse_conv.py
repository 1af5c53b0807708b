"""Sparse 3D convolution and the shared-weight backbone.

Kernels are cross-correlations: ``kernel[a, b, c]`` multiplies the input at
offset ``(a - r, b - r, c - r)`` from the output site (times the stride), with
``r = k // 2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fileio import read_eqvx, write_eqvx
from .voxelizer import EquivariantSet, SparseVoxelTensor, linear_keys

SUBMANIFOLD = "submanifold"
STRIDED = "strided"


@dataclass(frozen=True, eq=False)
class SparseConvLayer:
    kernel: np.ndarray  # (k, k, k, C_in, C_out)
    bias: np.ndarray
    stride: tuple[int, int, int] = (1, 1, 1)
    mode: str = SUBMANIFOLD
    activation: str = "none"

    def __post_init__(self):
        kernel = np.asarray(self.kernel)
        if kernel.ndim != 5 or len(set(kernel.shape[:3])) != 1 or kernel.shape[0] % 2 == 0:
            raise ValueError(f"kernel must have shape (k, k, k, C_in, C_out) with odd k, got {kernel.shape}")
        bias = np.asarray(self.bias, dtype=kernel.dtype).reshape(-1)
        if bias.shape[0] != kernel.shape[4]:
            raise ValueError("bias length must equal C_out")
        if not (np.isfinite(kernel).all() and np.isfinite(bias).all()):
            raise ValueError("non-finite weights")
        stride = self.stride
        if np.isscalar(stride):
            stride = (int(stride),) * 3
        stride = tuple(int(s) for s in stride)
        if len(stride) != 3 or min(stride) < 1:
            raise ValueError(f"stride must be positive, got {stride}")
        if self.mode not in (SUBMANIFOLD, STRIDED):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == SUBMANIFOLD and stride != (1, 1, 1):
            raise ValueError("submanifold layers have stride 1")
        if self.activation not in ("none", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "stride", stride)

    @property
    def k(self) -> int:
        return self.kernel.shape[0]

    @property
    def c_in(self) -> int:
        return self.kernel.shape[3]

    @property
    def c_out(self) -> int:
        return self.kernel.shape[4]

    def astype(self, dtype) -> "SparseConvLayer":
        return SparseConvLayer(self.kernel.astype(dtype), self.bias.astype(dtype), self.stride, self.mode, self.activation)


def _offsets(k: int) -> np.ndarray:
    r = k // 2
    rng = np.arange(-r, r + 1)
    return np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)


def output_sites(layer: SparseConvLayer, tensor: SparseVoxelTensor) -> tuple[np.ndarray, tuple[int, int, int]]:
    """Active output coordinates (sorted) and output spatial shape."""
    if layer.mode == SUBMANIFOLD:
        return tensor.coords, tensor.spatial_shape
    s = np.asarray(layer.stride)
    out_shape = tuple(int(-(-n // st)) for n, st in zip(tensor.spatial_shape, layer.stride))
    if not len(tensor):
        return np.zeros((0, 3), np.int64), out_shape
    p = tensor.coords[None, :, :] - _offsets(layer.k)[:, None, :]
    o = p // s
    ok = (o * s == p).all(axis=2) & ((o >= 0) & (o < np.asarray(out_shape))).all(axis=2)
    cand = o[ok]
    keys = np.unique(linear_keys(cand, out_shape))
    nx, ny, _ = out_shape
    coords = np.stack([keys % nx, (keys // nx) % ny, keys // (nx * ny)], axis=1)
    return coords, out_shape


def build_rulebook(layer: SparseConvLayer, tensor: SparseVoxelTensor, out_coords: np.ndarray):
    """Per kernel offset, the (input row, output row) pairs it connects.

    Offsets are listed in kernel index order, so accumulating them in list
    order fixes the floating-point summation order of every output voxel.
    """
    in_keys = tensor.keys()
    if not len(in_keys) or not len(out_coords):
        return []
    offsets = _offsets(layer.k)
    nb = out_coords[None, :, :] * np.asarray(layer.stride) + offsets[:, None, :]  # (k^3, M, 3)
    shape = np.asarray(tensor.spatial_shape)
    inside = ((nb >= 0) & (nb < shape)).all(axis=2)
    nx, ny, _ = tensor.spatial_shape
    keys = (nb[..., 2] * ny + nb[..., 1]) * nx + nb[..., 0]
    pos = np.minimum(np.searchsorted(in_keys, keys), len(in_keys) - 1)
    hit = inside & (in_keys[pos] == keys)
    rules = []
    for a in np.nonzero(hit.any(axis=1))[0]:
        out_rows = np.nonzero(hit[a])[0]
        rules.append((int(a), pos[a, out_rows], out_rows))
    return rules


def sparse_conv_forward(layer: SparseConvLayer, tensor: SparseVoxelTensor) -> SparseVoxelTensor:
    """Apply one layer. Submanifold layers keep the active set; strided ones
    activate every output site whose kernel footprint covers an input voxel."""
    if tensor.num_channels != layer.c_in:
        raise ValueError(f"input has {tensor.num_channels} channels, layer expects {layer.c_in}")
    out_coords, out_shape = output_sites(layer, tensor)
    dtype = np.result_type(tensor.feats.dtype, layer.kernel.dtype)
    out = np.zeros((len(out_coords), layer.c_out), dtype=dtype)
    w = layer.kernel.reshape(-1, layer.c_in, layer.c_out)
    for a, in_rows, out_rows in build_rulebook(layer, tensor, out_coords):
        # out_rows are unique within one offset
        out[out_rows] += tensor.feats[in_rows] @ w[a]
    out += layer.bias
    if layer.activation == "relu":
        np.maximum(out, 0, out=out)
    s = np.asarray(layer.stride)
    return SparseVoxelTensor(tensor.voxel_size * s, tensor.origin, out_shape, out_coords, out)


@dataclass(frozen=True, eq=False)
class Backbone:
    layers: tuple[SparseConvLayer, ...] = field(default=())

    def __post_init__(self):
        layers = tuple(self.layers)
        for prev, nxt in zip(layers, layers[1:]):
            if prev.c_out != nxt.c_in:
                raise ValueError(f"layer widths do not chain: {prev.c_out} -> {nxt.c_in}")
        object.__setattr__(self, "layers", layers)

    @property
    def c_in(self) -> int:
        return self.layers[0].c_in

    @property
    def c_out(self) -> int:
        return self.layers[-1].c_out

    @property
    def total_stride(self) -> np.ndarray:
        s = np.ones(3, dtype=np.int64)
        for layer in self.layers:
            s *= layer.stride
        return s

    def __call__(self, tensor: SparseVoxelTensor) -> SparseVoxelTensor:
        for layer in self.layers:
            tensor = sparse_conv_forward(layer, tensor)
        return tensor

    def astype(self, dtype) -> "Backbone":
        return Backbone(tuple(layer.astype(dtype) for layer in self.layers))

    def save(self, path) -> None:
        arrays = []
        for layer in self.layers:
            arrays += [layer.kernel, layer.bias]
        write_eqvx(path, arrays)


def init_backbone(
    c_in: int,
    widths: Sequence[int] = (16, 32, 32, 64),
    modes: Sequence[str] = (SUBMANIFOLD, STRIDED, SUBMANIFOLD, STRIDED),
    k: int = 3,
    stride: int = 2,
    activation: str = "relu",
    seed: int = 0,
) -> Backbone:
    """Seeded backbone; weights uniform in +-1/sqrt(k^3 * C_in), bias zero."""
    if len(widths) != len(modes):
        raise ValueError("widths and modes must have the same length")
    rng = np.random.default_rng(seed)
    layers, cin = [], c_in
    for width, mode in zip(widths, modes):
        bound = 1.0 / np.sqrt(k ** 3 * cin)
        kernel = rng.uniform(-bound, bound, size=(k, k, k, cin, width))
        st = (stride,) * 3 if mode == STRIDED else (1, 1, 1)
        layers.append(SparseConvLayer(kernel, np.zeros(width), st, mode, activation))
        cin = width
    return Backbone(tuple(layers))


def load_backbone_weights(template: Backbone, path) -> Backbone:
    """Replace kernels and biases of ``template`` with the records in ``path``."""
    arrays = read_eqvx(path)
    if len(arrays) != 2 * len(template.layers):
        raise ValueError(f"{path}: expected {2 * len(template.layers)} tensors, found {len(arrays)}")
    layers = []
    for i, layer in enumerate(template.layers):
        kernel, bias = arrays[2 * i].astype(np.float64), arrays[2 * i + 1].astype(np.float64)
        if kernel.shape != layer.kernel.shape:
            raise ValueError(f"{path}: layer {i} kernel shape {kernel.shape} != {layer.kernel.shape}")
        layers.append(SparseConvLayer(kernel, bias, layer.stride, layer.mode, layer.activation))
    return Backbone(tuple(layers))


def backbone_forward(backbone: Backbone, eqset: EquivariantSet, executor=None) -> EquivariantSet:
    """Run the same backbone on every channel independently."""
    for ch in eqset:
        if ch.num_channels != backbone.c_in:
            raise ValueError(f"channel width {ch.num_channels} != backbone input width {backbone.c_in}")
    if executor is None:
        out = [backbone(ch) for ch in eqset]
    else:
        out = list(executor.map(backbone, eqset.channels))
    return EquivariantSet(eqset.group, tuple(out))
