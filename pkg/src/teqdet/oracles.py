"""Brute-force reference implementations used to check the fast paths.

Nothing here imports the modules being checked; geometry is recomputed from
raw numbers so that a shared bug cannot hide in a shared helper.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DENSE_CAP = 64 ** 3


class OracleRefusal(ValueError):
    """Input too large for an exhaustive oracle."""


# ---------------------------------------------------------------- convolution


def dense_conv_oracle(dense, kernel, stride=1, mode="submanifold", mask=None, bias=None, activation="none"):
    """Zero-padded 3D cross-correlation on a dense (nx, ny, nz, C_in) grid.

    Output cell o sums ``dense[o * stride + d] @ kernel[d + r]`` over offsets d.
    In submanifold mode ``mask`` (the occupied input cells) zeroes every other
    output cell.
    """
    dense = np.asarray(dense, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    nx, ny, nz, cin = dense.shape
    if nx * ny * nz > DENSE_CAP:
        raise OracleRefusal(f"grid {dense.shape[:3]} exceeds the 64^3 oracle cap")
    k = kernel.shape[0]
    r = k // 2
    s = (stride,) * 3 if np.isscalar(stride) else tuple(stride)
    if mode == "submanifold":
        s = (1, 1, 1)
    out_shape = tuple(-(-n // st) for n, st in zip((nx, ny, nz), s))
    padded = np.zeros((nx + 2 * r + s[0], ny + 2 * r + s[1], nz + 2 * r + s[2], cin))
    padded[r:r + nx, r:r + ny, r:r + nz] = dense
    out = np.zeros(out_shape + (kernel.shape[4],))
    for a in range(k):
        for b in range(k):
            for c in range(k):
                window = padded[
                    a: a + s[0] * out_shape[0]: s[0],
                    b: b + s[1] * out_shape[1]: s[1],
                    c: c + s[2] * out_shape[2]: s[2],
                ]
                out += np.einsum("xyzi,io->xyzo", window, kernel[a, b, c])
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)
    if activation == "relu":
        out = np.maximum(out, 0)
    if mode == "submanifold":
        if mask is None:
            raise ValueError("submanifold oracle needs the occupancy mask")
        out = out * np.asarray(mask, bool)[..., None]
    return out


# ------------------------------------------------------------------ voxels


def voxel_mean_oracle(xyz, feats, voxel_size, point_range):
    """dict (ix, iy, iz) -> (mean of [x, y, z, feats...], count), by direct grouping."""
    groups: dict[tuple[int, int, int], list] = {}
    lo, hi = point_range[:3], point_range[3:]
    for p, f in zip(np.asarray(xyz, float), np.asarray(feats, float).reshape(len(xyz), -1)):
        if not all(lo[i] <= p[i] < hi[i] for i in range(3)):
            continue
        key = tuple(int(math.floor((p[i] - lo[i]) / voxel_size[i])) for i in range(3))
        groups.setdefault(key, []).append(np.concatenate([p, f]))
    return {k: (np.mean(v, axis=0), len(v)) for k, v in groups.items()}


# ---------------------------------------------------------------- bilinear


def naive_bilinear(data, origin, pixel_size, x, y):
    """Tent-weighted sum over the four pixels around (x, y); out-of-raster pixels are zero."""
    h, w, c = data.shape
    fu = (x - origin[0]) / pixel_size[0] - 0.5
    fv = (y - origin[1]) / pixel_size[1] - 0.5
    u0, v0 = math.floor(fu), math.floor(fv)
    acc = np.zeros(c)
    for u in (u0, u0 + 1):
        for v in (v0, v0 + 1):
            if not (0 <= u < w and 0 <= v < h):
                continue
            cx = origin[0] + (u + 0.5) * pixel_size[0]
            cy = origin[1] + (v + 0.5) * pixel_size[1]
            wx = max(0.0, 1.0 - abs(x - cx) / pixel_size[0])
            wy = max(0.0, 1.0 - abs(y - cy) / pixel_size[1])
            acc = acc + wx * wy * data[v, u]
    return acc


# ------------------------------------------------------------------- boxes


def box_corners(center, size, yaw):
    """(8, 3) corners of an oriented box computed from scratch."""
    cx, cy, cz = center
    l, w, h = size
    ca, sa = math.cos(yaw), math.sin(yaw)
    out = []
    for dz in (-h / 2, h / 2):
        for dx, dy in ((l / 2, w / 2), (-l / 2, w / 2), (-l / 2, -w / 2), (l / 2, -w / 2)):
            out.append((cx + ca * dx - sa * dy, cy + sa * dx + ca * dy, cz + dz))
    return np.array(out)


def point_in_box(p, center, size, yaw, tol=1e-9):
    dx, dy, dz = p[0] - center[0], p[1] - center[1], p[2] - center[2]
    ca, sa = math.cos(yaw), math.sin(yaw)
    along = dx * ca + dy * sa
    across = -dx * sa + dy * ca
    return abs(along) <= size[0] / 2 + tol and abs(across) <= size[1] / 2 + tol and abs(dz) <= size[2] / 2 + tol


def point_set_distance(a, b):
    """Largest distance from a point of either set to its nearest partner."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    return max(d.min(axis=1).max(), d.min(axis=0).max())


def _polygon_area(poly):
    area = 0.0
    for i in range(len(poly)):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % len(poly)]
        area += x1 * y2 - x2 * y1
    return abs(area) / 2.0


def _ccw(poly):
    s = 0.0
    for i in range(len(poly)):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % len(poly)]
        s += x1 * y2 - x2 * y1
    return poly if s > 0 else poly[::-1]


def _clip(subject, clipper):
    """Sutherland-Hodgman clip of ``subject`` by convex CCW ``clipper``."""
    out = list(subject)
    for i in range(len(clipper)):
        if not out:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % len(clipper)]

        def side(p):
            return (bx - ax) * (p[1] - ay) - (by - ay) * (p[0] - ax)

        inp, out = out, []
        for j in range(len(inp)):
            p, q = inp[j], inp[(j + 1) % len(inp)]
            sp, sq = side(p), side(q)
            if sp >= 0:
                out.append(p)
            if (sp >= 0) != (sq >= 0):
                t = sp / (sp - sq)
                out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def bev_iou(a, b) -> float:
    """IoU of the yaw-rotated BEV rectangles of two boxes (objects with
    ``center``, ``size`` and ``yaw``), by convex polygon clipping."""
    pa = _ccw([tuple(c[:2]) for c in box_corners(a.center, a.size, a.yaw)[:4]])
    pb = _ccw([tuple(c[:2]) for c in box_corners(b.center, b.size, b.yaw)[:4]])
    inter_poly = _clip(pa, pb)
    inter = _polygon_area(inter_poly) if len(inter_poly) >= 3 else 0.0
    union = _polygon_area(pa) + _polygon_area(pb) - inter
    return float(min(1.0, max(0.0, inter / union))) if union > 0 else 0.0


# ------------------------------------------------------------- spherical


def spherical_binning_oracle(xyz, azimuth_resolution, elevation_resolution):
    """Sorted indices of the points kept by angular-bin nearest-to-centre selection."""
    best = {}
    for i, (x, y, z) in enumerate(np.asarray(xyz, float)):
        az = math.atan2(y, x)
        el = math.atan2(z, math.hypot(x, y))
        rng = math.sqrt(x * x + y * y + z * z)
        ia = math.floor(az / azimuth_resolution)
        ie = math.floor(el / elevation_resolution)
        ca = (ia + 0.5) * azimuth_resolution
        ce = (ie + 0.5) * elevation_resolution
        key = ((az - ca) ** 2 + (el - ce) ** 2, rng, i)
        if (ia, ie) not in best or key < best[(ia, ie)]:
            best[(ia, ie)] = key
    return sorted(v[2] for v in best.values())


# ------------------------------------------------------------ neighbourhood


def exhaustive_vsa(query, centers, coords, feats, radii, max_neighbors, mlps, projection):
    """Voxel-set-abstraction features by scanning every voxel for every query.

    ``mlps`` holds one ``(w1, b1, w2, b2)`` per radius; returns (J, C).
    """
    query = np.asarray(query, float)
    out = []
    for q in query:
        blocks = []
        for radius, limit, (w1, b1, w2, b2) in zip(radii, max_neighbors, mlps):
            found = []
            for row in range(len(centers)):
                dx = centers[row][0] - q[0]
                dy = centers[row][1] - q[1]
                dz = centers[row][2] - q[2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 <= radius * radius:
                    found.append((d2, int(coords[row][0]), int(coords[row][1]), int(coords[row][2]), row))
            found.sort()
            pooled = None
            for *_, row in found[:limit]:
                x = np.concatenate([feats[row], centers[row] - q])
                h = np.maximum(np.dot(x, w1) + b1, 0.0)
                h = np.maximum(np.dot(h, w2) + b2, 0.0)
                pooled = h if pooled is None else np.maximum(pooled, h)
            blocks.append(np.zeros(w2.shape[1]) if pooled is None else pooled)
        out.append(np.dot(np.concatenate(blocks), projection))
    return np.array(out)


# --------------------------------------------------------- finite differences


@dataclass(frozen=True)
class FiniteDiffSpec:
    step: float = 1e-5
    scheme: str = "central"
    relative_tolerance: float = 1e-4
    # relative errors use max(|analytic|, |numeric|, floor) as denominator
    denominator_floor: float = 1e-6

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.scheme != "central":
            raise ValueError("only the central scheme is supported")


@dataclass(frozen=True)
class FiniteDiffReport:
    max_relative_error: tuple[float, ...]
    worst_index: tuple[tuple[int, ...], ...]
    numeric: tuple[np.ndarray, ...]
    tolerance: float

    @property
    def passed(self) -> bool:
        return max(self.max_relative_error, default=0.0) < self.tolerance

    @property
    def worst(self) -> float:
        return max(self.max_relative_error, default=0.0)


def finite_diff_check(fn, inputs, analytic, spec: FiniteDiffSpec = FiniteDiffSpec()) -> FiniteDiffReport:
    """Compare ``analytic`` gradients of scalar ``fn(*inputs)`` with central differences."""
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    errors, worst, numerics = [], [], []
    for t, (x, g) in enumerate(zip(inputs, analytic)):
        g = np.asarray(g, dtype=np.float64)
        num = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            orig = x[idx]
            x[idx] = orig + spec.step
            fp = float(fn(*inputs))
            x[idx] = orig - spec.step
            fm = float(fn(*inputs))
            x[idx] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise FloatingPointError(f"non-finite function value perturbing input {t} at {idx}")
            num[idx] = (fp - fm) / (2 * spec.step)
        denom = np.maximum(np.maximum(np.abs(g), np.abs(num)), spec.denominator_floor)
        rel = np.abs(g - num) / denom
        k = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
        errors.append(float(rel.max()) if rel.size else 0.0)
        worst.append(tuple(int(i) for i in k))
        numerics.append(num)
    return FiniteDiffReport(tuple(errors), tuple(worst), tuple(numerics), spec.relative_tolerance)
