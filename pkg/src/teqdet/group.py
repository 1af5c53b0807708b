"""Discrete rotation-reflection group acting on the BEV plane.

An action is "reflect across the x-axis (y -> -y), then rotate about z".
Its 2x2 BEV matrix is ``R(angle) @ diag(1, -1)`` for reflecting actions and
``R(angle)`` otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .structures import Box3D, PointCloud

TWO_PI = 2.0 * math.pi

# angles closer than this to a multiple of pi/2 use exact trig values
_SNAP = 1e-12


def wrap_angle(angle: float) -> float:
    """Reduce ``angle`` into [0, 2*pi); values within 1e-12 of 2*pi become 0."""
    a = math.fmod(angle, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    if a >= TWO_PI - _SNAP or a < _SNAP:
        return 0.0
    return a


def wrap_yaw(yaw: float) -> float:
    """Reduce a heading into [-pi, pi)."""
    a = math.fmod(yaw + math.pi, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    if a >= TWO_PI:
        a -= TWO_PI
    return a - math.pi


def exact_cos_sin(angle: float) -> tuple[float, float]:
    """cos/sin with exact 0/+-1 values at multiples of pi/2.

    Quarter-turn actions then permute lattice coordinates without rounding.
    """
    q = angle / (0.5 * math.pi)
    k = round(q)
    if abs(q - k) < _SNAP:
        return ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))[k % 4]
    return math.cos(angle), math.sin(angle)


@dataclass(frozen=True)
class TransformAction:
    rotation_angle: float = 0.0
    reflect: bool = False

    def __post_init__(self):
        object.__setattr__(self, "rotation_angle", wrap_angle(float(self.rotation_angle)))
        object.__setattr__(self, "reflect", bool(self.reflect))

    @property
    def matrix(self) -> np.ndarray:
        c, s = exact_cos_sin(self.rotation_angle)
        m = np.array([[c, -s], [s, c]])
        if self.reflect:
            m[:, 1] = -m[:, 1]
        return m

    @property
    def is_identity(self) -> bool:
        return self.rotation_angle == 0.0 and not self.reflect

    def is_lattice_compatible(self) -> bool:
        """True when the BEV matrix only has entries in {0, +1, -1}.

        Such actions map a square, origin-centred lattice onto itself.
        """
        q = self.rotation_angle / (0.5 * math.pi)
        return abs(q - round(q)) < _SNAP

    def __repr__(self) -> str:
        return f"TransformAction({math.degrees(self.rotation_angle):.6g}deg, reflect={self.reflect})"


IDENTITY = TransformAction(0.0, False)


def compose(a: TransformAction, b: TransformAction) -> TransformAction:
    """Action equal to applying ``b`` first, then ``a``."""
    # diag(1,-1) R(t) = R(-t) diag(1,-1)
    sign = -1.0 if a.reflect else 1.0
    return TransformAction(a.rotation_angle + sign * b.rotation_angle, a.reflect != b.reflect)


def inverse(a: TransformAction) -> TransformAction:
    if a.reflect:
        return a  # reflections R(t)F are involutions
    return TransformAction(-a.rotation_angle, False)


def _same(a: TransformAction, b: TransformAction, tol: float = 1e-9) -> bool:
    if a.reflect != b.reflect:
        return False
    d = abs(a.rotation_angle - b.rotation_angle)
    return min(d, TWO_PI - d) < tol


@dataclass(frozen=True)
class TransformGroup:
    n_rotations: int
    beta: float
    include_reflection: bool
    actions: tuple[TransformAction, ...]
    closure: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)

    def __getitem__(self, i: int) -> TransformAction:
        return self.actions[i]

    @property
    def is_closed(self) -> bool:
        return self.closure is not None

    def index(self, action: TransformAction) -> int:
        for i, a in enumerate(self.actions):
            if _same(a, action):
                return i
        raise KeyError(f"{action!r} is not an element of the group")

    def compose_index(self, i: int, j: int) -> int:
        """Index of ``actions[i] o actions[j]``; needs a closed group."""
        if self.closure is None:
            raise ValueError("group is not closed under composition (N*beta is not a multiple of 2*pi)")
        return int(self.closure[i, j])

    def channel_permutation(self, g: int) -> np.ndarray:
        """``perm[i]`` is the index k with ``T_k = T_i o T_g``.

        Channel i computed from ``T_g(P)`` equals channel ``perm[i]`` computed from ``P``.
        """
        return np.array([self.compose_index(i, g) for i in range(len(self))], dtype=np.int64)


def build_group(n_rotations: int, beta: float | None = None, include_reflection: bool = True) -> TransformGroup:
    """Build the order-``N`` (or ``2N`` with reflection) action list.

    ``beta`` defaults to ``2*pi/N``. The closure table is filled only when
    ``N*beta`` is a multiple of ``2*pi`` and every product is found in the list.
    """
    if int(n_rotations) != n_rotations or n_rotations < 1:
        raise ValueError(f"n_rotations must be a positive integer, got {n_rotations!r}")
    n_rotations = int(n_rotations)
    if beta is None:
        beta = TWO_PI / n_rotations
    beta = float(beta)
    if not beta > 0.0 or not math.isfinite(beta):
        raise ValueError(f"beta must be positive, got {beta!r}")

    flags = (False, True) if include_reflection else (False,)
    actions = tuple(TransformAction(i * beta, r) for r in flags for i in range(n_rotations))

    closure = None
    turns = n_rotations * beta / TWO_PI
    if n_rotations == 1 or abs(turns - round(turns)) < 1e-9:
        table = np.empty((len(actions), len(actions)), dtype=np.int64)
        ok = True
        for i, a in enumerate(actions):
            for j, b in enumerate(actions):
                c = compose(a, b)
                hit = next((k for k, x in enumerate(actions) if _same(x, c)), None)
                if hit is None:
                    ok = False
                    break
                table[i, j] = hit
            if not ok:
                break
        if ok:
            table.flags.writeable = False
            closure = table
    return TransformGroup(n_rotations, beta, bool(include_reflection), actions, closure)


def apply_to_xy(action: TransformAction, xy: np.ndarray) -> np.ndarray:
    """Transform an (n, 2) array of BEV coordinates."""
    xy = np.asarray(xy, dtype=np.float64)
    if action.is_identity:
        return xy.copy()
    m = action.matrix
    x, y = xy[..., 0], xy[..., 1]
    out = np.empty_like(xy)
    out[..., 0] = m[0, 0] * x + m[0, 1] * y
    out[..., 1] = m[1, 0] * x + m[1, 1] * y
    return out


def apply_to_xyz(action: TransformAction, xyz: np.ndarray) -> np.ndarray:
    """Transform (n, 3) coordinates; z passes through."""
    xyz = np.asarray(xyz, dtype=np.float64)
    out = xyz.copy()
    if not action.is_identity:
        out[..., :2] = apply_to_xy(action, xyz[..., :2])
    return out


def apply_to_points(action: TransformAction, points: PointCloud) -> PointCloud:
    """Transform point positions; z, features and point order are kept."""
    return PointCloud(apply_to_xyz(action, points.xyz), points.features)


def apply_to_box(action: TransformAction, box: Box3D) -> Box3D:
    center = apply_to_xyz(action, box.center[None])[0]
    yaw = action.rotation_angle - box.yaw if action.reflect else action.rotation_angle + box.yaw
    return Box3D(center, box.size, wrap_yaw(yaw))
