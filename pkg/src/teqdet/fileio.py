"""Readers and writers for scans, box lists, EQVX tensors and object banks.

EQVX container, all little-endian::

    b"EQVX" | version u32 | rank u32 | dims u32 x rank | float32 payload, row-major

A file may hold several records back to back (e.g. one per kernel and bias).
"""
from __future__ import annotations

import hashlib
import math
import os
import struct
from pathlib import Path

import numpy as np

from .structures import Box3D, PointCloud, ProposalSet

EQVX_MAGIC = b"EQVX"
EQVX_VERSION = 1


class FormatError(ValueError):
    """Malformed input file."""


def read_point_bin(path) -> PointCloud:
    """Decode a KITTI velodyne scan: float32 (x, y, z, intensity) records."""
    raw = Path(path).read_bytes()
    if len(raw) % 16:
        raise FormatError(f"{path}: length {len(raw)} is not a multiple of 16 bytes")
    arr = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    bad = ~np.isfinite(arr).all(axis=1)
    if bad.any():
        raise FormatError(f"{path}: non-finite value in record {int(np.argmax(bad))}")
    arr = arr.astype(np.float64)
    return PointCloud(arr[:, :3], arr[:, 3:4])


def write_point_bin(path, points: PointCloud) -> None:
    """Write x, y, z and the first feature channel (zero if absent) as float32."""
    out = np.zeros((len(points), 4), dtype="<f4")
    out[:, :3] = points.xyz
    if points.num_features:
        out[:, 3] = points.features[:, 0]
    Path(path).write_bytes(out.tobytes())


def parse_boxes(text: str, source: str = "<string>") -> ProposalSet:
    boxes, scores = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) not in (7, 8):
            raise FormatError(f"{source}:{lineno}: expected 7 or 8 fields, got {len(parts)}")
        try:
            vals = [float(p.replace("−", "-")) for p in parts]
        except ValueError as exc:
            raise FormatError(f"{source}:{lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in vals):
            raise FormatError(f"{source}:{lineno}: non-finite value")
        if min(vals[3:6]) <= 0:
            raise FormatError(f"{source}:{lineno}: box size must be positive")
        boxes.append(Box3D(vals[0:3], vals[3:6], vals[6]))
        scores.append(vals[7] if len(vals) == 8 else None)
    return ProposalSet(tuple(boxes), tuple(scores))


def read_boxes(path) -> ProposalSet:
    """Parse ``x y z l w h yaw [score]`` lines; blanks and ``#`` lines are skipped."""
    return parse_boxes(Path(path).read_text(), str(path))


def format_boxes(boxes: ProposalSet) -> str:
    lines = []
    for box, score in zip(boxes.boxes, boxes.scores):
        vals = [*box.center, *box.size, box.yaw]
        if score is not None:
            vals.append(score)
        lines.append(" ".join(repr(float(v)) for v in vals))
    return "".join(line + "\n" for line in lines)


def write_boxes(path, boxes: ProposalSet) -> None:
    Path(path).write_text(format_boxes(boxes))


def encode_eqvx(arrays) -> bytes:
    if isinstance(arrays, np.ndarray):
        arrays = [arrays]
    chunks = []
    for a in arrays:
        a = np.asarray(a)
        chunks.append(EQVX_MAGIC + struct.pack("<II", EQVX_VERSION, a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}I", *a.shape))
        chunks.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return b"".join(chunks)


def decode_eqvx(raw: bytes, source: str = "<bytes>") -> list[np.ndarray]:
    out, pos = [], 0
    while pos < len(raw):
        if raw[pos:pos + 4] != EQVX_MAGIC:
            raise FormatError(f"{source}: bad magic at byte {pos}")
        if pos + 12 > len(raw):
            raise FormatError(f"{source}: truncated header at byte {pos}")
        version, rank = struct.unpack_from("<II", raw, pos + 4)
        if version != EQVX_VERSION:
            raise FormatError(f"{source}: unsupported EQVX version {version}")
        pos += 12
        if pos + 4 * rank > len(raw):
            raise FormatError(f"{source}: truncated dims")
        dims = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        nbytes = 4 * int(np.prod(dims, dtype=np.int64))
        if pos + nbytes > len(raw):
            raise FormatError(f"{source}: truncated payload")
        out.append(np.frombuffer(raw, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims).copy())
        pos += nbytes
    return out


def write_eqvx(path, arrays) -> None:
    """Write one array or a sequence of arrays as float32 EQVX records."""
    Path(path).write_bytes(encode_eqvx(arrays))


def read_eqvx(path) -> list[np.ndarray]:
    return decode_eqvx(Path(path).read_bytes(), str(path))


def write_geo_header(path, origin, pixel_size, shape) -> None:
    """Sidecar text describing a BEV raster: ``key: value`` per line."""
    lines = [
        f"origin_x: {float(origin[0])!r}",
        f"origin_y: {float(origin[1])!r}",
        f"pixel_x: {float(pixel_size[0])!r}",
        f"pixel_y: {float(pixel_size[1])!r}",
        f"height: {int(shape[0])}",
        f"width: {int(shape[1])}",
        f"channels: {int(shape[2])}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_key_values(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if ":" in line:
            k, v = line.split(":", 1)
            out[k.strip()] = v.strip()
    return out


def read_bank(directory) -> list[tuple[Box3D, PointCloud]]:
    """Load an object bank: ``NAME.txt`` (one box line) paired with ``NAME.bin``.

    Entries are returned sorted by name.
    """
    directory = Path(directory)
    bank = []
    for txt in sorted(directory.glob("*.txt")):
        binf = txt.with_suffix(".bin")
        if not binf.exists():
            raise FormatError(f"{txt}: missing paired point file {binf.name}")
        boxes = read_boxes(txt)
        if len(boxes) != 1:
            raise FormatError(f"{txt}: expected exactly one box, found {len(boxes)}")
        bank.append((boxes[0], read_point_bin(binf)))
    return bank


def write_bank(directory, bank) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, (box, pts) in enumerate(bank):
        write_boxes(directory / f"obj{i:05d}.txt", ProposalSet((box,)))
        write_point_bin(directory / f"obj{i:05d}.bin", pts)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def remove_quietly(path) -> None:
    try:
        os.remove(path)
    except FileNotFoundError:
        pass
