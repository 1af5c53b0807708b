"""End-to-end orchestration: voxelize, encode, pool, and verify equivariance."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio
from .bev import BevMap, interior_mask, tebev_pool, transform_map
from .config import ConfigError, PipelineConfig
from .group import apply_to_box, apply_to_points
from .sparse_conv import Backbone, backbone_forward, init_backbone, load_backbone_weights
from .structures import PointCloud, ProposalSet
from .tivoxel import AttentionWeights, VsaWeights, grid_relabeling, init_tivoxel_weights, tivoxel_pool_many
from .voxelizer import EquivariantSet, SparseVoxelTensor, transform_and_voxelize

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True, eq=False)
class Models:
    backbone: Backbone
    vsa: VsaWeights
    attention: AttentionWeights


def build_models(cfg: PipelineConfig, c_in: int = 4) -> Models:
    """Seeded weights (the untrained detector parameters) cast to the config precision."""
    backbone = init_backbone(
        c_in,
        cfg.backbone_widths,
        cfg.backbone_modes,
        cfg.backbone_kernel,
        cfg.backbone_stride,
        cfg.backbone_activation,
        seed=cfg.seed,
    )
    if cfg.backbone_weights:
        backbone = load_backbone_weights(backbone, cfg.backbone_weights)
    vsa, attn = init_tivoxel_weights(backbone.c_out, cfg.vsa, cfg.attention_channels, seed=cfg.seed + 1)
    dt = cfg.dtype
    return Models(backbone.astype(dt), vsa.astype(dt), attn.astype(dt))


@contextmanager
def _executor(threads: int):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            yield ex
    else:
        yield None


def _cast(eqset: EquivariantSet, dtype) -> EquivariantSet:
    return EquivariantSet(eqset.group, tuple(ch.with_feats(ch.feats.astype(dtype)) for ch in eqset))


def encode(cfg: PipelineConfig, points: PointCloud, models: Models, executor=None, timings=None):
    """(voxel set, backbone output set) for one scan."""
    t0 = time.perf_counter()
    voxels = _cast(transform_and_voxelize(points, cfg.group(), cfg.voxel_size, cfg.point_range, executor), cfg.dtype)
    t1 = time.perf_counter()
    feats = backbone_forward(models.backbone, voxels, executor)
    t2 = time.perf_counter()
    if timings is not None:
        timings["voxelize"] = t1 - t0
        timings["backbone"] = t2 - t1
    return voxels, feats


def _stage(name):
    @contextmanager
    def guard():
        try:
            yield
        except (StageError, ConfigError):
            raise
        except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
            raise StageError(name, exc) from exc

    return guard()


def _sha(path: Path) -> str:
    return fileio.sha256_file(path)


def run_pipeline(cfg: PipelineConfig, scan_path, boxes_path, out_dir, threads: int = 1) -> dict[str, str]:
    """Run all stages and write ``A_star.eqvx``, ``A_star.geo``,
    ``features.eqvx`` and ``manifest.txt`` into ``out_dir``.

    Returns the manifest as an ordered dict of strings.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {name: out_dir / name for name in ("A_star.eqvx", "A_star.geo", "features.eqvx")}
    timings: dict[str, float] = {}
    try:
        with _stage("read"):
            points = fileio.read_point_bin(scan_path)
            boxes = fileio.read_boxes(boxes_path) if boxes_path else ProposalSet()
            models = build_models(cfg, 3 + points.num_features)
        with _executor(threads) as ex:
            with _stage("encode"):
                _, feats = encode(cfg, points, models, ex, timings)
            with _stage("tebev"):
                t = time.perf_counter()
                a_star = tebev_pool(feats, ex)
                timings["tebev"] = time.perf_counter() - t
                fileio.write_eqvx(outputs["A_star.eqvx"], a_star.data)
                fileio.write_geo_header(outputs["A_star.geo"], a_star.origin, a_star.pixel_size, a_star.shape)
            with _stage("tivoxel"):
                t = time.perf_counter()
                rows = tivoxel_pool_many(boxes, feats, cfg.vsa, models.vsa, models.attention, ex)
                timings["tivoxel"] = time.perf_counter() - t
                fileio.write_eqvx(outputs["features.eqvx"], rows)
    except BaseException:
        for p in outputs.values():
            fileio.remove_quietly(p)
        raise

    manifest = {
        "config_sha256": cfg.digest(),
        "scan_sha256": _sha(Path(scan_path)),
        "boxes_sha256": _sha(Path(boxes_path)) if boxes_path else "none",
        "precision": cfg.precision,
        "channels": str(len(feats)),
        "num_points": str(len(points)),
        "num_proposals": str(len(boxes)),
        "a_star_shape": "x".join(str(n) for n in a_star.shape),
        "feature_shape": "x".join(str(n) for n in rows.shape),
    }
    for name, path in outputs.items():
        manifest[f"output.{name}.sha256"] = _sha(path)
    for stage, secs in timings.items():
        manifest[f"time.{stage}_s"] = f"{secs:.4f}"
    write_key_values(out_dir / "manifest.txt", manifest)
    return manifest


def write_key_values(path, items: dict) -> None:
    Path(path).write_text("".join(f"{k}: {v}\n" for k, v in items.items()), encoding="utf-8")


# ------------------------------------------------------------ verification


def sparse_residual(a: SparseVoxelTensor, b: SparseVoxelTensor) -> float:
    """Max abs feature difference over the union of active sites (missing = 0)."""
    if not a.same_geometry(b):
        return float("inf")
    ka, kb = a.keys(), b.keys()
    keys = np.union1d(ka, kb)
    fa = np.zeros((len(keys), a.num_channels))
    fb = np.zeros((len(keys), b.num_channels))
    fa[np.searchsorted(keys, ka)] = a.feats
    fb[np.searchsorted(keys, kb)] = b.feats
    return float(np.abs(fa - fb).max()) if len(keys) else 0.0


def bev_residuals(a_g: BevMap, a: BevMap, action) -> tuple[float, float]:
    """(max abs, relative RMS) of ``a_g - transform_map(a, g)`` over interior pixels."""
    expected = transform_map(a, action).data.astype(np.float64)
    got = a_g.data.astype(np.float64)
    mask = interior_mask(a, action)
    if not mask.any():
        return 0.0, 0.0
    diff = (got - expected)[mask]
    ref = np.sqrt(np.mean(a.data.astype(np.float64)[mask] ** 2))
    rms = np.sqrt(np.mean(diff ** 2))
    return float(np.abs(diff).max()), float(rms / ref) if ref > 0 else float(rms)


def tivoxel_residual(f_g: np.ndarray, f: np.ndarray, action, g: int, c: int) -> float:
    """Relative norm of the difference after undoing the grid relabeling of reflected boxes."""
    perm = grid_relabeling(action, g)
    f_g = f_g.reshape(len(f_g), g ** 3, c)
    f = f.reshape(len(f), g ** 3, c)[:, perm]
    num = np.linalg.norm((f_g - f).astype(np.float64))
    den = np.linalg.norm(f.astype(np.float64))
    return float(num / den) if den > 0 else float(num)


class VerificationRefused(ConfigError):
    """The configuration cannot support an exact equivariance check."""


def check_equivariance(cfg: PipelineConfig, points: PointCloud, boxes: ProposalSet, threads: int = 1) -> dict[str, str]:
    """Residuals of (a) backbone channel permutation, (b) A* alignment and
    (c) TiVoxel invariance for every group element ``g``.

    Returns ``key -> value`` strings including ``passed: true|false``.
    """
    group = cfg.group()
    if not group.is_closed:
        raise VerificationRefused(
            "equivariance check needs a closed group: N * beta must be a multiple of 2*pi "
            "so that T_i o T_g is again a group element"
        )
    if not cfg.is_range_symmetric():
        raise VerificationRefused("equivariance check needs a square, origin-centred x/y range with square voxels")
    models = build_models(cfg, 3 + points.num_features)
    report: dict[str, str] = {"group_order": str(len(group)), "precision": cfg.precision}
    worst = {"backbone": 0.0, "bev_lattice": 0.0, "bev_interp": 0.0, "tivoxel": 0.0}
    ok = True
    g_size, c = cfg.vsa.grid_per_axis, models.attention.c
    with _executor(threads) as ex:
        _, base = encode(cfg, points, models, ex)
        a_star = tebev_pool(base, ex)
        f = tivoxel_pool_many(boxes, base, cfg.vsa, models.vsa, models.attention, ex)
        for gi, action in enumerate(group):
            perm = group.channel_permutation(gi)
            _, moved = encode(cfg, apply_to_points(action, points), models, ex)
            r_bb = max(sparse_residual(moved[i], base[perm[i]]) for i in range(len(group)))
            r_max, r_rms = bev_residuals(tebev_pool(moved, ex), a_star, action)
            lattice = action.is_lattice_compatible()
            moved_boxes = [apply_to_box(action, b) for b in boxes]
            f_g = tivoxel_pool_many(moved_boxes, moved, cfg.vsa, models.vsa, models.attention, ex)
            r_tv = tivoxel_residual(f_g, f, action, g_size, c) if len(boxes) else 0.0

            bev_ok = r_max < cfg.tol_bev_lattice if lattice else r_rms < cfg.tol_bev_interp
            g_ok = r_bb < cfg.tol_backbone and bev_ok and r_tv < cfg.tol_tivoxel
            ok &= g_ok
            worst["backbone"] = max(worst["backbone"], r_bb)
            worst["tivoxel"] = max(worst["tivoxel"], r_tv)
            if lattice:
                worst["bev_lattice"] = max(worst["bev_lattice"], r_max)
            else:
                worst["bev_interp"] = max(worst["bev_interp"], r_rms)
            p = f"g{gi}"
            report[f"{p}.action"] = f"rotation_deg={np.degrees(action.rotation_angle):.6f} reflect={str(action.reflect).lower()}"
            report[f"{p}.lattice_compatible"] = str(lattice).lower()
            report[f"{p}.backbone_residual"] = f"{r_bb:.3e}"
            report[f"{p}.bev_max_residual"] = f"{r_max:.3e}"
            report[f"{p}.bev_rel_rms_residual"] = f"{r_rms:.3e}"
            report[f"{p}.tivoxel_residual"] = f"{r_tv:.3e}"
            report[f"{p}.passed"] = str(g_ok).lower()
            log.info("g%d %s backbone=%.2e bev=%.2e/%.2e tivoxel=%.2e", gi, action, r_bb, r_max, r_rms, r_tv)
    for k, v in worst.items():
        report[f"max.{k}_residual"] = f"{v:.3e}"
    report["passed"] = str(ok).lower()
    return report
