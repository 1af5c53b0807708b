"""Command-line entry point: ``teqdet <command> [options]``.

Exit codes: 0 success, 2 input/format error, 3 config error, 4 verification failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import fileio
from .augment import augment_scene
from .bev import tebev_pool
from .config import ConfigError, PipelineConfig, load_config
from .pipeline import StageError, _executor, build_models, check_equivariance, encode, run_pipeline, write_key_values
from .structures import ProposalSet
from .tivoxel import tivoxel_pool_many
from .voxelizer import EquivariantSet

EXIT_OK, EXIT_INPUT, EXIT_CONFIG, EXIT_VERIFY = 0, 2, 3, 4

log = logging.getLogger("teqdet")


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
        over["aug"] = replace(cfg.aug, seed=args.seed)
    if args.precision is not None:
        over["precision"] = "verify" if args.precision == "verify" else "fast"
    return replace(cfg, **over) if over else cfg


def _need(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise ConfigError(f"--{n} is required for '{args.command}'")


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_set(out: Path, stem: str, eqset: EquivariantSet) -> None:
    for i, ch in enumerate(eqset):
        fileio.write_eqvx(out / f"{stem}_ch{i}.eqvx", [ch.coords.astype(np.float32), ch.feats])


def _encode_scan(args, cfg):
    points = fileio.read_point_bin(args.scan)
    models = build_models(cfg, 3 + points.num_features)
    with _executor(args.threads) as ex:
        voxels, feats = encode(cfg, points, models, ex)
    return points, models, voxels, feats


def cmd_voxelize(args, cfg):
    _need(args, "scan", "out")
    _, _, voxels, _ = _encode_scan(args, cfg)
    _write_set(_out(args), "voxels", voxels)


def cmd_backbone(args, cfg):
    _need(args, "scan", "out")
    _, models, _, feats = _encode_scan(args, cfg)
    out = _out(args)
    _write_set(out, "backbone", feats)
    models.backbone.save(out / "backbone_weights.eqvx")


def cmd_tebev(args, cfg):
    _need(args, "scan", "out")
    _, _, _, feats = _encode_scan(args, cfg)
    a = tebev_pool(feats)
    out = _out(args)
    fileio.write_eqvx(out / "A_star.eqvx", a.data)
    fileio.write_geo_header(out / "A_star.geo", a.origin, a.pixel_size, a.shape)


def cmd_tivoxel(args, cfg):
    _need(args, "scan", "boxes", "out")
    _, models, _, feats = _encode_scan(args, cfg)
    boxes = fileio.read_boxes(args.boxes)
    with _executor(args.threads) as ex:
        rows = tivoxel_pool_many(boxes, feats, cfg.vsa, models.vsa, models.attention, ex)
    fileio.write_eqvx(_out(args) / "features.eqvx", rows)


def cmd_run(args, cfg):
    _need(args, "scan", "out")
    manifest = run_pipeline(cfg, args.scan, args.boxes, args.out, threads=args.threads)
    for k, v in manifest.items():
        print(f"{k}: {v}")


def cmd_check(args, cfg):
    _need(args, "scan")
    points = fileio.read_point_bin(args.scan)
    boxes = fileio.read_boxes(args.boxes) if args.boxes else ProposalSet()
    report = check_equivariance(cfg, points, boxes, threads=args.threads)
    for k, v in report.items():
        print(f"{k}: {v}")
    if args.out:
        write_key_values(_out(args) / "report.txt", report)
    return EXIT_OK if report["passed"] == "true" else EXIT_VERIFY


def cmd_augment(args, cfg):
    _need(args, "scan", "bank", "out")
    scene = fileio.read_point_bin(args.scan)
    boxes = fileio.read_boxes(args.boxes) if args.boxes else ProposalSet()
    bank = fileio.read_bank(args.bank)
    try:
        new_scene, new_boxes = augment_scene(scene, boxes, bank, cfg.aug, cfg.lidar)
    except ValueError as exc:
        raise fileio.FormatError(str(exc)) from None
    out = _out(args)
    fileio.write_point_bin(out / "scan.bin", new_scene)
    fileio.write_boxes(out / "boxes.txt", new_boxes)
    print(f"inserted: {len(new_boxes) - len(boxes)}")
    print(f"points: {len(new_scene)}")


COMMANDS = {
    "augment": (cmd_augment, "paste distance-shifted bank objects into a scan"),
    "voxelize": (cmd_voxelize, "write the 2N transformed voxel sets"),
    "backbone": (cmd_backbone, "write the shared-backbone features of every channel"),
    "tebev": (cmd_tebev, "write the aligned, max-pooled BEV map A*"),
    "tivoxel": (cmd_tivoxel, "write per-proposal invariant feature vectors"),
    "run": (cmd_run, "run every stage and write a manifest"),
    "check": (cmd_check, "report equivariance residuals for every group element"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="teqdet", description="Transformation-equivariant LiDAR feature pipeline.", epilog="exit codes: 0 ok, 2 input error, 3 config error, 4 verification failure")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path)
        p.add_argument("--scan", type=Path)
        p.add_argument("--boxes", type=Path)
        p.add_argument("--out", type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--precision", choices=("verify", "fast"))
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "augment":
            p.add_argument("--bank", type=Path, help="directory of NAME.txt / NAME.bin object pairs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    func = COMMANDS[args.command][0]
    try:
        cfg = _config(args)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        code = func(args, cfg)
        return EXIT_OK if code is None else code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.cause, ConfigError):
            return EXIT_CONFIG
        if isinstance(exc.cause, (fileio.FormatError, OSError)):
            return EXIT_INPUT
        return 1
    except (fileio.FormatError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
