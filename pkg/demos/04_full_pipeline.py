"""End-to-end run on the bundled 20k-point scene and the equivariance report.

Writes A*, the per-proposal feature matrix and a manifest into a temporary
directory, then checks every group element on a coarser grid.
"""
import tempfile

from teqdet import PipelineConfig, check_equivariance, read_boxes, read_point_bin, run_pipeline
from teqdet.data import mini_scene_paths

scan, boxes = mini_scene_paths()
with tempfile.TemporaryDirectory() as out:
    manifest = run_pipeline(PipelineConfig(precision="fast"), scan, boxes, out)
for key in ("a_star_shape", "feature_shape", "output.A_star.eqvx.sha256", "time.backbone_s", "time.tebev_s"):
    print(f"{key}: {manifest[key]}")

coarse = PipelineConfig(voxel_size=(0.1, 0.1, 0.2))
report = check_equivariance(coarse, read_point_bin(scan), read_boxes(boxes))
for key, value in report.items():
    if key.startswith("max.") or key == "passed":
        print(f"{key}: {value}")
