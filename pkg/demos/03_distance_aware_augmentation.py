"""Pushing a bank object away from the sensor thins it like a real scan would.

A dense car surface at 10 m is shifted outward along its bearing, then kept
to one point per LiDAR angular bin. Farther objects cover fewer bins, so
fewer points survive. Finally a few such objects are pasted into a scene.
"""
import numpy as np

from teqdet import AugParams, Box3D, LidarModel, augment_scene, shift_object, spherical_resample
from teqdet.data import surface_points, synthetic_scene
from teqdet.oracles import bev_iou

lidar = LidarModel()
box = Box3D((10.0, 0.0, -0.95), (3.9, 1.6, 1.56), 0.4)
car = surface_points(box, 5000, np.random.default_rng(0))
for offset in (0.0, 10.0, 20.0, 30.0):
    moved_box, moved = shift_object(box, car, offset)
    kept = spherical_resample(moved, lidar)
    print(f"range {np.hypot(*moved_box.center[:2]):5.1f} m: {len(kept):5d} of {len(car)} points kept")

scene, boxes = synthetic_scene(20000, 3, seed=7)
bank = [(b, surface_points(b, 1500, np.random.default_rng(i))) for i, b in enumerate(synthetic_scene(100, 4, seed=8)[1])]
out, out_boxes = augment_scene(scene, boxes, bank, AugParams(seed=3), lidar)
new = list(out_boxes)[len(boxes):]
print(f"inserted {len(new)} objects; scene now has {len(out)} points")
worst = max((bev_iou(a, b) for a in new for b in out_boxes if a is not b), default=0.0)
print(f"largest BEV IoU between an inserted box and any other box: {worst}")
