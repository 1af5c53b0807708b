import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from teqdet.augment import (
    AugParams,
    LidarModel,
    augment_scene,
    bev_overlap,
    shift_object,
    simulate_occlusion,
    spherical_coords,
    spherical_resample,
)
from teqdet.data import surface_points
from teqdet.oracles import bev_iou, spherical_binning_oracle
from teqdet.structures import Box3D, PointCloud, ProposalSet

LIDAR = LidarModel()
CAR = (3.9, 1.6, 1.56)


def car(x, y, yaw=0.0, n=3000, seed=0):
    box = Box3D((x, y, -0.95), CAR, yaw)
    return box, surface_points(box, n, np.random.default_rng(seed))


def pts(xyz):
    xyz = np.atleast_2d(np.asarray(xyz, float))
    return PointCloud(xyz, np.arange(len(xyz), dtype=float)[:, None])


# ------------------------------------------------------------------ shift


def test_zero_shift_is_identity():
    box, p = car(10, 0)
    b2, p2 = shift_object(box, p, 0.0)
    assert b2 is box and p2 is p


def test_axis_shift():
    box, p = car(10, 0)
    b2, p2 = shift_object(box, p, 5.0)
    np.testing.assert_array_equal(b2.center, [15, 0, -0.95])
    np.testing.assert_allclose(p2.xyz - p.xyz, np.broadcast_to([5.0, 0.0, 0.0], p.xyz.shape), atol=1e-12)
    assert b2.yaw == box.yaw


@given(st.floats(-math.pi, math.pi), st.floats(1.0, 50.0), st.floats(0.0, 30.0))
def test_bev_range_grows_by_delta(az, r, delta):
    box = Box3D((r * math.cos(az), r * math.sin(az), 0.3), CAR, 0.2)
    b2, _ = shift_object(box, pts([[0.0, 0.0, 1.0]]), delta)
    assert math.hypot(*b2.center[:2]) == pytest.approx(r + delta, abs=1e-9)
    assert b2.center[2] == 0.3


def test_shift_errors():
    box, p = car(0, 0)
    with pytest.raises(ValueError):
        shift_object(box, p, 1.0)
    box, p = car(5, 0)
    with pytest.raises(ValueError):
        shift_object(box, p, -1.0)


# -------------------------------------------------------------- resample


def test_singleton_kept():
    p = pts([[5.0, 1.0, -1.0]])
    assert spherical_resample(p, LIDAR).xyz.tobytes() == p.xyz.tobytes()


def test_same_bin_keeps_one_input_point():
    p = pts([[10.0, 0.0001, 0.0], [10.0, 0.0002, 0.0001]])
    out, idx = spherical_resample(p, LIDAR, return_index=True)
    assert len(out) == 1
    np.testing.assert_array_equal(out.xyz[0], p.xyz[idx[0]])


def test_origin_point_rejected():
    with pytest.raises(ValueError):
        spherical_resample(pts([[1.0, 0, 0], [0, 0, 0]]), LIDAR)


def test_far_object_matches_oracle_and_thins():
    box, p = car(10, 0, yaw=0.3)
    near_idx = spherical_resample(p, LIDAR, return_index=True)[1]
    _, far = shift_object(box, p, 30.0)
    far_idx = spherical_resample(far, LIDAR, return_index=True)[1]
    np.testing.assert_array_equal(near_idx, spherical_binning_oracle(p.xyz, LIDAR.azimuth_resolution, LIDAR.elevation_resolution))
    np.testing.assert_array_equal(far_idx, spherical_binning_oracle(far.xyz, LIDAR.azimuth_resolution, LIDAR.elevation_resolution))
    assert len(far_idx) <= len(near_idx)


@given(st.integers(0, 2**31))
def test_survivors_are_records_in_distinct_bins(seed):
    rng = np.random.default_rng(seed)
    p = pts(rng.normal(size=(300, 3)) * 0.5 + [8.0, 3.0, -1.0])
    out, idx = spherical_resample(p, LIDAR, return_index=True)
    # the feature column carries the input record number
    np.testing.assert_array_equal(out.features[:, 0], idx)
    np.testing.assert_array_equal(out.xyz, p.xyz[idx])
    _, az, el = spherical_coords(out.xyz)
    bins = set(zip(np.floor(az / LIDAR.azimuth_resolution), np.floor(el / LIDAR.elevation_resolution)))
    assert len(bins) == len(out)


# ------------------------------------------------------------- occlusion


def test_occlusion_disabled():
    _, p = car(10, 3)
    out = simulate_occlusion(p, AugParams(occlusion_probability=0.0), np.random.default_rng(0))
    assert out is p


def test_full_sector_removes_everything():
    _, p = car(10, 3)
    params = AugParams(occlusion_probability=1.0, occlusion_sector_range=(2 * math.pi, 2 * math.pi))
    assert len(simulate_occlusion(p, params, np.random.default_rng(0))) == 0


def test_occlusion_removes_a_contiguous_sector_on_the_object():
    _, p = car(10, 3, n=5000)
    params = AugParams(occlusion_probability=1.0, occlusion_sector_range=(0.02, 0.02))
    out = simulate_occlusion(p, params, np.random.default_rng(1))
    assert 0 < len(out) < len(p)
    removed = np.setdiff1d(p.features[:, 0], out.features[:, 0]).astype(int)
    az = np.arctan2(p.xyz[:, 1], p.xyz[:, 0])
    assert np.ptp(az[removed]) <= 0.02 + 1e-12


def test_occlusion_deterministic():
    _, p = car(10, 3)
    params = AugParams(occlusion_probability=1.0)
    a = simulate_occlusion(p, params, np.random.default_rng(9))
    b = simulate_occlusion(p, params, np.random.default_rng(9))
    assert a.xyz.tobytes() == b.xyz.tobytes()


# ---------------------------------------------------------------- scenes


def scene(seed=0):
    rng = np.random.default_rng(seed)
    r = rng.uniform(2, 30, 4000)
    a = rng.uniform(-math.pi, math.pi, 4000)
    ground = PointCloud(np.stack([r * np.cos(a), r * np.sin(a), np.full(4000, -1.7)], 1), rng.uniform(size=(4000, 1)))
    boxes = ProposalSet((Box3D((8, 8, -0.95), CAR, 0.5), Box3D((-10, 2, -0.95), CAR, -1.0)))
    return ground, boxes


def bank(n=6):
    out = []
    for i in range(n):
        a = 2 * math.pi * i / n
        out.append(car(7 * math.cos(a), 7 * math.sin(a), yaw=a + 0.3, n=800, seed=i))
    return out


def test_disabled_or_empty_bank_is_noop():
    s, b = scene()
    assert augment_scene(s, b, bank(), AugParams(max_insertions=0)) == (s, b)
    assert augment_scene(s, b, [], AugParams()) == (s, b)


def test_inserted_boxes_never_overlap():
    s, b = scene()
    for seed in range(5):
        out, boxes = augment_scene(s, b, bank(), AugParams(seed=seed, max_insertions=6, distance_offset_range=(0, 10)))
        assert len(boxes) > len(b)
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if i >= len(b) or j >= len(b):
                    assert bev_iou(boxes[i], boxes[j]) == 0.0


def test_scene_points_inside_inserted_boxes_removed():
    s, b = scene()
    params = AugParams(seed=3, occlusion_probability=0.0)
    out, boxes = augment_scene(s, b, bank(), params)
    new = list(boxes)[len(b):]
    # ground points are at z = -1.7, below every car box, so plant some inside first
    planted = PointCloud.concat([s, PointCloud(np.array([bx.center for bx in new]), np.zeros((len(new), 1)))])
    out2, _ = augment_scene(planted, b, bank(), params)
    assert len(out2) == len(out)


def test_augment_deterministic():
    s, b = scene()
    params = AugParams(seed=11, rotate_objects=True)
    a = augment_scene(s, b, bank(), params)
    c = augment_scene(s, b, bank(), params)
    assert a[0].xyz.tobytes() == c[0].xyz.tobytes()
    assert [x.yaw for x in a[1]] == [x.yaw for x in c[1]]


def test_bad_bank_object_named():
    box, p = car(7, 0)
    bad = PointCloud(p.xyz + [0, 0, 5.0], p.features)
    with pytest.raises(ValueError, match="object 1"):
        augment_scene(*scene(), [(box, p), (box, bad)], AugParams())


@given(st.integers(0, 2**31))
def test_overlap_test_agrees_with_polygon_iou(seed):
    rng = np.random.default_rng(seed)
    a = Box3D((*rng.uniform(-3, 3, 2), 0), (*rng.uniform(0.5, 4, 2), 1), rng.uniform(-math.pi, math.pi))
    b = Box3D((*rng.uniform(-3, 3, 2), 0), (*rng.uniform(0.5, 4, 2), 1), rng.uniform(-math.pi, math.pi))
    assert bev_overlap(a, b) == (bev_iou(a, b) > 0)


def test_params_validation():
    with pytest.raises(ValueError):
        AugParams(distance_offset_range=(5, 1))
    with pytest.raises(ValueError):
        AugParams(occlusion_probability=1.5)
    with pytest.raises(ValueError):
        LidarModel(0.0, 1.0)
