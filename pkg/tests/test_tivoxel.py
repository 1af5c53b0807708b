import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from teqdet.bev import GridPointSet
from teqdet.group import TransformGroup, apply_to_box, apply_to_points, build_group
from teqdet.oracles import FiniteDiffSpec, exhaustive_vsa, finite_diff_check, point_in_box
from teqdet.structures import Box3D, PointCloud
from teqdet.tivoxel import (
    AttentionWeights,
    VsaConfig,
    VsaWeights,
    attention_scores,
    cross_grid_attention,
    cross_grid_attention_vjp,
    gen_proposal_grids,
    grid_relabeling,
    init_tivoxel_weights,
    lattice_offsets,
    neighbor_lists,
    tivoxel_pool,
    vsa_pool,
)
from teqdet.voxelizer import EquivariantSet, SparseVoxelTensor, transform_and_voxelize

BOX = Box3D((2.0, -1.0, 0.3), (4.0, 2.0, 1.5), 0.6)


def attn(rng, c, scale=0.5):
    return AttentionWeights(*(rng.normal(size=(c, c)) * scale for _ in range(3)))


def small_tensor(rng, n=20, c=3, shape=(10, 10, 6), vs=(0.3, 0.3, 0.4), origin=(0.5, -2.5, -0.9)):
    flat = rng.choice(np.prod(shape), size=n, replace=False)
    ix, iy, iz = np.unravel_index(np.sort(flat), shape, order="F")
    coords = np.stack([ix, iy, iz], axis=1)
    return SparseVoxelTensor(vs, origin, shape, coords, rng.normal(size=(n, c)))


# ---------------------------------------------------------------- grids


def test_g1_grid_is_transformed_centre():
    g = build_group(3)
    for i, s in enumerate(gen_proposal_grids(BOX, g, 1)):
        assert s.action_index == i and len(s) == 1
        np.testing.assert_allclose(s.points[0], apply_to_box(g[i], BOX).center, atol=1e-12)


def test_identity_set_is_base_lattice():
    sets = gen_proposal_grids(BOX, build_group(3), 3)
    np.testing.assert_array_equal(sets[0].points, BOX.to_world(lattice_offsets(BOX.size, 3)))


def test_lattice_order_z_major():
    off = lattice_offsets((2.0, 2.0, 2.0), 2)
    np.testing.assert_array_equal(off[:, 2], [-0.5] * 4 + [0.5] * 4)
    np.testing.assert_array_equal(off[:4, 1], [-0.5, -0.5, 0.5, 0.5])
    np.testing.assert_array_equal(off[:4, 0], [-0.5, 0.5, -0.5, 0.5])


def test_grid_points_inside_transformed_box():
    g = build_group(3)
    for i, s in enumerate(gen_proposal_grids(BOX, g, 4)):
        b = apply_to_box(g[i], BOX)
        assert all(point_in_box(p, b.center, b.size, b.yaw) for p in s.points)


@pytest.mark.parametrize("n", [3, 4])
def test_relabeling_maps_lattices(n):
    group = build_group(n)
    base = gen_proposal_grids(BOX, group, 3)[0].points
    for a in group:
        moved_box = apply_to_box(a, BOX)
        lat = moved_box.to_world(lattice_offsets(moved_box.size, 3))
        moved = apply_to_points(a, PointCloud(base, np.zeros((len(base), 0)))).xyz
        np.testing.assert_allclose(lat, moved[grid_relabeling(a, 3)], atol=1e-12)


# ------------------------------------------------------------------ VSA


def vsa_setup(rng, c_in=3, c=8, cfg=None):
    cfg = cfg or VsaConfig(radii=(0.4, 0.9), max_neighbors=(3, 6), mlp_widths=(5, 4), grid_per_axis=2)
    vsa, _ = init_tivoxel_weights(c_in, cfg, c, seed=int(rng.integers(1 << 30)))
    return cfg, vsa


def test_far_away_grid_gives_zeros():
    rng = np.random.default_rng(0)
    cfg, w = vsa_setup(rng)
    t = small_tensor(rng)
    out = vsa_pool(GridPointSet(np.full((8, 3), 100.0)), t, cfg, w)
    assert out.shape == (8, 8) and not out.any()


def test_single_neighbour_encoding():
    rng = np.random.default_rng(1)
    cfg = VsaConfig(radii=(0.5,), max_neighbors=(4,), mlp_widths=(6, 5), grid_per_axis=1)
    _, w = vsa_setup(rng, 3, 4, cfg)
    t = SparseVoxelTensor((1, 1, 1), (0, 0, 0), (4, 4, 4), np.array([[1, 1, 1]]), np.array([[0.2, -0.3, 0.7]]))
    q = np.array([[1.6, 1.4, 1.5]])
    w1, b1, w2, b2 = w.mlps[0]
    x = np.concatenate([t.feats[0], t.centers()[0] - q[0]])
    ref = np.maximum(np.maximum(x @ w1 + b1, 0) @ w2 + b2, 0) @ w.projection
    np.testing.assert_allclose(vsa_pool(GridPointSet(q), t, cfg, w)[0], ref, rtol=0, atol=1e-14)


@given(st.integers(0, 2**31))
def test_matches_exhaustive_oracle(seed):
    rng = np.random.default_rng(seed)
    cfg, w = vsa_setup(rng)
    t = small_tensor(rng, n=int(rng.integers(1, 21)))
    box = Box3D(t.origin + rng.uniform(0.8, 2.2, size=3), rng.uniform(0.5, 2.0, size=3), rng.uniform(-3, 3))
    grid = gen_proposal_grids(box, build_group(1, None, False), 2)[0]
    got = vsa_pool(grid, t, cfg, w, 0)
    ref = exhaustive_vsa(grid.points, t.centers(), t.coords, t.feats, cfg.radii, cfg.max_neighbors, w.mlps, w.projection)
    np.testing.assert_allclose(got, ref, rtol=0, atol=1e-10)


def test_equidistant_neighbours_break_ties_by_coordinate():
    coords = np.array([[0, 1, 1], [2, 1, 1], [1, 0, 1], [1, 2, 1], [1, 1, 0], [1, 1, 2]])
    order = np.lexsort((coords[:, 0], coords[:, 1], coords[:, 2]))
    t = SparseVoxelTensor((1, 1, 1), (0, 0, 0), (3, 3, 3), coords[order], np.zeros((6, 1)))
    (hits,) = neighbor_lists(np.array([[1.5, 1.5, 1.5]]), t, 1.0, 3)
    assert [tuple(t.coords[h]) for h in hits] == [(0, 1, 1), (1, 0, 1), (1, 1, 0)]


def test_invariant_to_entry_enumeration():
    rng = np.random.default_rng(2)
    cfg, w = vsa_setup(rng)
    t = small_tensor(rng)
    perm = rng.permutation(len(t))
    shuffled = SparseVoxelTensor(t.voxel_size, t.origin, t.spatial_shape, t.coords[perm], t.feats[perm])
    grid = GridPointSet(t.centers()[:8] + 0.05)
    np.testing.assert_array_equal(vsa_pool(grid, shuffled, cfg, w), vsa_pool(grid, t, cfg, w))


def test_frame_mismatch():
    rng = np.random.default_rng(3)
    cfg, w = vsa_setup(rng)
    with pytest.raises(ValueError):
        vsa_pool(GridPointSet(np.zeros((1, 3)), 2), small_tensor(rng), cfg, w, channel_index=1)


def test_config_validation():
    with pytest.raises(ValueError):
        VsaConfig(radii=(0.8, 0.4))
    with pytest.raises(ValueError):
        VsaConfig(max_neighbors=(0, 3))
    with pytest.raises(ValueError):
        VsaConfig(grid_per_axis=0)


# ------------------------------------------------------------ attention


def test_identical_rows():
    rng = np.random.default_rng(4)
    w = attn(rng, 5)
    r = rng.normal(size=5)
    out = cross_grid_attention(np.tile(r, (6, 1)), w)
    np.testing.assert_allclose(out, r @ w.wv, rtol=0, atol=1e-14)
    np.testing.assert_array_equal(attention_scores(np.tile(r, (6, 1)), w), np.full((6, 6), 1 / 6))


def test_uniform_attention_is_row_mean():
    rng = np.random.default_rng(5)
    z = np.zeros((4, 4))
    f = rng.normal(size=(6, 4))
    np.testing.assert_allclose(cross_grid_attention(f, AttentionWeights(z, z, np.eye(4))), f.mean(axis=0), atol=1e-15)


def test_row_permutation_invariance():
    rng = np.random.default_rng(6)
    w = attn(rng, 8)
    f = rng.normal(size=(6, 8))
    ref = cross_grid_attention(f, w)
    for _ in range(20):
        np.testing.assert_allclose(cross_grid_attention(f[rng.permutation(6)], w), ref, rtol=0, atol=1e-12)


@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_softmax_rows_sum_to_one(seed, scale):
    rng = np.random.default_rng(seed)
    w = attn(rng, 6, scale=1.0)
    s = attention_scores(rng.normal(size=(6, 6)) * scale, w)
    assert np.isfinite(s).all()
    np.testing.assert_allclose(s.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_dimension_mismatch():
    rng = np.random.default_rng(7)
    with pytest.raises(ValueError):
        cross_grid_attention(rng.normal(size=(6, 5)), attn(rng, 4))
    with pytest.raises(ValueError):
        cross_grid_attention_vjp(rng.normal(size=(6, 4)), attn(rng, 4), np.ones(3))
    with pytest.raises(ValueError):
        AttentionWeights(np.eye(3), np.eye(3), np.eye(4))


def test_zero_upstream_gives_zero_gradients():
    rng = np.random.default_rng(8)
    for g in cross_grid_attention_vjp(rng.normal(size=(6, 4)), attn(rng, 4), np.zeros(4)):
        assert not g.any()


def test_uniform_attention_gradient_closed_form():
    rng = np.random.default_rng(9)
    c = 5
    z = np.zeros((c, c))
    wv = rng.normal(size=(c, c))
    u = rng.normal(size=c)
    d_f, *_ = cross_grid_attention_vjp(rng.normal(size=(6, c)), AttentionWeights(z, z, wv), u)
    np.testing.assert_allclose(d_f, np.tile(u @ wv.T / 6, (6, 1)), atol=1e-14)


@pytest.mark.parametrize("c", [3, 8])
def test_vjp_against_finite_differences(c):
    rng = np.random.default_rng(c)
    f, w, u = rng.normal(size=(6, c)), attn(rng, c), rng.normal(size=c)

    def fn(f_, wq, wk, wv):
        return float(u @ cross_grid_attention(f_, AttentionWeights(wq, wk, wv)))

    grads = cross_grid_attention_vjp(f, w, u)
    rep = finite_diff_check(fn, [f, w.wq, w.wk, w.wv], grads, FiniteDiffSpec())
    assert rep.passed, rep.max_relative_error


# ---------------------------------------------------------------- pooling


def scene_set(group, seed=10, n=400):
    rng = np.random.default_rng(seed)
    xyz = rng.uniform(-3, 3, size=(n, 3)) * [1, 1, 0.3]
    p = PointCloud(xyz, rng.uniform(size=(n, 1)))
    return p, transform_and_voxelize(p, group, (0.2, 0.2, 0.2), (-4, -4, -1, 4, 4, 1))


def test_identity_group_collapses_to_vsa():
    group = build_group(1, None, False)
    _, eq = scene_set(group)
    cfg = VsaConfig(grid_per_axis=2)
    vsa, _ = init_tivoxel_weights(4, cfg, 6, seed=1)
    z = np.zeros((6, 6))
    out = tivoxel_pool(BOX, eq, cfg, vsa, AttentionWeights(z, z, np.eye(6)))
    grid = gen_proposal_grids(BOX, group, 2)[0]
    np.testing.assert_allclose(out, vsa_pool(grid, eq[0], cfg, vsa).ravel(), atol=1e-14)


def test_default_width():
    group = build_group(3)
    _, eq = scene_set(group)
    cfg = VsaConfig()
    vsa, a = init_tivoxel_weights(4, cfg, 32, seed=2)
    assert tivoxel_pool(BOX, eq, cfg, vsa, a).shape == (2048,)


def test_channel_relabeling_invariance():
    group = build_group(3)
    _, eq = scene_set(group)
    cfg = VsaConfig(grid_per_axis=2)
    vsa, a = init_tivoxel_weights(4, cfg, 8, seed=3)
    ref = tivoxel_pool(BOX, eq, cfg, vsa, a)
    perm = [4, 2, 0, 5, 1, 3]
    relabeled = TransformGroup(group.n_rotations, group.beta, True, tuple(group[i] for i in perm))
    out = tivoxel_pool(BOX, EquivariantSet(relabeled, tuple(eq[i] for i in perm)), cfg, vsa, a)
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12)


@pytest.mark.parametrize("n", [3, 4])
def test_joint_transform_invariance(n):
    group = build_group(n)
    p, eq = scene_set(group)
    cfg = VsaConfig(grid_per_axis=2)
    vsa, a = init_tivoxel_weights(4, cfg, 8, seed=4)
    box = Box3D((0.5, -0.3, 0.0), (2.5, 1.5, 0.8), 0.4)
    ref = tivoxel_pool(box, eq, cfg, vsa, a).reshape(8, 8)
    for g in group:
        moved = transform_and_voxelize(apply_to_points(g, p), group, (0.2, 0.2, 0.2), (-4, -4, -1, 4, 4, 1))
        out = tivoxel_pool(apply_to_box(g, box), moved, cfg, vsa, a).reshape(8, 8)
        rel = np.linalg.norm(out - ref[grid_relabeling(g, 2)]) / np.linalg.norm(ref)
        assert rel < 1e-6


def test_width_mismatch_between_vsa_and_attention():
    group = build_group(1, None, False)
    _, eq = scene_set(group)
    cfg = VsaConfig(grid_per_axis=1)
    vsa, _ = init_tivoxel_weights(4, cfg, 6, seed=1)
    with pytest.raises(ValueError):
        tivoxel_pool(BOX, eq, cfg, vsa, attn(np.random.default_rng(0), 5))
