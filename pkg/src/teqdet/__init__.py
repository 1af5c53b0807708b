"""Transformation-equivariant LiDAR feature pipeline.

Rotation/reflection channels over a shared sparse-convolution backbone,
BEV alignment with max aggregation, invariant per-proposal pooling, and
distance-aware object augmentation.
"""
from .augment import AugParams, LidarModel, augment_scene, shift_object, simulate_occlusion, spherical_resample
from .bev import BevMap, GridPointSet, bilinear_sample, gen_scene_grid, height_compress, tebev_pool
from .config import ConfigError, PipelineConfig, load_config, parse_config
from .fileio import FormatError, read_boxes, read_eqvx, read_point_bin, write_boxes, write_eqvx, write_point_bin
from .group import (
    TransformAction,
    TransformGroup,
    apply_to_box,
    apply_to_points,
    build_group,
    compose,
    inverse,
)
from .pipeline import StageError, check_equivariance, run_pipeline
from .sparse_conv import Backbone, SparseConvLayer, backbone_forward, init_backbone, sparse_conv_forward
from .structures import Box3D, PointCloud, ProposalSet
from .tivoxel import (
    AttentionWeights,
    VsaConfig,
    cross_grid_attention,
    cross_grid_attention_vjp,
    gen_proposal_grids,
    tivoxel_pool,
    vsa_pool,
)
from .voxelizer import EquivariantSet, SparseVoxelTensor, transform_and_voxelize, voxelize

__version__ = "0.1.0"
