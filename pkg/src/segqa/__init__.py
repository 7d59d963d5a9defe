"""Simulated segmentation errors on surface meshes and a graph model that estimates them."""

from .dataset import (
    CLASS_EDGES_MM,
    CLASS_NAMES,
    ClassBinning,
    Dataset,
    DESK_DATASET,
    DESK_SPLITS,
    DatasetConfig,
    Sample,
    build_sample,
    classify_sd,
    desk_config,
    generate_dataset,
    make_phantom,
    perturb_segmentation,
    split_dataset,
)
from .errors import *  # noqa: F401,F403
from .mesh import MeshGraph, TriMesh, marching_cubes, mesh_to_graph, taubin_smooth, vertex_normals
from .decimate import quadric_decimate
from .model import ModelConfig, SegErrorModel, build_cnn_mlp, build_gnn_mlp, build_model, load_model, save_model, transfer_encoder_weights
from .voxel import (
    BinaryMask,
    NoiseSpec,
    SignedDistanceField,
    VoxelVolume,
    hausdorff_distance,
    signed_distance_transform,
    simulate_noise_field,
    threshold_to_mask,
)

__version__ = "0.1.0"
