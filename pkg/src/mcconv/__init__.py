"""Monte Carlo convolution for non-uniformly sampled point clouds."""

__version__ = "0.1.0"

from .cloud import FeatureMap, PointCloud, compute_bbox_diag, concat_clouds, normalize_cloud, receptive_radius
from .conv import ConvLayerConfig, mc_conv_backward, mc_conv_forward, mc_convolve, multi_sampling_concat
from .density import DensityParams, estimate_pdf, uniform_pdf
from .errors import (DatasetNotFound, EmptyInput, IndexMismatch, InputError, InvalidLabel, InvalidParameter,
                     MCConvError, MissingNormals, NotEstimated, ShapeMismatch)
from .grid import NeighborTable, VoxelGrid, build_grid, build_neighbor_table, radius_neighbors
from .io import read_cloud, write_cloud
from .kernel import KernelParams, kernel_backward, kernel_forward, kernel_init
from .losses import cosine_loss, cross_entropy_loss
from .network import NetworkSpec, backward, forward, init_params, normal_estimation_spec
from .poisson import Hierarchy, build_hierarchy, farthest_point_sample, max_neighbors_bound, poisson_sample
from .protocols import PROTOCOLS, Protocol, apply_protocol, generate_shape, scalar_field_on_sphere
from .rng import Rng
from .training import TrainConfig, TrainState, adam_step, load_checkpoint, save_checkpoint, train_normal_estimation

__all__ = [
    "FeatureMap", "PointCloud", "compute_bbox_diag", "concat_clouds", "normalize_cloud", "receptive_radius",
    "ConvLayerConfig", "mc_conv_backward", "mc_conv_forward", "mc_convolve", "multi_sampling_concat",
    "DensityParams", "estimate_pdf", "uniform_pdf",
    "DatasetNotFound", "EmptyInput", "IndexMismatch", "InputError", "InvalidLabel", "InvalidParameter",
    "MCConvError", "MissingNormals", "NotEstimated", "ShapeMismatch",
    "NeighborTable", "VoxelGrid", "build_grid", "build_neighbor_table", "radius_neighbors",
    "read_cloud", "write_cloud",
    "KernelParams", "kernel_backward", "kernel_forward", "kernel_init",
    "cosine_loss", "cross_entropy_loss",
    "NetworkSpec", "backward", "forward", "init_params", "normal_estimation_spec",
    "Hierarchy", "build_hierarchy", "farthest_point_sample", "max_neighbors_bound", "poisson_sample",
    "PROTOCOLS", "Protocol", "apply_protocol", "generate_shape", "scalar_field_on_sphere",
    "Rng",
    "TrainConfig", "TrainState", "adam_step", "load_checkpoint", "save_checkpoint", "train_normal_estimation",
]
