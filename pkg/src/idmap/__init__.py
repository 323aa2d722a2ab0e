"""Iterated diffusion maps: feature-biased manifold learning.

The functional pipeline lives in the submodules (``neighbors``,
``local_analysis``, ``kernels``, ``spectral``, ``idm``); ``estimators``
wraps it in scikit-learn style classes.
"""

from .core import (ConnectivityError, DataValidationError, DegenerateGeometryError,
                   DiffusionEmbedding, FeatureSet, FormatError, IdmError, NeighborGraph,
                   NumericalError, ParameterError, PointCloud, ShapeError, SolverError,
                   load_embedding, load_features, load_point_cloud, read_matrix,
                   save_embedding, save_features, save_point_cloud, write_matrix)
from .estimators import DiffusionMap, IteratedDiffusionMap, LocalDerivativeEstimator
from .idm import IdmParams, IdmTrajectory, idm_run, idm_step, idm_transform
from .kernels import anisotropic_distance, assemble_kernel, global_bandwidth
from .local_analysis import bandwidth_scan, estimate_derivatives, local_geometry
from .manifolds import make_fixture
from .neighbors import knn, knn_query
from .spectral import eigensolve, nystrom_extend, rescaled_map

__version__ = "0.1.0"

__all__ = [
    "ConnectivityError", "DataValidationError", "DegenerateGeometryError",
    "DiffusionEmbedding", "DiffusionMap", "FeatureSet", "FormatError", "IdmError",
    "IdmParams", "IdmTrajectory", "IteratedDiffusionMap", "LocalDerivativeEstimator",
    "NeighborGraph", "NumericalError", "ParameterError", "PointCloud", "ShapeError",
    "SolverError", "anisotropic_distance", "assemble_kernel", "bandwidth_scan",
    "eigensolve", "estimate_derivatives", "global_bandwidth", "idm_run", "idm_step",
    "idm_transform", "knn", "knn_query", "load_embedding", "load_features",
    "load_point_cloud", "local_geometry", "make_fixture", "nystrom_extend",
    "read_matrix", "rescaled_map", "save_embedding", "save_features",
    "save_point_cloud", "write_matrix",
]
