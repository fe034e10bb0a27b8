"""UMAP and Parametric UMAP in numpy."""
from .embed import UMAP, Embedding, OptimizerSchedule, full_cross_entropy, init_embedding, optimize
from .exceptions import (
    CapabilityError,
    ContractError,
    DataError,
    DimensionError,
    NumericError,
    ParameterError,
    PumapError,
)
from .fuzzy import FuzzyGraph, KernelParams, fit_kernel_params, fuzzy_simplicial_set, smooth_knn_dist
from .knn import NeighborGraph, exact_knn, nearest_neighbors, nn_descent
from .metrics import MetricReport, evaluate
from .parametric import LossWeights, ParametricModel, ParametricSchedule, ParametricUMAP, train_parametric

__all__ = [
    "UMAP",
    "ParametricUMAP",
    "Embedding",
    "OptimizerSchedule",
    "ParametricSchedule",
    "ParametricModel",
    "LossWeights",
    "FuzzyGraph",
    "KernelParams",
    "NeighborGraph",
    "MetricReport",
    "evaluate",
    "exact_knn",
    "nn_descent",
    "nearest_neighbors",
    "smooth_knn_dist",
    "fuzzy_simplicial_set",
    "fit_kernel_params",
    "init_embedding",
    "optimize",
    "full_cross_entropy",
    "train_parametric",
    "PumapError",
    "ParameterError",
    "DimensionError",
    "DataError",
    "ContractError",
    "CapabilityError",
    "NumericError",
]
