"""Partially coupled CP decomposition of multiple order-3 datasets.

Datasets that share their first two modes (e.g. subjects x voxels x
feature maps) are decomposed jointly into components whose subject and
voxel factors are common to all datasets and components that belong to a
single dataset. Multi-start runs are compared with an assignment-matched
similarity and the most reproducible run is kept.
"""
from .kernels import BACKEND
from .model import (
    PartitionedFactors,
    Ranks,
    SolverConfig,
    assemble,
    cost,
    identifiability_check,
    residual_tensors,
)
from .solver import SolveResult, bcd_solve, init_random
from .tensor import cp_reconstruct, frobenius_norm_sq, khatri_rao, unfold

__version__ = "0.1.0"
