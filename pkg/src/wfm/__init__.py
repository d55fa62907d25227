"""Wasserstein flow matching: Bures-Wasserstein Gaussian flows and
entropic point-cloud flows, with training, generation, and evaluation."""

from .bw import (
    BwPath,
    Gaussian,
    TangentBW,
    TangentBoundaryError,
    bw_distance_sq,
    bw_exp,
    bw_log,
    bw_mccann,
    bw_ot_matrix,
    bw_tangent_norm_sq,
    bw_velocity,
    frechet_cost_matrix,
)
from .data import (
    DatasetError,
    GaussianDataset,
    PointCloudDataset,
    load_dataset,
    save_dataset,
)
from .entropic import (
    EntropicPlan,
    PointCloud,
    entropic_map,
    round_to_permutation,
    sinkhorn,
)
from .generate import GenerationAbort, generate_bw, generate_bw_euclidean, generate_pc
from .linalg import PsdViolationError
from .metrics import chamfer_sq, emd_sq, label_accuracy_1nn, min_bw_to_dataset, one_nn_accuracy
# the training entry point stays namespaced (wfm.train.train) so the
# wfm.train module is not shadowed by a same-named function
from . import train
from .train import NumericalAbort, TrainConfig, TrainResult

__version__ = "0.1.0"

__all__ = [
    "BwPath",
    "DatasetError",
    "EntropicPlan",
    "Gaussian",
    "GaussianDataset",
    "GenerationAbort",
    "NumericalAbort",
    "PointCloud",
    "PointCloudDataset",
    "PsdViolationError",
    "TangentBW",
    "TangentBoundaryError",
    "TrainConfig",
    "TrainResult",
    "bw_distance_sq",
    "bw_exp",
    "bw_log",
    "bw_mccann",
    "bw_ot_matrix",
    "bw_tangent_norm_sq",
    "bw_velocity",
    "chamfer_sq",
    "emd_sq",
    "entropic_map",
    "frechet_cost_matrix",
    "generate_bw",
    "generate_bw_euclidean",
    "generate_pc",
    "label_accuracy_1nn",
    "load_dataset",
    "min_bw_to_dataset",
    "one_nn_accuracy",
    "round_to_permutation",
    "save_dataset",
    "sinkhorn",
    "__version__",
]
