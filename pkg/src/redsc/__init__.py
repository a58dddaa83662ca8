"""Residual encoder-decoder subspace clustering.

A desk-scale clustering system built on a minimal reverse-mode autodiff
engine: a strided convolutional encoder, a shared self-expressive layer
applied to every latent level, a symmetric deconvolutional decoder with
skip additions, and a spectral-clustering back end with ERR/NMI/purity
evaluation.

The high-level entry points are the two scikit-learn style estimators,
:class:`ResidualSubspaceClustering` and
:class:`LeastSquaresSubspaceClustering`; the underlying network, trainer,
data, and clustering primitives are importable from the submodules and
re-exported here.
"""

__version__ = "0.1.0"

from .autodiff import ConvSpec, Value, backward, constant, parameter
from .baselines import RidgeProblem, lsr_baseline_cluster, ridge_closed_form
from .checkpoint import load_checkpoint, save_checkpoint
from .cluster import (
    ClusterResult,
    build_affinity,
    cluster_coefficients,
    clustering_error,
    nmi,
    purity,
    spectral_cluster,
)
from .data import (
    Dataset,
    box_downsample,
    load_dataset_npz,
    load_idx,
    load_image_dir,
    save_dataset_npz,
    subset_select,
    synth_subspaces,
)
from .errors import ConfigurationError, DivergenceError, FormatError, RedscError
from .estimators import LeastSquaresSubspaceClustering, ResidualSubspaceClustering
from .gradcheck import gradcheck, standard_cases
from .model import (
    Architecture,
    ModelParams,
    count_parameters,
    forward_finetune,
    forward_pretrain,
    init_params,
    loss_global,
)
from .train import Adam, LossHistory, TrainConfig, finetune, pretrain

__all__ = [
    "Adam",
    "Architecture",
    "ClusterResult",
    "ConfigurationError",
    "ConvSpec",
    "Dataset",
    "DivergenceError",
    "FormatError",
    "LeastSquaresSubspaceClustering",
    "LossHistory",
    "ModelParams",
    "RedscError",
    "ResidualSubspaceClustering",
    "RidgeProblem",
    "TrainConfig",
    "Value",
    "backward",
    "box_downsample",
    "build_affinity",
    "cluster_coefficients",
    "clustering_error",
    "constant",
    "count_parameters",
    "finetune",
    "forward_finetune",
    "forward_pretrain",
    "gradcheck",
    "init_params",
    "load_checkpoint",
    "load_dataset_npz",
    "load_idx",
    "load_image_dir",
    "loss_global",
    "lsr_baseline_cluster",
    "nmi",
    "parameter",
    "pretrain",
    "purity",
    "ridge_closed_form",
    "save_checkpoint",
    "save_dataset_npz",
    "spectral_cluster",
    "standard_cases",
    "subset_select",
    "synth_subspaces",
    "__version__",
]
