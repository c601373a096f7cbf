"""Intrinsic normalization for manifold-valued feature grids."""

from .config import DEFAULTS, config_hash, load_config, parse_config
from .errors import (
    ConfigError,
    ConvergenceError,
    CutLocusError,
    FormatError,
    GeometryError,
    NumericalError,
)
from .geometry import (
    Manifold,
    ManifoldKind,
    ManifoldPoint,
    SpdAffine,
    SpdLogEuclidean,
    SpecialOrthogonal,
    Sphere,
    is_lie_group,
    make_manifold,
)
from .normalization import (
    Algorithm,
    FeatureGrid,
    NormKind,
    NormMode,
    NormState,
    homog_norm_infer,
    homog_norm_train,
    lie_norm_infer,
    lie_norm_train,
    partition_indices,
)
from .stats import (
    HomogGaussian,
    LieGaussian,
    WeightVector,
    incremental_wfm,
    oracle_fm,
    sample_gaussian,
    weighted_variance,
)
from .train import evaluate, run_experiment, train_model

__version__ = "0.1.0"

__all__ = [
    "DEFAULTS",
    "config_hash",
    "load_config",
    "parse_config",
    "ConfigError",
    "ConvergenceError",
    "CutLocusError",
    "FormatError",
    "GeometryError",
    "NumericalError",
    "Manifold",
    "ManifoldKind",
    "ManifoldPoint",
    "SpdAffine",
    "SpdLogEuclidean",
    "SpecialOrthogonal",
    "Sphere",
    "is_lie_group",
    "make_manifold",
    "Algorithm",
    "FeatureGrid",
    "NormKind",
    "NormMode",
    "NormState",
    "homog_norm_infer",
    "homog_norm_train",
    "lie_norm_infer",
    "lie_norm_train",
    "partition_indices",
    "HomogGaussian",
    "LieGaussian",
    "WeightVector",
    "incremental_wfm",
    "oracle_fm",
    "sample_gaussian",
    "weighted_variance",
    "evaluate",
    "run_experiment",
    "train_model",
    "__version__",
]
