"""Multi-task gradient combination by orthogonal decomposition, with comparators and a benchmark harness."""

from .combiners import (
    COMBINERS,
    CombinerConfig,
    GradientBundle,
    GroupedBundle,
    MaskRule,
    cagrad_combine,
    combine,
    gdod_combine,
    group_gradients,
    mgda_combine,
    pcgrad_combine,
    sum_combine,
    weighted_gdod_combine,
)
from .data import MultiTaskDataset, SyntheticSpec, generate_synthetic, load_csv, split
from .decomposition import BasisMethod, OrthogonalBasis, build_basis, project, reconstruct
from .errors import ConfigError, InvalidInputError, SchemaError, UndefinedMetricError
from .metrics import auc, evaluate, logloss
from .model import LossWeights, OptimizerState, SharedBottomModel, apply_update, train_step

__version__ = "0.1.0"

__all__ = [
    "COMBINERS", "CombinerConfig", "GradientBundle", "GroupedBundle", "MaskRule",
    "cagrad_combine", "combine", "gdod_combine", "group_gradients", "mgda_combine",
    "pcgrad_combine", "sum_combine", "weighted_gdod_combine",
    "MultiTaskDataset", "SyntheticSpec", "generate_synthetic", "load_csv", "split",
    "BasisMethod", "OrthogonalBasis", "build_basis", "project", "reconstruct",
    "ConfigError", "InvalidInputError", "SchemaError", "UndefinedMetricError",
    "auc", "evaluate", "logloss",
    "LossWeights", "OptimizerState", "SharedBottomModel", "apply_update", "train_step",
]
