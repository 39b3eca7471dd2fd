"""Selective inference for features selected after optimal-transport domain adaptation."""

from .baselines import bonferroni_p, data_split_p, naive_p
from .datasets import (
    DataFormatError,
    SyntheticConfig,
    TwoDomainDataset,
    generate_synthetic,
    load_csv,
)
from .inference import FeatureInference, NumericalDegeneracyError, sfs_da, sfs_da_oc
from .sparse_regression import PenaltyConfig

__all__ = [
    "DataFormatError",
    "FeatureInference",
    "NumericalDegeneracyError",
    "PenaltyConfig",
    "SyntheticConfig",
    "TwoDomainDataset",
    "bonferroni_p",
    "data_split_p",
    "generate_synthetic",
    "load_csv",
    "naive_p",
    "sfs_da",
    "sfs_da_oc",
]
__version__ = "0.1.0"
