"""Gaussian-mixture variational autoencoder for unsupervised clustering."""

from .data import Dataset, binarize, gen_arcs, load_mnist_idx
from .errors import (
    BadMagic,
    ConfigError,
    DimensionMismatch,
    DomainError,
    NumericalError,
    ShapeError,
    TruncatedFile,
)
from .model import Architecture, ElboBreakdown, GmvaeModel, cluster_assign, elbo, generate
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "BadMagic",
    "ConfigError",
    "Dataset",
    "DimensionMismatch",
    "DomainError",
    "ElboBreakdown",
    "GmvaeModel",
    "NumericalError",
    "ShapeError",
    "TrainConfig",
    "TruncatedFile",
    "binarize",
    "cluster_assign",
    "elbo",
    "gen_arcs",
    "generate",
    "load_mnist_idx",
    "train",
]
