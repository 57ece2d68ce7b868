"""Generalized intent discovery toolkit (C++ core)."""

from ._core import (
    ConfigError,
    DataError,
    FormatError,
    IoError,
    ValidationError,
    build_split,
    estimate_k,
    evaluate,
    hungarian,
    kmeans,
    load_dataset,
    run_cli,
    silhouette,
    sinkhorn,
    synthesize,
    train,
)

__all__ = [
    "ConfigError",
    "DataError",
    "FormatError",
    "IoError",
    "ValidationError",
    "build_split",
    "estimate_k",
    "evaluate",
    "hungarian",
    "kmeans",
    "load_dataset",
    "run_cli",
    "silhouette",
    "sinkhorn",
    "synthesize",
    "train",
]
