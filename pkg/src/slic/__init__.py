"""Clustering-driven self-supervised triplet metric learning for video features."""

from .clustering import Partition, PartitionHierarchy, finch, kmeans, spherical_kmeans
from .core import DataError, DomainError, NumericalError, UsageError, rng_stream
from .data import Dataset, SynthConfig, generate_synthetic, load_dataset, save_dataset
from .harness import TrainConfig, evaluate_retrieval, train
from .metrics import nmi, recall_at_k

__version__ = "0.1.0"

__all__ = [
    "DataError", "Dataset", "DomainError", "NumericalError", "Partition", "PartitionHierarchy",
    "SynthConfig", "TrainConfig", "UsageError", "evaluate_retrieval", "finch", "generate_synthetic",
    "kmeans", "load_dataset", "nmi", "recall_at_k", "rng_stream", "save_dataset",
    "spherical_kmeans", "train",
]
