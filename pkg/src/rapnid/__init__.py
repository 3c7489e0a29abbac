"""Prototype-based representation learning for discovering new intents.

Public entry points are re-exported here; see the submodules for details.
"""
from .clustering import ClusterAssignment, estimate_k, hungarian, kmeans
from .config import ConfigError, TrainConfig
from .dataset import Dataset, DatasetError, Sample, TaskSpec, load_jsonl, synth_mixture, write_jsonl
from .encoder import ClassifierHead, EncoderHead, backward, embed, forward
from .estimator import RAPClusterer
from .metrics import MetricsReport, acc, ari, evaluate, nmi
from .prototypes import PrototypeSet, ema_update, generate, within_between_stats
from .trainer import RAPModel, infer, train

__version__ = "0.1.0"

__all__ = [
    "ClassifierHead", "ClusterAssignment", "ConfigError", "Dataset", "DatasetError",
    "EncoderHead", "MetricsReport", "PrototypeSet", "RAPClusterer", "RAPModel", "Sample",
    "TaskSpec", "TrainConfig", "acc", "ari", "backward", "ema_update", "embed", "estimate_k",
    "evaluate", "forward", "generate", "hungarian", "infer", "kmeans", "load_jsonl", "nmi",
    "synth_mixture", "train", "within_between_stats", "write_jsonl",
]
