"""Facial dynamics interpreter network on a small numpy autodiff engine."""

__version__ = "0.1.0"

from .config import ModelConfig, RunConfig, TrainConfig, config_digest
from .data import FeatureMapSequence, SyntheticSpec, generate, read_dataset, write_dataset
from .interpretation import perturb_swap, perturb_zero, rank_relations, subset_importance
from .model import InterpreterNetwork
from .regions import RegionSpec, enumerate_pairs, grid_spec
from .training import cross_validate, evaluate, kfold, train

__all__ = [
    "__version__", "ModelConfig", "RunConfig", "TrainConfig", "config_digest",
    "FeatureMapSequence", "SyntheticSpec", "generate", "read_dataset", "write_dataset",
    "perturb_swap", "perturb_zero", "rank_relations", "subset_importance",
    "InterpreterNetwork", "RegionSpec", "enumerate_pairs", "grid_spec",
    "cross_validate", "evaluate", "kfold", "train",
]
