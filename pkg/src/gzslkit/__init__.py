"""Generalized zero-shot learning on precomputed feature vectors.

A conditional adversarial generator hallucinates features for classes that
have descriptors but no training data; an embedding model trained with
contrastive and ranking objectives gives those features a space worth
classifying in.  Synthetic benchmark worlds with known ground truth make the
whole pipeline checkable at desk scale.
"""

from .data import (
    FeatureDataset, SemanticTable, SyntheticWorldSpec, load_dataset,
    make_dataset, make_synthetic_world, nearest_mean_top1, per_class_top1,
    save_dataset, true_class_means, world_descriptors,
)
from .errors import (
    DomainError, GzslError, HashMismatch, MagicMismatch, NumericsError,
    SamplerError, ShapeError, SplitViolation, StateError,
)
from .estimator import GzslClassifier
from .gradcheck import FAMILY_NAMES, run_all, run_family
from .neural import Mlp, adam_step, fd_audit, grad_check
from .rng import Stream, stream
from .trainer import (
    EvalReport, NetBundle, SoftmaxClassifier, TrainConfig, evaluate,
    fit_final_classifier, harmonic_mean, load_checkpoint, run_pipeline,
    save_checkpoint, train,
)

__version__ = "0.1.0"

__all__ = [
    "DomainError", "EvalReport", "FAMILY_NAMES", "FeatureDataset",
    "GzslClassifier", "GzslError", "HashMismatch", "MagicMismatch", "Mlp",
    "NetBundle", "NumericsError", "SamplerError", "SemanticTable",
    "ShapeError", "SoftmaxClassifier", "SplitViolation", "StateError",
    "Stream", "SyntheticWorldSpec", "TrainConfig", "adam_step", "evaluate",
    "fd_audit", "fit_final_classifier", "grad_check", "harmonic_mean",
    "load_checkpoint", "load_dataset", "make_dataset", "make_synthetic_world",
    "nearest_mean_top1", "per_class_top1", "run_all", "run_family",
    "run_pipeline", "save_checkpoint", "save_dataset", "stream", "train",
    "true_class_means", "world_descriptors",
]
