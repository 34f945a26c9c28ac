"""Evolutionary architecture search for knowledge-tracing Transformers."""

__version__ = "0.1.0"

from .architecture import KTTransformer, ModelConfig, SearchableTransformer, build, count_parameters
from .dataset import (
    FEATURES,
    FeatureVocabulary,
    InteractionRecord,
    WindowSet,
    build_windows,
    generate_synthetic,
    ingest,
    split,
)
from .estimators import KTTransformerClassifier, SupernetSearch
from .evolution import AdditiveOracle, SearchResult, reduce_space, search
from .genome import Genome, SearchSpace, decode, encode, sample, space_size
from .metrics import EvalBuffer, acc, auc, rmse
from .preprocessing import FeatureScaler
from .presets import resolve as resolve_preset
from .supernet import Supernet, SupernetEvaluator, sandwich_step, train_supernet

__all__ = [
    "AdditiveOracle",
    "EvalBuffer",
    "FEATURES",
    "FeatureScaler",
    "FeatureVocabulary",
    "Genome",
    "InteractionRecord",
    "KTTransformer",
    "KTTransformerClassifier",
    "ModelConfig",
    "SearchResult",
    "SearchSpace",
    "SearchableTransformer",
    "Supernet",
    "SupernetEvaluator",
    "SupernetSearch",
    "acc",
    "auc",
    "build",
    "build_windows",
    "count_parameters",
    "decode",
    "encode",
    "generate_synthetic",
    "ingest",
    "reduce_space",
    "resolve_preset",
    "rmse",
    "sample",
    "sandwich_step",
    "search",
    "space_size",
    "split",
    "train_supernet",
]
