"""scikit-learn style front ends: a fixed-genome classifier and the search.

Both take a `WindowSet` as ``X``; targets travel inside it, so ``y`` is
accepted for API compatibility and ignored.
"""

from __future__ import annotations

import logging

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .architecture import KTTransformer, ModelConfig, build, count_parameters
from .dataset import BUCKET_CARDINALITY, CONTINUOUS, FEATURES, FeatureVocabulary, WindowSet
from .evolution import SearchResult, search
from .genome import Genome, SearchSpace
from .metrics import auc as auc_score
from .presets import resolve
from .supernet import Supernet, SupernetEvaluator, SupernetTrainer
from .training import TrainConfig, evaluate_predictions, fit_model, predict_proba
from .validation import check_genome, check_window_set

log = logging.getLogger(__name__)


def infer_cardinalities(X: WindowSet, features=FEATURES) -> dict[str, int]:
    """Smallest table sizes covering the indices present in ``X``."""
    cards = {}
    for name in features:
        if name in CONTINUOUS:
            continue
        seen = int(X.features[name].max()) + 1
        cards[name] = max(seen, BUCKET_CARDINALITY.get(name, 0))
    return cards


class _ModelParams:
    def _config(self, X: WindowSet, fusion: str = "hier") -> ModelConfig:
        features = tuple(self.features)
        if self.vocabulary is not None:
            vocab = self.vocabulary
            if isinstance(vocab, dict):
                vocab = FeatureVocabulary.from_json(vocab)
            cards = {f: vocab.cardinality(f) for f in features if f not in CONTINUOUS}
        else:
            cards = infer_cardinalities(X, features)
        return ModelConfig(
            features=features,
            cardinalities=cards,
            n_blocks=self.n_blocks,
            d_model=self.d_model,
            d_ff=self.d_ff,
            n_heads=self.n_heads,
            window_length=self.window_length or X.window_length,
            dropout=self.dropout,
            fusion=fusion,
            depthwise_conv=self.depthwise_conv,
        )


class KTTransformerClassifier(_ModelParams, ClassifierMixin, BaseEstimator):
    """Train one fixed architecture; predictions are per-position probabilities.

    ``genome`` is a `Genome` or a preset name (see `ktnas.presets`).  With
    ``warm_start`` set to a `Supernet`, shared weights are inherited before
    training.
    """

    def __init__(
        self,
        genome="vanilla",
        searched: Genome | None = None,
        fusion: str | None = None,
        features=FEATURES,
        vocabulary=None,
        n_blocks: int = 4,
        d_model: int = 128,
        d_ff: int = 128,
        n_heads: int = 8,
        window_length: int | None = None,
        dropout: float = 0.1,
        depthwise_conv: bool = False,
        epochs: int = 30,
        lr: float = 1e-3,
        batch_size: int = 128,
        warmup: int = 4000,
        seed: int = 0,
        warm_start=None,
    ):
        self.genome = genome
        self.searched = searched
        self.fusion = fusion
        self.features = features
        self.vocabulary = vocabulary
        self.n_blocks = n_blocks
        self.d_model = d_model
        self.d_ff = d_ff
        self.n_heads = n_heads
        self.window_length = window_length
        self.dropout = dropout
        self.depthwise_conv = depthwise_conv
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.warmup = warmup
        self.seed = seed
        self.warm_start = warm_start

    def _resolve(self) -> tuple[Genome, str]:
        if isinstance(self.genome, str):
            genome, fusion = resolve(self.genome, self.features, self.n_blocks, self.searched)
        else:
            genome, fusion = check_genome(self.genome, len(self.features), self.n_blocks), "hier"
        return genome, self.fusion or fusion

    def fit(self, X: WindowSet, y=None, validation: WindowSet | None = None, checkpoint_dir=None, resume: bool = False):
        check_window_set(X, self.features)
        genome, fusion = self._resolve()
        cfg = self._config(X, fusion)
        check_window_set(X, self.features, cfg.cardinalities)
        torch.manual_seed(self.seed)
        self.model_ = build(genome, cfg, self.warm_start)
        self.genome_ = genome
        self.config_ = cfg
        self.n_parameters_ = count_parameters(genome, cfg)
        train_cfg = TrainConfig(
            epochs=self.epochs, lr=self.lr, batch_size=self.batch_size, warmup=self.warmup, seed=self.seed
        )
        self.history_ = fit_model(self.model_, X, train_cfg, validation, checkpoint_dir, resume)
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X: WindowSet) -> np.ndarray:
        """``(n_windows, L)`` probability of a correct response; padding is NaN."""
        check_is_fitted(self, "model_")
        check_window_set(X, self.features, self.config_.cardinalities)
        self.model_.eval()
        pred = predict_proba(self.model_, X)
        pred[~X.valid_mask] = np.nan
        return pred

    def predict(self, X: WindowSet) -> np.ndarray:
        """Hard 0/1 predictions at valid positions (-1 at padding)."""
        p = self.predict_proba(X)
        out = np.where(p >= 0.5, 1, 0)
        out[~X.valid_mask] = -1
        return out

    def score(self, X: WindowSet, y=None, sample_weight=None) -> float:
        """AUC over valid positions."""
        p = self.predict_proba(X)
        return auc_score(p[X.valid_mask], X.target[X.valid_mask])

    def evaluate(self, X: WindowSet) -> dict[str, float]:
        check_is_fitted(self, "model_")
        self.model_.eval()
        return evaluate_predictions(predict_proba(self.model_, X), X)


class SupernetSearch(_ModelParams, BaseEstimator):
    """Train a weight-sharing supernet, then evolve architectures scored by
    validation AUC under the shared weights."""

    def __init__(
        self,
        features=FEATURES,
        vocabulary=None,
        n_blocks: int = 4,
        d_model: int = 128,
        d_ff: int = 128,
        n_heads: int = 8,
        window_length: int | None = None,
        dropout: float = 0.1,
        depthwise_conv: bool = False,
        epochs: int = 60,
        lr: float = 1e-3,
        batch_size: int = 128,
        warmup: int = 8000,
        pop: int = 20,
        gen: int = 30,
        reduction: bool = True,
        budget: int | None = None,
        eval_batches: int | None = 64,
        seed: int = 0,
    ):
        self.features = features
        self.vocabulary = vocabulary
        self.n_blocks = n_blocks
        self.d_model = d_model
        self.d_ff = d_ff
        self.n_heads = n_heads
        self.window_length = window_length
        self.dropout = dropout
        self.depthwise_conv = depthwise_conv
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.warmup = warmup
        self.pop = pop
        self.gen = gen
        self.reduction = reduction
        self.budget = budget
        self.eval_batches = eval_batches
        self.seed = seed

    def fit_supernet(self, X: WindowSet, checkpoint_dir=None, resume: bool = False) -> "SupernetSearch":
        check_window_set(X, self.features)
        cfg = self._config(X)
        check_window_set(X, self.features, cfg.cardinalities)
        torch.manual_seed(self.seed)
        self.config_ = cfg
        self.supernet_ = Supernet(cfg)
        train_cfg = TrainConfig(
            epochs=self.epochs, lr=self.lr, batch_size=self.batch_size, warmup=self.warmup, seed=self.seed
        )
        trainer = SupernetTrainer(self.supernet_, train_cfg, checkpoint_dir=checkpoint_dir)
        if resume:
            trainer.resume()
        self.supernet_history_ = trainer.fit(X)
        self.step_counters_ = trainer.counters
        return self

    def search(self, validation: WindowSet, on_generation=None) -> SearchResult:
        check_is_fitted(self, "supernet_")
        check_window_set(validation, self.features, self.config_.cardinalities)
        cfg = self.config_
        evaluator = SupernetEvaluator(
            self.supernet_, validation, self.eval_batches, self.batch_size, self.seed
        )
        result = search(
            evaluator,
            SearchSpace.initial(cfg.num_features, cfg.n_blocks),
            pop=self.pop,
            gen=self.gen,
            seed=self.seed,
            budget=self.budget,
            param_count=lambda g: count_parameters(g, cfg),
            reduction=self.reduction,
            on_generation=on_generation,
        )
        self.search_result_ = result
        self.best_genome_ = result.best.genome
        self.best_auc_ = result.best.auc
        self.search_log_ = result.log
        return result

    def fit(self, X: WindowSet, y=None, validation: WindowSet | None = None, checkpoint_dir=None):
        if validation is None:
            raise ValueError("the search scores architectures on a validation WindowSet; pass validation=")
        self.fit_supernet(X, checkpoint_dir)
        self.search(validation)
        return self

    def build_model(self, genome: Genome | None = None, fusion: str = "hier") -> KTTransformer:
        """Stand-alone model inheriting the supernet's weights."""
        check_is_fitted(self, "supernet_")
        genome = genome if genome is not None else self.best_genome_
        cfg = ModelConfig(**{**self.config_.to_json(), "fusion": fusion})
        return build(genome, cfg, self.supernet_)
