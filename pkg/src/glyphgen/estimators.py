"""scikit-learn style estimators over the pipeline: a fit/transform
preprocessor for raw drawing records and fit/score/sample wrappers
around the three generative models.

Following the scikit-learn density-model convention, ``score_samples``
returns log-likelihoods (the negated per-drawing NLL) so that higher is
better; ``score`` is their mean.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validate import as_drawings, as_records
from .data import PreprocessConfig, preprocess_corpus
from .models import ModelConfig, build_model
from .training import TrainConfig, train


class SplinePreprocessor(BaseEstimator, TransformerMixin):
    """Stateless transformer from raw drawing records to spline records:
    drops sub-threshold strokes and fits minimal cubic splines."""

    def __init__(self, min_length: float = 10.0, residual_threshold: float = 1.5,
                 max_control_points: int = 30, threads: int = 1):
        self.min_length = min_length
        self.residual_threshold = residual_threshold
        self.max_control_points = max_control_points
        self.threads = threads

    def _config(self) -> PreprocessConfig:
        return PreprocessConfig(
            min_length=self.min_length,
            residual_threshold=self.residual_threshold,
            max_control_points=self.max_control_points,
        )

    def fit(self, X, y=None):
        self._config()
        self.n_records_ = len(as_records(X))
        return self

    def transform(self, X):
        check_is_fitted(self)
        processed, _ = preprocess_corpus(as_records(X), self._config(), threads=self.threads)
        return processed


class _GenerativeEstimator(BaseEstimator):
    _kind = ""

    def __init__(self, model_params: dict | None = None, train_params: dict | None = None,
                 seed: int = 0):
        self.model_params = model_params
        self.train_params = train_params
        self.seed = seed

    def _configs(self) -> tuple[ModelConfig, TrainConfig]:
        model_cfg = ModelConfig.from_dict({"kind": self._kind, **(self.model_params or {})})
        train_kwargs = dict(self.train_params or {})
        train_kwargs.setdefault("seed", self.seed)
        return model_cfg, TrainConfig(**train_kwargs)

    def fit(self, X, y=None):
        drawings = as_drawings(X)
        model_cfg, train_cfg = self._configs()
        model = build_model(model_cfg, seed=self.seed)
        checkpoint = None
        for checkpoint in train(model, drawings, train_cfg):
            pass
        self.model_ = model
        self.checkpoint_ = checkpoint
        self.loss_trace_ = list(checkpoint.loss_trace)
        return self

    def score_samples(self, X) -> np.ndarray:
        check_is_fitted(self)
        return np.array([-self.model_.score_drawing(d) for d in as_drawings(X)])

    def score(self, X, y=None) -> float:
        return float(np.mean(self.score_samples(X)))

    def sample(self, n_samples: int = 1, temperature: float = 1.0, random_state=None):
        """Draw (spline drawing, canvas) pairs from the fitted model."""
        check_is_fitted(self)
        rng = np.random.default_rng(random_state)
        return [self.model_.generate(rng, temperature) for _ in range(n_samples)]


class FullNeuroSymbolicGenerator(_GenerativeEstimator):
    """Canvas-conditioned model that renders each stroke before
    predicting the next."""

    _kind = "full_ns"


class HierarchicalLSTMGenerator(_GenerativeEstimator):
    """Character-level LSTM over stroke summaries with per-stroke
    offset decoding."""

    _kind = "hlstm"


class BaselineLSTMGenerator(_GenerativeEstimator):
    """Flat offset/pen-state sequence model."""

    _kind = "baseline"
