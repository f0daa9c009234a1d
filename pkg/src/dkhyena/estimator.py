"""scikit-learn style estimator facade over the multimodal classifier.

X is a list of MultimodalSample; labels default to the samples' own but can
be overridden with y. Hyperparameters follow sklearn conventions (stored
verbatim in __init__, validated in fit), so the estimator composes with
clone, get_params/set_params, and model-selection utilities.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .data import MultimodalSample, validate_samples
from .metrics import MetricsReport, predictions_from_logits
from .model import Model, ModelConfig
from .rng import child_seed
from .train import TrainConfig, evaluate, predict_logits, train


class MultimodalIntentClassifier(BaseEstimator, ClassifierMixin):
    """Intent classifier whose audio-visual stream modulates text processing.

    Parameters default to a desk-scale model; vocab_size, n_classes, max_len,
    d_audio and d_visual are inferred from the training data when left at 0.
    """

    def __init__(self, d_text=16, d_audio=0, d_visual=0, n_heads=2, k_s=3,
                 n_encoder_layers=2, ffn_mult=2, variant="full", dropout=0.1,
                 vocab_size=0, n_classes=0, max_len=0, kernel_mlp_hidden=0,
                 long_filter_len=0, epochs=10, batch_size=32,
                 learning_rate=3e-3, weight_decay=0.0, grad_clip_norm=1.0,
                 seed=0):
        self.d_text = d_text
        self.d_audio = d_audio
        self.d_visual = d_visual
        self.n_heads = n_heads
        self.k_s = k_s
        self.n_encoder_layers = n_encoder_layers
        self.ffn_mult = ffn_mult
        self.variant = variant
        self.dropout = dropout
        self.vocab_size = vocab_size
        self.n_classes = n_classes
        self.max_len = max_len
        self.kernel_mlp_hidden = kernel_mlp_hidden
        self.long_filter_len = long_filter_len
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.grad_clip_norm = grad_clip_norm
        self.seed = seed

    def _with_labels(self, X, y):
        if y is None:
            return list(X)
        y = np.asarray(y, dtype=np.int64)
        if len(y) != len(X):
            raise ValueError(f"y has {len(y)} labels for {len(X)} samples")
        return [MultimodalSample(s.tokens, s.audio, s.visual, int(label), s.is_oos)
                for s, label in zip(X, y)]

    def fit(self, X, y=None):
        samples = self._with_labels(X, y)
        d_audio, d_visual = validate_samples(
            samples, self.d_audio or None, self.d_visual or None)
        labels = [s.label for s in samples]
        if min(labels) < 0:
            raise ValueError("labels must be non-negative")
        n_classes = self.n_classes or max(labels) + 1
        vocab_size = self.vocab_size or max(max(s.tokens) for s in samples) + 1
        max_len = self.max_len or max(len(s.tokens) for s in samples) + 1
        config = ModelConfig(
            vocab_size=vocab_size,
            max_len=max_len,
            d_text=self.d_text,
            d_audio=d_audio,
            d_visual=d_visual,
            n_heads=self.n_heads,
            k_s=self.k_s,
            n_encoder_layers=self.n_encoder_layers,
            ffn_mult=self.ffn_mult,
            n_classes=n_classes,
            variant=self.variant,
            dropout=self.dropout,
            seed=child_seed(self.seed, 0),
            kernel_mlp_hidden=self.kernel_mlp_hidden,
            long_filter_len=self.long_filter_len,
        ).validate()
        train_config = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            grad_clip_norm=self.grad_clip_norm,
            shuffle_seed=child_seed(self.seed, 1),
        ).validate()
        self.model_ = Model(config)
        self.train_log_ = train(self.model_, samples, train_config)
        self.classes_ = np.arange(n_classes)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("estimator is not fitted; call fit first")

    def decision_function(self, X) -> np.ndarray:
        self._check_fitted()
        validate_samples(X, self.model_.config.d_audio, self.model_.config.d_visual)
        return predict_logits(self.model_, list(X), self.batch_size)

    def predict_proba(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        z = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return predictions_from_logits(self.decision_function(X))

    def score(self, X, y=None, sample_weight=None) -> float:
        if y is None:
            y = [s.label for s in X]
        return super().score(X, y, sample_weight)

    def evaluate(self, X, oos_index: int | None = None) -> MetricsReport:
        """Full confusion-matrix report (macro/weighted, plus OOS scores)."""
        self._check_fitted()
        return evaluate(self.model_, list(X), self.batch_size, oos_index)
