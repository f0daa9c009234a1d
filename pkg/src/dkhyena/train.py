"""Training loop: stable cross-entropy, Adam with decoupled weight decay,
global-norm gradient clipping, per-epoch shuffling, and deterministic logs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import MultimodalSample, pad_and_batch
from .errors import EmptyDatasetError, LabelOutOfRangeError, NonFiniteError
from .metrics import MetricsReport, confusion_matrix, predictions_from_logits, \
    report_from_confusion
from .model import Model
from .rng import Rng, child_seed
from .tensor import Graph, Tensor, apply_op


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 32
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    grad_clip_norm: float | None = 1.0
    shuffle_seed: int = 0
    n_runs: int = 5
    pad_multiple: int = 1
    holdout_fraction: float = 0.2

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must be in (0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.grad_clip_norm is not None and not self.grad_clip_norm > 0:
            raise ValueError("grad_clip_norm must be > 0 or None")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must be in [0, 1)")
        return self


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood with log-sum-exp stabilization."""
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"labels shape {labels.shape} != ({b},)")
    if labels.min() < 0 or labels.max() >= c:
        raise LabelOutOfRangeError(f"labels must lie in [0, {c})")
    z = logits.data
    if not np.all(np.isfinite(z)):
        raise NonFiniteError("logits contain non-finite values")
    m = z.max(axis=-1, keepdims=True)
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=-1)) + m[:, 0]
    loss = float((lse - z[np.arange(b), labels]).mean())
    softmax = np.exp(shifted)
    softmax /= softmax.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        grad = softmax.copy()
        grad[np.arange(b), labels] -= 1.0
        return (grad * (float(g) / b),)

    return apply_op("cross_entropy", (logits,), np.asarray(loss), backward_fn)


# parameters that decay multiplicatively: rank >= 2 weights, excluding
# embedding-like tables (keeps the reserved pad row untouched forever)
_NO_DECAY = ("token_emb", "pos_emb", "fusion.long_filter")


class Adam:
    """Adam with bias correction and decoupled multiplicative weight decay."""

    def __init__(self, named_params, config: TrainConfig):
        self.config = config
        self.names = []
        self.params = []
        for name, p in named_params:
            self.names.append(name)
            self.params.append(p)
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0
        self.decay_mask = [
            p.data.ndim >= 2 and name not in _NO_DECAY
            for name, p in zip(self.names, self.params)
        ]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def grad_global_norm(self) -> float:
        total = 0.0
        for p in self.params:
            if p.grad is not None:
                total += float((p.grad * p.grad).sum())
        return float(np.sqrt(total))

    def clip_gradients(self, max_norm: float) -> float:
        norm = self.grad_global_norm()
        if norm > max_norm:
            factor = max_norm / norm
            for p in self.params:
                if p.grad is not None:
                    p.grad *= factor
        return norm

    def step(self) -> None:
        cfg = self.config
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for p, m, v, decays in zip(self.params, self.m, self.v, self.decay_mask):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if cfg.weight_decay > 0 and decays:
                p.data *= 1.0 - cfg.learning_rate * cfg.weight_decay
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p.data -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)


def predict_logits(model: Model, samples: list[MultimodalSample],
                   batch_size: int = 64) -> np.ndarray:
    """Deterministic eval-mode logits for a sample list, original order."""
    if not samples:
        raise EmptyDatasetError("no samples")
    rows = []
    for batch in pad_and_batch(samples, batch_size):
        logits, _ = model.forward(batch, train=False)
        rows.append(logits.data)
    return np.concatenate(rows, axis=0)


def evaluate(model: Model, samples: list[MultimodalSample],
             batch_size: int = 64,
             oos_index: int | None = None) -> MetricsReport:
    """Confusion-matrix metrics of argmax predictions over a dataset."""
    logits = predict_logits(model, samples, batch_size)
    preds = predictions_from_logits(logits)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    conf = confusion_matrix(labels, preds, model.config.n_classes)
    return report_from_confusion(conf, oos_index)


def train(model: Model, samples: list[MultimodalSample], config: TrainConfig,
          eval_samples: list[MultimodalSample] | None = None,
          oos_index: int | None = None,
          log_path=None) -> list[dict]:
    """Train in place; returns (and optionally writes) one log entry per epoch.

    Per-epoch shuffles derive from shuffle_seed, dropout streams from the
    model seed and step index, so the whole run is a pure function of its
    seeds and data.
    """
    config.validate()
    if not samples:
        raise EmptyDatasetError("no training samples")
    adam = Adam(model.params.named_parameters(), config)
    use_dropout = model.config.dropout > 0.0
    log: list[dict] = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = Rng(child_seed(config.shuffle_seed, epoch)).permutation(len(samples))
        shuffled = [samples[i] for i in order]
        losses = []
        for batch in pad_and_batch(shuffled, config.batch_size, config.pad_multiple):
            adam.zero_grad()
            with Graph() as graph:
                logits, _ = model.forward(
                    batch, train=True,
                    step_rng=model.dropout_rng(step) if use_dropout else None)
                loss = cross_entropy(logits, batch.labels)
                graph.backward(loss)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise NonFiniteError(f"loss diverged at epoch {epoch}")
            if config.grad_clip_norm is not None:
                adam.clip_gradients(config.grad_clip_norm)
            adam.step()
            losses.append(loss_val)
            step += 1
        entry = {"epoch": epoch, "mean_loss": float(np.mean(losses))}
        if eval_samples:
            entry["eval"] = evaluate(model, eval_samples,
                                     oos_index=oos_index).as_dict()
        log.append(entry)
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            for entry in log:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return log
