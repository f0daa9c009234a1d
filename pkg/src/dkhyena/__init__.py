"""Multimodal intent classification via dynamic per-token convolution kernels.

Non-verbal feature streams (audio, visual) generate per-token short
convolution kernels that modulate textual feature extraction inside a
Hyena-style operator (short conv, gating, FFT long conv), ahead of a small
transformer encoder and classification head. Includes a from-scratch f64
autodiff tape, synthetic multimodal benchmarks, training/metrics harnesses,
and a scikit-learn style estimator facade.
"""

from .data import Batch, MultimodalSample, SynthSpec, generate_modality_flip, \
    generate_oos, load_jsonl, pad_and_batch, save_jsonl
from .errors import DkhError
from .estimator import MultimodalIntentClassifier
from .fusion import FusionConfig, FusionParams, FusionTrace, fuse
from .gradcheck import finite_difference_check
from .metrics import MetricsReport, evaluate_predictions
from .model import Model, ModelConfig, ModelParams, count_params
from .tensor import Graph, Tensor
from .train import Adam, TrainConfig, cross_entropy, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "Batch",
    "DkhError",
    "FusionConfig",
    "FusionParams",
    "FusionTrace",
    "Graph",
    "MetricsReport",
    "Model",
    "ModelConfig",
    "ModelParams",
    "MultimodalIntentClassifier",
    "MultimodalSample",
    "SynthSpec",
    "Tensor",
    "TrainConfig",
    "count_params",
    "cross_entropy",
    "evaluate",
    "evaluate_predictions",
    "finite_difference_check",
    "fuse",
    "generate_modality_flip",
    "generate_oos",
    "load_jsonl",
    "pad_and_batch",
    "save_jsonl",
    "train",
]
