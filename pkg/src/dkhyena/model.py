"""End-to-end multimodal intent classifier.

Token embeddings (with a prepended CLS position) run through the fusion block
at the input stage, then a small pre-norm transformer encoder, and a linear
head over the CLS vector. Variant dispatch covers the ablations: mean-pooled
context instead of attention, attended context fed straight to the long
convolution, no long convolution, and a text-only bypass.

Token id 0 is reserved for padding (its embedding row is zero and never
receives gradient); id 1 is the CLS token.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .data import Batch
from .errors import SequenceTooLongError, ShapeMismatchError, TokenOutOfRangeError
from .fusion import (
    VARIANTS,
    FusionConfig,
    FusionParams,
    FusionTrace,
    align_to_text,
    attention_core,
    fuse,
    fusion_param_shapes,
)
from .rng import Rng, child_seed
from .tensor import (
    Tensor,
    add,
    expand_leading,
    gather_rows,
    gelu,
    layer_norm,
    linear,
    matmul,
    mul,
    narrow,
    reshape,
)

PAD_ID = 0
CLS_ID = 1


@dataclass
class ModelConfig:
    vocab_size: int
    max_len: int
    d_text: int = 16
    d_audio: int = 8
    d_visual: int = 8
    n_heads: int = 2
    k_s: int = 3
    n_encoder_layers: int = 2
    ffn_mult: int = 4
    n_classes: int = 2
    variant: str = "full"
    dropout: float = 0.1
    seed: int = 0
    kernel_mlp_hidden: int = 0  # 0 means d_text
    long_filter_len: int = 0  # 0 means max_len
    eps: float = 1e-5

    def validate(self) -> "ModelConfig":
        if self.vocab_size < 2:
            raise ValueError("vocab_size must cover PAD and CLS ids")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.n_encoder_layers < 1:
            raise ValueError("n_encoder_layers must be >= 1")
        if self.ffn_mult < 1:
            raise ValueError("ffn_mult must be >= 1")
        if self.long_filter_len > self.max_len:
            raise ValueError("long_filter_len cannot exceed max_len")
        self.fusion_config().validate()
        return self

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(
            d_text=self.d_text,
            d_audio=self.d_audio,
            d_visual=self.d_visual,
            k_s=self.k_s,
            n_heads=self.n_heads,
            kernel_mlp_hidden=self.kernel_mlp_hidden,
            long_filter_len=self.long_filter_len or self.max_len,
            eps=self.eps,
        )


def encoder_layer_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, m = cfg.d_text, cfg.ffn_mult
    return {
        "q_w": (d, d), "q_b": (d,),
        "k_w": (d, d),
        "v_w": (d, d), "v_b": (d,),
        "o_w": (d, d), "o_b": (d,),
        "ln1_gamma": (d,), "ln1_beta": (d,),
        "ln2_gamma": (d,), "ln2_beta": (d,),
        "ffn_w1": (d, m * d), "ffn_b1": (m * d,),
        "ffn_w2": (m * d, d), "ffn_b2": (d,),
    }


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Every learnable tensor's (dotted name, shape), in canonical order."""
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("token_emb", (cfg.vocab_size, cfg.d_text)),
        ("pos_emb", (cfg.max_len, cfg.d_text)),
    ]
    for name, shape in fusion_param_shapes(cfg.fusion_config()).items():
        shapes.append((f"fusion.{name}", shape))
    for i in range(cfg.n_encoder_layers):
        for name, shape in encoder_layer_shapes(cfg).items():
            shapes.append((f"enc{i}.{name}", shape))
    shapes.append(("head_w", (cfg.d_text, cfg.n_classes)))
    shapes.append(("head_b", (cfg.n_classes,)))
    return shapes


def count_params(cfg: ModelConfig) -> int:
    """Exact learnable scalar count, deterministic in the config."""
    return int(sum(np.prod(shape) for _, shape in param_shapes(cfg)))


@dataclass
class EncoderLayerParams:
    q_w: Tensor
    q_b: Tensor
    k_w: Tensor
    v_w: Tensor
    v_b: Tensor
    o_w: Tensor
    o_b: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor

    def named_parameters(self):
        for f in fields(self):
            yield f.name, getattr(self, f.name)


@dataclass
class ModelParams:
    token_emb: Tensor
    pos_emb: Tensor
    fusion: FusionParams
    layers: list[EncoderLayerParams] = field(default_factory=list)
    head_w: Tensor = None
    head_b: Tensor = None

    def named_parameters(self):
        yield "token_emb", self.token_emb
        yield "pos_emb", self.pos_emb
        for name, t in self.fusion.named_parameters():
            yield f"fusion.{name}", t
        for i, layer in enumerate(self.layers):
            for name, t in layer.named_parameters():
                yield f"enc{i}.{name}", t
        yield "head_w", self.head_w
        yield "head_b", self.head_b

    @classmethod
    def init(cls, cfg: ModelConfig, rng: Rng | None = None) -> "ModelParams":
        cfg.validate()
        rng = rng or Rng(cfg.seed)
        d = cfg.d_text
        token_emb = rng.normal_array((cfg.vocab_size, d), std=0.5)
        token_emb[PAD_ID] = 0.0  # pad row stays zero forever
        pos_emb = rng.normal_array((cfg.max_len, d), std=0.1)
        fusion = FusionParams.init(cfg.fusion_config(), rng)
        layers = []
        for _ in range(cfg.n_encoder_layers):
            vals = {}
            for name, shape in encoder_layer_shapes(cfg).items():
                if name.endswith("_gamma"):
                    vals[name] = np.ones(shape)
                elif name.endswith("_b") or name.endswith("_beta"):
                    vals[name] = np.zeros(shape)
                else:
                    vals[name] = rng.normal_array(shape, std=1.0 / np.sqrt(shape[0]))
            layers.append(EncoderLayerParams(
                **{k: Tensor(v, requires_grad=True) for k, v in vals.items()}))
        # zero head: uniform logits at step 0, loss starts at ln(n_classes)
        head_w = Tensor(np.zeros((d, cfg.n_classes)), requires_grad=True)
        head_b = Tensor(np.zeros(cfg.n_classes), requires_grad=True)
        return cls(token_emb=Tensor(token_emb, requires_grad=True),
                   pos_emb=Tensor(pos_emb, requires_grad=True),
                   fusion=fusion, layers=layers, head_w=head_w, head_b=head_b)

    @classmethod
    def from_arrays(cls, cfg: ModelConfig,
                    arrays: dict[str, np.ndarray]) -> "ModelParams":
        """Rebuild the parameter tree from a flat name -> array mapping."""
        def t(name):
            return Tensor(arrays[name], requires_grad=True)

        fusion = FusionParams(**{
            name: t(f"fusion.{name}")
            for name in fusion_param_shapes(cfg.fusion_config())})
        layers = [
            EncoderLayerParams(**{
                name: t(f"enc{i}.{name}")
                for name in encoder_layer_shapes(cfg)})
            for i in range(cfg.n_encoder_layers)
        ]
        return cls(token_emb=t("token_emb"), pos_emb=t("pos_emb"),
                   fusion=fusion, layers=layers,
                   head_w=t("head_w"), head_b=t("head_b"))


def encoder_block(x: Tensor, lp: EncoderLayerParams, n_heads: int,
                  valid: np.ndarray, eps: float,
                  attn_dropout: np.ndarray | None = None,
                  ffn_dropout: np.ndarray | None = None) -> Tensor:
    """Pre-norm transformer layer: x + SelfAttn(LN(x)), then + FFN(LN(.))."""
    h = layer_norm(x, lp.ln1_gamma, lp.ln1_beta, eps)
    q = linear(h, lp.q_w, lp.q_b)
    k = matmul(h, lp.k_w)
    v = linear(h, lp.v_w, lp.v_b)
    ctx = attention_core(q, k, v, n_heads, valid, attn_dropout)
    x = add(x, linear(ctx, lp.o_w, lp.o_b))
    h2 = layer_norm(x, lp.ln2_gamma, lp.ln2_beta, eps)
    f = linear(gelu(linear(h2, lp.ffn_w1, lp.ffn_b1)), lp.ffn_w2, lp.ffn_b2)
    if ffn_dropout is not None:
        f = mul(f, Tensor(ffn_dropout))
    return add(x, f)


class Model:
    """Config + parameters + forward pass."""

    def __init__(self, config: ModelConfig, params: ModelParams | None = None):
        self.config = config.validate()
        self.params = params if params is not None else ModelParams.init(config)

    def embed(self, tokens: np.ndarray) -> Tensor:
        """Token ids [L] or [B, L] -> embeddings [.., L+1, D] with CLS at 0."""
        tokens = np.asarray(tokens)
        squeeze = tokens.ndim == 1
        if squeeze:
            tokens = tokens[None, :]
        b, length = tokens.shape
        if length < 1:
            raise SequenceTooLongError("empty token sequence")
        if length + 1 > self.config.max_len:
            raise SequenceTooLongError(
                f"sequence of {length} tokens plus CLS exceeds max_len "
                f"{self.config.max_len}")
        if tokens.min() < 0 or tokens.max() >= self.config.vocab_size:
            raise TokenOutOfRangeError(
                f"token ids must lie in [0, {self.config.vocab_size})")
        ids = np.concatenate([np.full((b, 1), CLS_ID, dtype=tokens.dtype), tokens],
                             axis=1)
        emb = gather_rows(self.params.token_emb, ids)
        pos = expand_leading(narrow(self.params.pos_emb, 0, 0, length + 1), b)
        out = add(emb, pos)
        return reshape(out, out.shape[1:]) if squeeze else out

    def _aligned_context(self, batch: Batch) -> tuple[Tensor, Tensor]:
        """Per-sample band-mean alignment to the token grid, CLS row = mean.

        Alignment is a pure function of each sample, so when the batch carries
        its originals the result is memoized on the sample object.
        """
        b, length = batch.tokens.shape
        audio = np.zeros((b, length + 1, self.config.d_audio))
        visual = np.zeros((b, length + 1, self.config.d_visual))
        for i in range(b):
            sample = batch.samples[i] if batch.samples is not None else None
            cached = getattr(sample, "_aligned_ctx", None) if sample else None
            if cached is None:
                n_tok = int(batch.text_mask[i].sum())
                a = align_to_text(batch.audio[i], n_tok, batch.audio_mask[i])
                v = align_to_text(batch.visual[i], n_tok, batch.visual_mask[i])
                cached = (a, v)
                if sample is not None:
                    sample._aligned_ctx = cached
            a, v = cached
            n_tok = a.shape[0]
            audio[i, 0] = a.mean(axis=0)
            audio[i, 1:n_tok + 1] = a
            visual[i, 0] = v.mean(axis=0)
            visual[i, 1:n_tok + 1] = v
        return Tensor(audio), Tensor(visual)

    def _dropout_masks(self, b, length, step_rng):
        cfg = self.config
        if step_rng is None or cfg.dropout == 0.0:
            return [(None, None)] * cfg.n_encoder_layers
        p = cfg.dropout
        masks = []
        for _ in range(cfg.n_encoder_layers):
            attn = (step_rng.random((b, cfg.n_heads, length, length)) >= p) / (1 - p)
            ffn = (step_rng.random((b, length, cfg.d_text)) >= p) / (1 - p)
            masks.append((attn, ffn))
        return masks

    def forward(self, batch: Batch, train: bool = False,
                step_rng: np.random.Generator | None = None
                ) -> tuple[Tensor, FusionTrace]:
        """Batch -> (logits [B, n_classes], fusion trace).

        Dropout applies only when train=True and a step generator is given;
        evaluation is always deterministic.
        """
        cfg = self.config
        if batch.audio.shape[-1] != cfg.d_audio or batch.visual.shape[-1] != cfg.d_visual:
            raise ShapeMismatchError(
                f"batch feature widths ({batch.audio.shape[-1]}, "
                f"{batch.visual.shape[-1]}) do not match config "
                f"({cfg.d_audio}, {cfg.d_visual})")
        f_t = self.embed(batch.tokens)
        b, length = batch.tokens.shape
        valid = np.concatenate(
            [np.ones((b, 1), dtype=bool), batch.text_mask], axis=1)
        audio, visual = self._aligned_context(batch)
        f_final, trace = fuse(f_t, audio, visual, self.params.fusion,
                              cfg.fusion_config(), valid, cfg.variant)
        x = f_final
        masks = self._dropout_masks(b, length + 1, step_rng if train else None)
        for lp, (attn_m, ffn_m) in zip(self.params.layers, masks):
            x = encoder_block(x, lp, cfg.n_heads, valid, cfg.eps, attn_m, ffn_m)
        cls = reshape(narrow(x, 1, 0, 1), (b, cfg.d_text))
        logits = linear(cls, self.params.head_w, self.params.head_b)
        return logits, trace

    def dropout_rng(self, step: int) -> np.random.Generator:
        """Deterministic per-step dropout stream (seed, step) -> PCG64."""
        return np.random.Generator(np.random.PCG64(child_seed(self.config.seed, step)))

    def count_params(self) -> int:
        return count_params(self.config)

    def validate_params(self) -> None:
        for name, t in self.params.named_parameters():
            t.validate(name)
