"""Multimodal fusion block: audio-visual cues generate per-token convolution
kernels that modulate text features inside a Hyena-style operator.

Pipeline for one sequence of length L with text width D:

1. audio/visual frames, band-mean aligned to the token grid, are projected to
   D each and concatenated into a 2D-wide non-verbal context per token;
2. cross-modal attention (text queries, non-verbal keys/values) plus a
   residual layer norm yields a per-token local context;
3. a two-layer MLP maps each context row to D*K kernel weights, reshaped into
   a [L, D, K] bank of depthwise per-token filters;
4. the text path is projected to 2D and split; the first half is convolved
   with the dynamic kernels (unfold + multiply + sum), gated elementwise by
   the second half, zeroed at padded positions, passed through an FFT long
   convolution (explicit learnable filter, non-causal "same" alignment), and
   projected back to D;
5. a final residual layer norm merges the result with the original text.

All functions accept [L, D] or [B, L, D] inputs; masks mark valid positions.
At initialization the kernel MLP bias encodes the identity (delta) kernel and
the output projection is zero, so the whole block is a no-op at step 0.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import (
    AllKeysMaskedError,
    EmptySourceError,
    ShapeMismatchError,
)
from .rng import Rng
from .tensor import (
    Tensor,
    add,
    concat,
    fft_linear_conv,
    gelu,
    layer_norm,
    linear,
    matmul,
    mul,
    narrow,
    reshape,
    scale,
    softmax_lastdim,
    sum_lastdim,
    transpose,
    unfold1d,
)

VARIANTS = ("full", "no_attention", "no_dynamic_short_conv", "no_long_conv",
            "text_only")


@dataclass
class FusionConfig:
    d_text: int
    d_audio: int
    d_visual: int
    k_s: int = 3
    n_heads: int = 2
    kernel_mlp_hidden: int = 0  # 0 means d_text
    long_filter_len: int = 1
    eps: float = 1e-5

    @property
    def hidden(self) -> int:
        return self.kernel_mlp_hidden or self.d_text

    def validate(self) -> "FusionConfig":
        if self.d_text < 1 or self.d_audio < 1 or self.d_visual < 1:
            raise ValueError("feature dims must be >= 1")
        if self.k_s < 1 or self.k_s % 2 == 0:
            raise ValueError(f"k_s must be odd and >= 1, got {self.k_s}")
        if self.n_heads < 1 or self.d_text % self.n_heads:
            raise ValueError("n_heads must divide d_text")
        if self.long_filter_len < 1:
            raise ValueError("long_filter_len must be >= 1")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")
        return self


def fusion_param_shapes(cfg: FusionConfig) -> dict[str, tuple[int, ...]]:
    d, h = cfg.d_text, cfg.hidden
    return {
        "av_audio_w": (cfg.d_audio, d), "av_audio_b": (d,),
        "av_visual_w": (cfg.d_visual, d), "av_visual_b": (d,),
        # no key bias: softmax is invariant to it, making it dead weight with
        # a structurally zero gradient (which also breaks FD conditioning)
        "attn_q_w": (d, d), "attn_q_b": (d,),
        "attn_k_w": (2 * d, d),
        "attn_v_w": (2 * d, d), "attn_v_b": (d,),
        "attn_o_w": (d, d), "attn_o_b": (d,),
        "ln1_gamma": (d,), "ln1_beta": (d,),
        "ln2_gamma": (d,), "ln2_beta": (d,),
        "kmlp_w1": (d, h), "kmlp_b1": (h,),
        "kmlp_w2": (h, d * cfg.k_s), "kmlp_b2": (d * cfg.k_s,),
        "path_w": (d, 2 * d), "path_b": (2 * d,),
        "long_filter": (cfg.long_filter_len, d),
        "out_w": (d, d), "out_b": (d,),
    }


def identity_kernel_pattern(d: int, k_s: int) -> np.ndarray:
    """Flat [d*k_s] bias whose reshaped kernels are centered deltas."""
    bias = np.zeros(d * k_s)
    bias[np.arange(d) * k_s + (k_s - 1) // 2] = 1.0
    return bias


@dataclass
class FusionParams:
    av_audio_w: Tensor
    av_audio_b: Tensor
    av_visual_w: Tensor
    av_visual_b: Tensor
    attn_q_w: Tensor
    attn_q_b: Tensor
    attn_k_w: Tensor
    attn_v_w: Tensor
    attn_v_b: Tensor
    attn_o_w: Tensor
    attn_o_b: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    kmlp_w1: Tensor
    kmlp_b1: Tensor
    kmlp_w2: Tensor
    kmlp_b2: Tensor
    path_w: Tensor
    path_b: Tensor
    long_filter: Tensor
    out_w: Tensor
    out_b: Tensor

    def named_parameters(self):
        for f in fields(self):
            yield f.name, getattr(self, f.name)

    @classmethod
    def init(cls, cfg: FusionConfig, rng: Rng) -> "FusionParams":
        """Identity-at-init: delta-kernel bias, near-zero kernel weights,
        centered-delta long filter, zero output projection."""
        cfg.validate()
        shapes = fusion_param_shapes(cfg)
        vals: dict[str, np.ndarray] = {}
        for name, shape in shapes.items():
            if name.endswith("_b") or name.endswith("_beta"):
                vals[name] = np.zeros(shape)
            elif name.endswith("_gamma"):
                vals[name] = np.ones(shape)
            else:
                fan_in = shape[0]
                vals[name] = rng.normal_array(shape, std=1.0 / np.sqrt(fan_in))
        vals["kmlp_w2"] = rng.normal_array(shapes["kmlp_w2"], std=1e-4)
        vals["kmlp_b2"] = identity_kernel_pattern(cfg.d_text, cfg.k_s)
        filt = rng.normal_array(shapes["long_filter"], std=1e-4)
        filt[cfg.long_filter_len // 2, :] += 1.0
        vals["long_filter"] = filt
        vals["out_w"] = np.zeros(shapes["out_w"])
        return cls(**{k: Tensor(v, requires_grad=True) for k, v in vals.items()})


def align_to_text(frames: np.ndarray, target_len: int,
                  valid: np.ndarray | None = None) -> np.ndarray:
    """Band-mean resample frames[L_src, D] onto a token grid of target_len.

    Output row i averages the valid frames with indices in
    [floor(i*L_src/target_len), max(floor((i+1)*L_src/target_len), lo+1)).
    Deterministic, parameter-free, order-preserving.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ShapeMismatchError(f"frames must be [L_src, D], got {frames.shape}")
    if valid is not None:
        frames = frames[np.asarray(valid, dtype=bool)]
    l_src = frames.shape[0]
    if l_src == 0:
        raise EmptySourceError("no valid source frames to align")
    if target_len < 1:
        raise ValueError("target_len must be >= 1")
    out = np.empty((target_len, frames.shape[1]))
    for i in range(target_len):
        lo = (i * l_src) // target_len
        hi = max(((i + 1) * l_src) // target_len, lo + 1)
        out[i] = frames[lo:hi].mean(axis=0)
    return out


def _as_batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return reshape(x, (1,) + x.shape), True
    if x.ndim == 3:
        return x, False
    raise ShapeMismatchError(f"expected [L, D] or [B, L, D], got {x.shape}")


def _valid_2d(valid: np.ndarray | None, batch: int, length: int) -> np.ndarray:
    if valid is None:
        return np.ones((batch, length), dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.ndim == 1:
        valid = valid[None, :]
    if valid.shape != (batch, length):
        raise ShapeMismatchError(f"mask shape {valid.shape} != ({batch}, {length})")
    return valid


def build_av_context(audio: Tensor, visual: Tensor, params: FusionParams) -> Tensor:
    """Project aligned audio/visual to text width and concatenate: [.., L, 2D]."""
    if audio.shape[:-1] != visual.shape[:-1]:
        raise ShapeMismatchError(
            f"audio {audio.shape} and visual {visual.shape} disagree on rows")
    fa = linear(audio, params.av_audio_w, params.av_audio_b)
    fv = linear(visual, params.av_visual_w, params.av_visual_b)
    return concat([fa, fv], axis=-1)


def attention_core(q: Tensor, k: Tensor, v: Tensor, n_heads: int,
                   key_valid: np.ndarray,
                   attn_dropout_mask: np.ndarray | None = None) -> Tensor:
    """Multi-head scaled dot-product attention over projected q/k/v.

    Inputs are [B, L, D]; key positions with key_valid False receive -inf
    logits. Raises AllKeysMaskedError when a row has no valid key.
    """
    b, length, d = q.shape
    dh = d // n_heads
    if not key_valid.any(axis=-1).all():
        raise AllKeysMaskedError("a query row has no unmasked key")

    def split_heads(t):
        return transpose(reshape(t, (b, length, n_heads, dh)), (0, 2, 1, 3))

    qh, kh, vh = split_heads(q), split_heads(k), split_heads(v)
    logits = scale(matmul(qh, transpose(kh, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    bias = np.where(key_valid, 0.0, -np.inf)[:, None, None, :]
    logits = add(logits, Tensor(np.broadcast_to(bias, logits.shape).copy()))
    attn = softmax_lastdim(logits)
    if attn_dropout_mask is not None:
        attn = mul(attn, Tensor(attn_dropout_mask))
    ctx = matmul(attn, vh)
    return reshape(transpose(ctx, (0, 2, 1, 3)), (b, length, d))


def cross_modal_attention(f_t: Tensor, f_av: Tensor, params: FusionParams,
                          cfg: FusionConfig,
                          text_valid: np.ndarray | None = None) -> Tensor:
    """Cross-modal attention: text queries, non-verbal keys and values."""
    f_t, squeeze = _as_batched(f_t)
    f_av, _ = _as_batched(f_av)
    b, length, d = f_t.shape
    if f_av.shape[-1] != 2 * d or f_av.shape[:-1] != f_t.shape[:-1]:
        raise ShapeMismatchError(f"f_av {f_av.shape} incompatible with f_t {f_t.shape}")
    valid = _valid_2d(text_valid, b, length)
    q = linear(f_t, params.attn_q_w, params.attn_q_b)
    k = matmul(f_av, params.attn_k_w)
    v = linear(f_av, params.attn_v_w, params.attn_v_b)
    ctx = attention_core(q, k, v, cfg.n_heads, valid)
    out = linear(ctx, params.attn_o_w, params.attn_o_b)
    return reshape(out, (length, d)) if squeeze else out


def mean_pooled_context(f_av: Tensor, params: FusionParams,
                        text_valid: np.ndarray | None = None) -> Tensor:
    """Mean-pooling replacement for attention: pooled values broadcast per token."""
    f_av, squeeze = _as_batched(f_av)
    b, length, _ = f_av.shape
    valid = _valid_2d(text_valid, b, length)
    if not valid.any(axis=-1).all():
        raise AllKeysMaskedError("a sample has no valid position to pool")
    v = linear(f_av, params.attn_v_w, params.attn_v_b)
    weights = (valid / valid.sum(axis=-1, keepdims=True))[:, None, :]
    pooled = matmul(Tensor(weights), v)  # [B, 1, D]
    out = linear(pooled, params.attn_o_w, params.attn_o_b)
    out = matmul(Tensor(np.ones((b, length, 1))), out)
    d = out.shape[-1]
    return reshape(out, (length, d)) if squeeze else out


def contextualize(c_attn: Tensor, f_t: Tensor, params: FusionParams,
                  cfg: FusionConfig) -> Tensor:
    """Residual + layer norm integrating attended context with text."""
    if c_attn.shape != f_t.shape:
        raise ShapeMismatchError(f"c_attn {c_attn.shape} vs f_t {f_t.shape}")
    return layer_norm(add(c_attn, f_t), params.ln1_gamma, params.ln1_beta, cfg.eps)


def generate_kernels(c_local: Tensor, params: FusionParams,
                     cfg: FusionConfig) -> Tensor:
    """Per-token kernel bank: MLP then reshape [.., L, D*K] -> [.., L, D, K].

    kernel[i, d, k] = mlp_out[i, d*K + k]; raw values, no normalization.
    """
    d, k_s = cfg.d_text, cfg.k_s
    if c_local.shape[-1] != d:
        raise ShapeMismatchError(f"c_local width {c_local.shape[-1]} != d_text {d}")
    hidden = gelu(linear(c_local, params.kmlp_w1, params.kmlp_b1))
    flat = linear(hidden, params.kmlp_w2, params.kmlp_b2)
    return reshape(flat, flat.shape[:-1] + (d, k_s))


def dynamic_short_conv(x1: Tensor, kernels: Tensor) -> Tensor:
    """Depthwise per-token convolution: sum_k kernels[.., i, d, k] * x1_pad[.., i+k, d]."""
    k_s = kernels.shape[-1]
    if kernels.shape[:-1] != x1.shape:
        raise ShapeMismatchError(
            f"kernels {kernels.shape} do not match signal {x1.shape}")
    unfolded = unfold1d(x1, k_s, (k_s - 1) // 2)
    return sum_lastdim(mul(unfolded, kernels))


def long_conv_same(x: Tensor, filt: Tensor) -> Tensor:
    """FFT linear convolution with the filter's center tap on the output position.

    Zero rows are appended so the output slice [center, center+L) exists and
    the filter-shorter-than-signal precondition holds for short sequences;
    appended rows never influence the retained samples.
    """
    length = x.shape[-2]
    filt_len = filt.shape[0]
    center = filt_len // 2
    pad_rows = max(center, filt_len - length)
    if pad_rows:
        zeros = Tensor(np.zeros(x.shape[:-2] + (pad_rows, x.shape[-1])))
        x = concat([x, zeros], axis=-2)
    y = fft_linear_conv(x, filt)
    return narrow(y, -2, center, length) if center else narrow(y, -2, 0, length)


def _mask_rows(x: Tensor, valid: np.ndarray) -> Tensor:
    keep = np.broadcast_to(valid[..., None].astype(float), x.shape).copy()
    return mul(x, Tensor(keep))


def hyena_operator(f_t: Tensor, kernels: Tensor, params: FusionParams,
                   cfg: FusionConfig,
                   text_valid: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Short-conv -> gate -> long-conv -> projection. Returns (f_fusion, x_conv)."""
    f_t, squeeze = _as_batched(f_t)
    kernels = kernels if kernels.ndim == 4 else reshape(kernels, (1,) + kernels.shape)
    b, length, d = f_t.shape
    valid = _valid_2d(text_valid, b, length)
    paths = linear(f_t, params.path_w, params.path_b)
    # mask x1 so short-conv windows read zeros at pad rows, exactly like the
    # zero padding an unpadded sequence would see at its boundary
    x1 = _mask_rows(narrow(paths, -1, 0, d), valid)
    x2 = narrow(paths, -1, d, d)
    x_conv = dynamic_short_conv(x1, kernels)
    gated = _mask_rows(mul(x_conv, x2), valid)
    y = long_conv_same(gated, params.long_filter)
    f_fusion = linear(y, params.out_w, params.out_b)
    if squeeze:
        return reshape(f_fusion, (length, d)), reshape(x_conv, (length, d))
    return f_fusion, x_conv


@dataclass
class FusionTrace:
    """Retained intermediates for inspection; entries a variant skips are None."""
    c_attn: Tensor | None = None
    c_local: Tensor | None = None
    kernels: Tensor | None = None
    x_conv: Tensor | None = None
    f_fusion: Tensor | None = None
    f_final: Tensor | None = None

    def _squeeze_batch(self) -> "FusionTrace":
        for f in fields(self):
            t = getattr(self, f.name)
            if t is not None:
                setattr(self, f.name, reshape(t, t.shape[1:]))
        return self


def _maybe_align(x, target_len: int) -> Tensor:
    if isinstance(x, Tensor):
        return x
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2 and x.shape[0] != target_len:
        x = align_to_text(x, target_len)
    return Tensor(x)


def fuse(f_t: Tensor, f_a, f_v, params: FusionParams, cfg: FusionConfig,
         text_valid: np.ndarray | None = None,
         variant: str = "full") -> tuple[Tensor, FusionTrace]:
    """Run the fusion block; returns the fused sequence and its trace.

    f_a / f_v may be raw numpy frame matrices (aligned internally when their
    row count differs from the token count) or pre-aligned tensors. The
    variant switch mirrors the ablations: "no_attention" substitutes masked
    mean pooling for cross-modal attention, "no_dynamic_short_conv" feeds the
    attended context straight into the long convolution (no kernels, no
    gate), "no_long_conv" drops the FFT stage, "text_only" bypasses the
    block.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    f_tb, squeeze = _as_batched(f_t)
    b, length, d = f_tb.shape
    valid = _valid_2d(text_valid, b, length)
    trace = FusionTrace()

    if variant == "text_only":
        f_final = layer_norm(f_tb, params.ln2_gamma, params.ln2_beta, cfg.eps)
        trace.f_final = f_final
        if squeeze:
            return reshape(f_final, (length, d)), trace._squeeze_batch()
        return f_final, trace

    f_ab, _ = _as_batched(_maybe_align(f_a, length))
    f_vb, _ = _as_batched(_maybe_align(f_v, length))
    f_av = build_av_context(f_ab, f_vb, params)

    if variant == "no_attention":
        c_attn = mean_pooled_context(f_av, params, valid)
    else:
        c_attn = cross_modal_attention(f_tb, f_av, params, cfg, valid)
    c_local = contextualize(c_attn, f_tb, params, cfg)
    trace.c_attn, trace.c_local = c_attn, c_local

    if variant == "no_dynamic_short_conv":
        gated = _mask_rows(c_local, valid)
        y = long_conv_same(gated, params.long_filter)
        f_fusion = linear(y, params.out_w, params.out_b)
    elif variant == "no_long_conv":
        kernels = generate_kernels(c_local, params, cfg)
        paths = linear(f_tb, params.path_w, params.path_b)
        x1 = _mask_rows(narrow(paths, -1, 0, d), valid)
        x2 = narrow(paths, -1, d, d)
        x_conv = dynamic_short_conv(x1, kernels)
        gated = _mask_rows(mul(x_conv, x2), valid)
        f_fusion = linear(gated, params.out_w, params.out_b)
        trace.kernels, trace.x_conv = kernels, x_conv
    else:  # full
        kernels = generate_kernels(c_local, params, cfg)
        f_fusion, x_conv = hyena_operator(f_tb, kernels, params, cfg, valid)
        trace.kernels, trace.x_conv = kernels, x_conv

    f_final = layer_norm(add(f_fusion, f_tb), params.ln2_gamma, params.ln2_beta,
                         cfg.eps)
    trace.f_fusion, trace.f_final = f_fusion, f_final
    if squeeze:
        return reshape(f_final, (length, d)), trace._squeeze_batch()
    return f_final, trace
