"""Finite-difference verification suite: every operator, then the full model.

Each check builds a small random instance, scalarizes it against fixed
random weights, and compares analytic gradients with central differences.
This backs both the `gradcheck` CLI command and the acceptance gate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import MultimodalSample, pad_and_batch
from .fusion import FusionConfig, FusionParams, attention_core, \
    dynamic_short_conv, fuse, fusion_param_shapes, generate_kernels
from .gradcheck import finite_difference_check
from .model import Model, ModelConfig, encoder_block
from .tensor import (
    Tensor,
    add,
    concat,
    expand_leading,
    fft_linear_conv,
    gather_rows,
    gelu,
    layer_norm,
    linear,
    matmul,
    mul,
    narrow,
    relu,
    reshape,
    scale,
    softmax_lastdim,
    sum_lastdim,
    tanh,
    transpose,
    tsum,
    unfold1d,
)
from .train import cross_entropy


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def _random_fusion_params(cfg: FusionConfig, rng) -> FusionParams:
    vals = {}
    for name, shape in fusion_param_shapes(cfg).items():
        if name.endswith("_gamma"):
            vals[name] = Tensor(1.0 + 0.1 * rng.standard_normal(shape),
                                requires_grad=True)
        else:
            std = 1.0 / np.sqrt(shape[0]) if len(shape) > 1 else 0.3
            vals[name] = Tensor(rng.standard_normal(shape) * std,
                                requires_grad=True)
    return FusionParams(**vals)


def operator_checks(h: float = 1e-5, tol: float = 1e-5,
                    seed: int = 0) -> list[CheckResult]:
    """One finite-difference check per registered operation."""
    rng = np.random.default_rng(seed)
    results = []

    def check(name, build, params, names=None):
        w = Tensor(rng.standard_normal(build().shape))
        report = finite_difference_check(lambda: tsum(mul(build(), w)), params,
                                         h=h, tol=tol, names=names)
        results.append(CheckResult(name, report.max_rel_err, tol))

    a = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    check("add", lambda: add(a, b), [a, b])
    check("mul", lambda: mul(a, b), [a, b])
    check("scale", lambda: scale(a, -1.7), [a])
    check("reshape", lambda: reshape(a, (3, 2)), [a])
    check("transpose", lambda: transpose(a, (1, 0)), [a])
    check("narrow", lambda: narrow(a, 1, 0, 2), [a])
    check("concat", lambda: concat([a, b], 0), [a, b])
    check("expand_leading", lambda: expand_leading(a, 3), [a])
    check("sum_lastdim", lambda: sum_lastdim(a), [a])
    check("relu", lambda: relu(a), [a])
    check("tanh", lambda: tanh(a), [a])
    check("gelu", lambda: gelu(a), [a])

    m1 = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    m2 = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    check("matmul", lambda: matmul(m1, m2), [m1, m2])
    mb = Tensor(rng.standard_normal((2, 2, 3)), requires_grad=True)
    check("matmul_batched", lambda: matmul(mb, m2), [mb, m2])

    lx = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    lw = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    lb = Tensor(rng.standard_normal(2), requires_grad=True)
    check("linear", lambda: linear(lx, lw, lb), [lx, lw, lb])

    sx = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
    check("softmax_lastdim", lambda: softmax_lastdim(sx), [sx])

    nx = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    ng = Tensor(1.0 + 0.1 * rng.standard_normal(4), requires_grad=True)
    nb = Tensor(rng.standard_normal(4), requires_grad=True)
    check("layer_norm", lambda: layer_norm(nx, ng, nb, 1e-5), [nx, ng, nb])

    ux = Tensor(rng.standard_normal((5, 2)), requires_grad=True)
    check("unfold1d", lambda: unfold1d(ux, 3, 1), [ux])

    fx = Tensor(rng.standard_normal((6, 2)), requires_grad=True)
    fh = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    check("fft_linear_conv", lambda: fft_linear_conv(fx, fh), [fx, fh])

    table = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
    ids = np.array([[0, 2], [4, 2]])
    check("gather_rows", lambda: gather_rows(table, ids), [table])

    kx = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    kk = Tensor(rng.standard_normal((4, 2, 3)), requires_grad=True)
    check("dynamic_short_conv", lambda: dynamic_short_conv(kx, kk), [kx, kk])

    q = Tensor(rng.standard_normal((1, 3, 4)), requires_grad=True)
    k = Tensor(rng.standard_normal((1, 3, 4)), requires_grad=True)
    v = Tensor(rng.standard_normal((1, 3, 4)), requires_grad=True)
    valid = np.array([[True, True, False]])
    check("attention_core", lambda: attention_core(q, k, v, 2, valid), [q, k, v])

    ce_logits = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    ce_labels = np.array([0, 2, 1])
    report = finite_difference_check(lambda: cross_entropy(ce_logits, ce_labels),
                                     [ce_logits], h=h, tol=tol)
    results.append(CheckResult("cross_entropy", report.max_rel_err, tol))

    fcfg = FusionConfig(d_text=4, d_audio=3, d_visual=3, k_s=3, n_heads=2,
                        long_filter_len=3).validate()
    fparams = _random_fusion_params(fcfg, rng)
    c_local = Tensor(rng.standard_normal((4, 4)))
    check("generate_kernels", lambda: generate_kernels(c_local, fparams, fcfg),
          [fparams.kmlp_w1, fparams.kmlp_b1, fparams.kmlp_w2, fparams.kmlp_b2])

    f_t = Tensor(rng.standard_normal((4, 4)))
    f_a = rng.standard_normal((8, 3))
    f_v = rng.standard_normal((8, 3))
    kp_names, kp = zip(*fparams.named_parameters())
    check("fusion_block", lambda: fuse(f_t, f_a, f_v, fparams, fcfg)[0],
          list(kp), names=kp_names)
    return results


def model_check(config: ModelConfig, h: float = 1e-5,
                tol: float = 1e-4, seed: int = 0) -> CheckResult:
    """Full-model gradient check: cross-entropy loss over every parameter.

    The identity-at-init parameters (zero head, zero fusion output projection,
    near-zero kernel weights) would make upstream gradients vanish and the
    check vacuous, so those tensors are randomized first.
    """
    model = Model(config)
    rng = np.random.default_rng(seed)
    d = config.d_text
    model.params.head_w.data[:] = rng.standard_normal(
        model.params.head_w.shape) / np.sqrt(d)
    model.params.fusion.out_w.data[:] = rng.standard_normal((d, d)) / np.sqrt(d)
    model.params.fusion.kmlp_w2.data[:] = rng.standard_normal(
        model.params.fusion.kmlp_w2.shape) / np.sqrt(model.params.fusion.kmlp_w2.shape[0])
    d_a, d_v = config.d_audio, config.d_visual
    lengths = [config.max_len - 1, max(1, config.max_len - 3)]
    samples = []
    for i, n_tok in enumerate(lengths):
        tokens = [int(t) for t in
                  rng.integers(2, config.vocab_size, size=n_tok)]
        samples.append(MultimodalSample(
            tokens, rng.standard_normal((2 * n_tok, d_a)),
            rng.standard_normal((2 * n_tok, d_v)),
            int(i % config.n_classes)))
    batch = pad_and_batch(samples, len(samples))[0]

    def f():
        logits, _ = model.forward(batch)
        return cross_entropy(logits, batch.labels)

    names, params = zip(*model.params.named_parameters())
    report = finite_difference_check(f, params, h=h, tol=tol, names=names)
    return CheckResult("full_model", report.max_rel_err, tol)


def encoder_check(h: float = 1e-5, tol: float = 1e-4,
                  seed: int = 0) -> CheckResult:
    cfg = ModelConfig(vocab_size=10, max_len=8, d_text=4, d_audio=3, d_visual=3,
                      n_heads=2, k_s=3, n_encoder_layers=2, ffn_mult=2,
                      n_classes=2, dropout=0.0, seed=seed, long_filter_len=4)
    model = Model(cfg)
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((1, 3, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((1, 3, 4)))
    valid = np.ones((1, 3), dtype=bool)
    params = [x]
    names = ["x"]
    for i, lp in enumerate(model.params.layers):
        for name, t in lp.named_parameters():
            params.append(t)
            names.append(f"enc{i}.{name}")

    def f():
        hidden = x
        for lp in model.params.layers:
            hidden = encoder_block(hidden, lp, cfg.n_heads, valid, cfg.eps)
        return tsum(mul(hidden, w))

    report = finite_difference_check(f, params, h=h, tol=tol, names=names)
    return CheckResult("encoder_stack", report.max_rel_err, tol)


def run_gradcheck_suite(config: ModelConfig, h: float = 1e-5,
                        op_tol: float = 1e-5,
                        model_tol: float = 1e-4,
                        seed: int = 0) -> list[CheckResult]:
    results = operator_checks(h=h, tol=op_tol, seed=seed)
    results.append(encoder_check(h=h, tol=model_tol, seed=seed))
    results.append(model_check(config, h=h, tol=model_tol, seed=seed))
    return results
