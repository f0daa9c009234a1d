"""Acceptance gate: one test per criterion, one printed PASS/FAIL line each.

Criteria 7 and 8 train real models (tens of runs, minutes on one core); their
experiment configs are pinned below. Everything is seeded and deterministic.
"""

import dataclasses
import time

import numpy as np
import pytest

from dkhyena.checks import run_gradcheck_suite
from dkhyena.cli import EXIT_OK, main
from dkhyena.data import MultimodalSample, SynthSpec, generate_modality_flip, \
    generate_oos, pad_and_batch
from dkhyena.estimator import MultimodalIntentClassifier
from dkhyena.experiments import PAPER_ABLATION_VARIANTS, group_mean, \
    run_ablation_suite
from dkhyena.fusion import dynamic_short_conv, identity_kernel_pattern
from dkhyena.manifest import sha256_file
from dkhyena.metrics import report_from_confusion
from dkhyena.model import Model, ModelConfig
from dkhyena.tensor import Tensor, fft_linear_conv
from oracles import direct_conv_truncated, per_token_conv_loops

SEEDS = (0, 1, 2, 3, 4)

# criterion 1: the pinned gradcheck geometry (6 tokens plus CLS, width 8,
# 2 heads, K_s=3, one encoder layer)
GRADCHECK_CONFIG = ModelConfig(
    vocab_size=12, max_len=7, d_text=8, d_audio=4, d_visual=4, n_heads=2,
    k_s=3, n_encoder_layers=1, ffn_mult=2, n_classes=3, dropout=0.0, seed=0,
    long_filter_len=7)

# criterion 7: modality-flip gate ------------------------------------------------
FLIP_TRAIN_SPEC = SynthSpec(n_samples=3000, n_intents=4, flip_fraction=0.5,
                            tone_snr=25.0, seed=701)
FLIP_TEST_SPEC = SynthSpec(n_samples=600, n_intents=4, flip_fraction=0.5,
                           tone_snr=25.0, seed=702)
FLIP_ESTIMATOR = dict(d_text=16, n_heads=2, k_s=3, n_encoder_layers=2,
                      ffn_mult=2, dropout=0.0, epochs=15, batch_size=32,
                      learning_rate=3e-3, long_filter_len=8,
                      vocab_size=FLIP_TRAIN_SPEC.vocab_size)

# criterion 8: OOS ablation gate. The task dilutes the unknown-token text cue
# (40 tokens per intent, 3000-token OOS pool so test OOS tokens are unseen)
# and corrupts pooled tone in both modalities with distractor bursts, so the
# OOS boundary leans on per-token retrieval and cross-modal products.
OOS_TRAIN_SPEC = SynthSpec(n_samples=2500, n_intents=4, flip_fraction=0.5,
                           tone_snr=25.0, oos_fraction=0.2, n_distractors=3,
                           distractor_visual=True, l_t_min=8, l_t_max=12,
                           tokens_per_intent=40, oos_token_pool=3000,
                           seed=801)
OOS_TEST_SPEC = SynthSpec(n_samples=600, n_intents=4, flip_fraction=0.5,
                          tone_snr=25.0, oos_fraction=0.2, n_distractors=3,
                          distractor_visual=True, l_t_min=8, l_t_max=12,
                          tokens_per_intent=40, oos_token_pool=3000,
                          seed=802)
OOS_ESTIMATOR = dict(d_text=16, n_heads=2, k_s=3, n_encoder_layers=1,
                     ffn_mult=2, dropout=0.0, epochs=14, batch_size=32,
                     learning_rate=3e-3, long_filter_len=13,
                     vocab_size=OOS_TRAIN_SPEC.vocab_size,
                     n_classes=OOS_TRAIN_SPEC.n_classes)


def announce(criterion: str, ok: bool, detail: str) -> None:
    print(f"[{criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"{criterion} failed: {detail}"


class TestC1GradientSoundness:
    def test_every_operator_and_full_model(self):
        start = time.time()
        results = run_gradcheck_suite(GRADCHECK_CONFIG, h=1e-5, op_tol=1e-4,
                                      model_tol=1e-4)
        elapsed = time.time() - start
        worst = max(results, key=lambda r: r.max_rel_err)
        ok = all(r.passed for r in results) and elapsed < 60.0
        announce("C1 gradient soundness", ok,
                 f"{len(results)} checks, worst {worst.name} "
                 f"rel err {worst.max_rel_err:.2e} (tol 1e-4), {elapsed:.1f}s")


class TestC2FftOracle:
    def test_fft_matches_direct_convolution_grid(self):
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            for length in (1, 2, 7, 64, 100):
                for filt_len in {1, 3, length}:
                    if filt_len > length:
                        continue
                    x = rng.standard_normal((length, 3))
                    h = rng.standard_normal((filt_len, 3))
                    got = fft_linear_conv(Tensor(x), Tensor(h)).data
                    ref = direct_conv_truncated(x, h)
                    worst = max(worst, float(np.abs(got - ref).max()))
        announce("C2 FFT/direct equivalence", worst <= 1e-9,
                 f"max abs err {worst:.2e} over 20 seeds x L/L_h grid (tol 1e-9)")


class TestC3DynamicConvOracle:
    def test_matches_per_token_loop_oracle(self):
        worst = 0.0
        shapes = [(5, 4, 1), (9, 8, 3), (17, 8, 5), (33, 16, 3), (64, 32, 1),
                  (64, 32, 3), (64, 32, 5)]
        for seed in range(5):
            rng = np.random.default_rng(seed)
            for length, width, k_s in shapes:
                x = rng.standard_normal((length, width))
                kernels = rng.standard_normal((length, width, k_s))
                got = dynamic_short_conv(Tensor(x), Tensor(kernels)).data
                ref = per_token_conv_loops(x, kernels)
                worst = max(worst, float(np.abs(got - ref).max()))
        announce("C3 dynamic-conv oracle", worst <= 1e-12,
                 f"max abs err {worst:.2e} up to L=64,D=32,K in {{1,3,5}} (tol 1e-12)")


class TestC4KernelShapeLaw:
    def test_kernel_element_count(self):
        rng = np.random.default_rng(0)
        checked = 0
        for length, width, k_s in [(4, 8, 1), (6, 8, 3), (10, 16, 5),
                                   (3, 4, 3), (12, 8, 5)]:
            cfg = ModelConfig(vocab_size=20, max_len=length + 2, d_text=width,
                              d_audio=4, d_visual=4, n_heads=2, k_s=k_s,
                              n_encoder_layers=1, ffn_mult=2, n_classes=2,
                              dropout=0.0, long_filter_len=4)
            model = Model(cfg)
            tokens = [int(t) for t in rng.integers(2, 20, size=length)]
            sample = MultimodalSample(tokens, rng.standard_normal((2 * length, 4)),
                                      rng.standard_normal((2 * length, 4)), 0)
            _, trace = model.forward(pad_and_batch([sample], 1)[0])
            assert trace.kernels.size == 1 * (length + 1) * width * k_s
            checked += 1
        announce("C4 kernel shape law", checked == 5,
                 f"kernels have exactly L*D*K_s elements in {checked} configs (exact)")


class TestC5IdentityAtInit:
    def test_full_equals_text_only_and_dynconv_identity(self):
        rng = np.random.default_rng(5)
        samples = []
        for _ in range(4):
            n_tok = int(rng.integers(3, 6))
            samples.append(MultimodalSample(
                [int(t) for t in rng.integers(2, 12, size=n_tok)],
                rng.standard_normal((2 * n_tok, 4)),
                rng.standard_normal((2 * n_tok, 4)), 0))
        batch = pad_and_batch(samples, 4)[0]
        full = Model(GRADCHECK_CONFIG)
        text = Model(dataclasses.replace(GRADCHECK_CONFIG, variant="text_only"),
                     params=full.params)
        gap = float(np.abs(full.forward(batch)[0].data
                           - text.forward(batch)[0].data).max())

        # the init bias pattern is the delta-kernel bank (zero-weight limit)
        x = rng.standard_normal((9, 8))
        bank = np.tile(identity_kernel_pattern(8, 3).reshape(8, 3), (9, 1, 1))
        ident = float(np.abs(dynamic_short_conv(Tensor(x), Tensor(bank)).data
                             - x).max())
        ok = gap <= 1e-10 and ident <= 1e-12
        announce("C5 identity at init", ok,
                 f"full-vs-text_only logit gap {gap:.2e} (tol 1e-10), "
                 f"dynconv identity {ident:.2e} (tol 1e-12)")


class TestC6PaddingInvariance:
    def test_appending_pads_preserves_logits(self):
        cfg = ModelConfig(vocab_size=30, max_len=20, d_text=8, d_audio=4,
                          d_visual=4, n_heads=2, k_s=3, n_encoder_layers=1,
                          ffn_mult=2, n_classes=3, dropout=0.0, seed=1,
                          long_filter_len=6)
        model = Model(cfg)
        rng = np.random.default_rng(6)
        worst = 0.0
        for _ in range(4):
            n_tok = int(rng.integers(4, 8))
            s = MultimodalSample([int(t) for t in rng.integers(2, 30, size=n_tok)],
                                 rng.standard_normal((2 * n_tok, 4)),
                                 rng.standard_normal((2 * n_tok, 4)), 0)
            base = model.forward(pad_and_batch([s], 1)[0])[0].data
            for extra in (1, 4, 8):
                padded = pad_and_batch([s], 1, pad_multiple=n_tok + extra)[0]
                out = model.forward(padded)[0].data
                worst = max(worst, float(np.abs(out - base).max()))
        announce("C6 padding invariance", worst <= 1e-8,
                 f"max logit change {worst:.2e} appending up to 8 pads (tol 1e-8)")


@pytest.fixture(scope="module")
def flip_gate():
    train_set = generate_modality_flip(FLIP_TRAIN_SPEC)
    test_set = generate_modality_flip(FLIP_TEST_SPEC)
    base = MultimodalIntentClassifier(**FLIP_ESTIMATOR)
    start = time.time()
    results = run_ablation_suite(base, train_set, test_set,
                                 variants=("full", "text_only"), seeds=SEEDS)
    return results, time.time() - start


class TestC7ModalityFlipGate:
    def test_full_beats_text_only(self, flip_gate):
        results, elapsed = flip_gate
        full_acc = group_mean(results, "full", "acc")
        text_acc = group_mean(results, "text_only", "acc")
        ok = (full_acc >= 0.90 and text_acc <= 0.78
              and full_acc - text_acc >= 0.15 and elapsed <= 600.0)
        announce("C7 modality-flip gate", ok,
                 f"mean acc over 5 seeds: full {full_acc:.3f} (>=0.90), "
                 f"text_only {text_acc:.3f} (<=0.78), gap "
                 f"{full_acc - text_acc:.3f} (>=0.15), {elapsed:.0f}s (<=600s)")


@pytest.fixture(scope="module")
def oos_gate():
    train_set = generate_oos(OOS_TRAIN_SPEC)
    test_set = generate_oos(OOS_TEST_SPEC)
    base = MultimodalIntentClassifier(**OOS_ESTIMATOR)
    start = time.time()
    results = run_ablation_suite(base, train_set, test_set,
                                 variants=PAPER_ABLATION_VARIANTS, seeds=SEEDS,
                                 oos_index=OOS_TRAIN_SPEC.oos_class)
    return results, time.time() - start


class TestC8AblationDirectionGate:
    def test_f1_oos_ordering(self, oos_gate):
        results, elapsed = oos_gate
        means = {v: group_mean(results, v, "f1_oos")
                 for v in PAPER_ABLATION_VARIANTS}
        drops = {v: means["full"] - means[v]
                 for v in PAPER_ABLATION_VARIANTS if v != "full"}
        ok_order = all(means["full"] > means[v] for v in drops)
        ok_ndsc = (drops["no_dynamic_short_conv"] >= max(drops.values()))
        ok = ok_order and ok_ndsc and elapsed <= 1800.0
        detail = ", ".join(f"{v}={means[v]:.3f}" for v in PAPER_ABLATION_VARIANTS)
        announce("C8 ablation direction gate", ok,
                 f"mean f1_oos over 5 seeds: {detail}; drops "
                 + ", ".join(f"{v}={drops[v]:+.3f}" for v in drops)
                 + f"; {elapsed:.0f}s (<=1800s)")


class TestC9MetricsOracle:
    def test_hand_computed_confusions(self):
        r1 = report_from_confusion(np.array([[2, 1], [1, 2]]))
        exact = (abs(r1.acc - 4 / 6) <= 1e-12
                 and abs(r1.macro_f1 - 2 / 3) <= 1e-12
                 and abs(r1.weighted_f1 - 2 / 3) <= 1e-12
                 and abs(r1.macro_precision - 2 / 3) <= 1e-12)
        conf = np.array([[5, 0, 0, 1], [0, 4, 1, 1], [1, 0, 6, 0], [1, 0, 1, 2]])
        r2 = report_from_confusion(conf, oos_index=3)
        exact = exact and abs(r2.f1_oos - 0.5) <= 1e-12
        per_f1 = []
        for c in range(4):
            p = conf[c, c] / conf[:, c].sum()
            r = conf[c, c] / conf[c].sum()
            per_f1.append(2 * p * r / (p + r))
        exact = exact and abs(r2.oid_f1 - np.mean(per_f1)) <= 1e-12
        exact = exact and abs(r2.f1_is - np.mean(per_f1[:3])) <= 1e-12
        r3 = report_from_confusion(np.diag([3, 2, 4]))
        exact = exact and r3.acc == 1.0 and r3.macro_f1 == 1.0
        announce("C9 metrics oracle", exact,
                 "hand-computed confusion examples reproduced to 1e-12")


class TestC10Reproducibility:
    def test_cli_reruns_are_identical(self, tmp_path):
        synth_cfg = tmp_path / "synth.cfg"
        synth_cfg.write_text(
            "synth.n_samples=60\nsynth.tone_snr=25.0\nsynth.seed=10\n")
        train_cfg = tmp_path / "train.cfg"
        train_cfg.write_text(
            "model.d_text=8\nmodel.n_heads=2\nmodel.n_encoder_layers=1\n"
            "model.ffn_mult=2\nmodel.dropout=0.0\nmodel.long_filter_len=6\n"
            "train.epochs=1\ntrain.batch_size=16\ntrain.learning_rate=0.003\n"
            "train.n_runs=1\ntrain.holdout_fraction=0.25\n")
        digests = []
        for tag in ("a", "b"):
            gen = tmp_path / f"gen_{tag}"
            run = tmp_path / f"run_{tag}"
            sweep = tmp_path / f"sweep_{tag}"
            assert main(["gen-data", "--config", str(synth_cfg), "--out",
                         str(gen), "--quiet"]) == EXIT_OK
            data = gen / "dataset.jsonl"
            assert main(["train", "--config", str(train_cfg), "--data",
                         str(data), "--out", str(run), "--quiet"]) == EXIT_OK
            assert main(["sweep", "--config", str(train_cfg), "--data",
                         str(data), "--out", str(sweep), "--k", "1,3",
                         "--quiet"]) == EXIT_OK
            digests.append((sha256_file(data),
                            sha256_file(run / "checkpoint.dkhy"),
                            sha256_file(run / "train_log.jsonl"),
                            sha256_file(sweep / "results.csv")))
        ok = digests[0] == digests[1]
        announce("C10 reproducibility", ok,
                 "dataset, checkpoint, log, and results CSV checksums identical "
                 "across reruns")
