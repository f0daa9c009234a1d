"""Synthetic multimodal datasets, JSON Lines interchange, and batching.

The synthetic tasks make modality-dependent meaning testable at desk scale:

* modality-flip: each utterance carries one content token from an intent's
  token set; a tone scalar t in {+1, -1} (flipped with probability
  flip_fraction) is written into the audio frames overlapping that token's
  band as an amplitude on channel 0, on top of N(0, 1/tone_snr) noise
  (1/tone_snr is the noise standard deviation). When t = -1 the label flips
  to the paired intent (pairs are (0,1), (2,3), ...), so text alone caps at
  chance on flipped samples while audio decodes the label exactly.
  Visual frames carry a redundant copy of the tone on half the samples and
  pure noise otherwise. Optional distractor bursts add ±1 amplitudes on the
  tone channel at non-content token bands, which corrupts globally pooled
  tone estimates but not per-token retrieval.

* out-of-scope: a fraction of samples draw their content token from a large
  held-out pool (disjoint from every intent's token set) with random tone and
  get the dedicated OOS label. For OOS samples the visual copy, when present,
  carries an independently random sign, so cross-modal incoherence is an
  additional OOS cue; in-scope samples are always coherent.

Vocabulary layout: id 0 = PAD, id 1 = CLS, then n_filler_tokens filler ids,
then n_intents blocks of tokens_per_intent content ids, then the OOS pool.

All generators draw from the documented xorshift64* stream (see rng.py), so a
spec is a pure function: same seed, byte-identical dataset. Shards derive
child seeds via rng.child_seed(seed, shard_index).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadSpecError,
    EmptyDatasetError,
    LabelError,
    ParseError,
    ShapeError,
    ShapeMismatchError,
)
from .rng import Rng

PAD_ID = 0
CLS_ID = 1
_RESERVED = 2


@dataclass
class MultimodalSample:
    tokens: list[int]
    audio: np.ndarray  # [L_a, D_a]
    visual: np.ndarray  # [L_v, D_v]
    label: int
    is_oos: bool = False

    def __post_init__(self):
        self.audio = np.asarray(self.audio, dtype=np.float64)
        self.visual = np.asarray(self.visual, dtype=np.float64)


@dataclass
class Batch:
    tokens: np.ndarray  # [B, L_max] int64, PAD_ID-filled
    text_mask: np.ndarray  # [B, L_max] bool
    audio: np.ndarray  # [B, A_max, D_a]
    audio_mask: np.ndarray  # [B, A_max] bool
    visual: np.ndarray  # [B, V_max, D_v]
    visual_mask: np.ndarray  # [B, V_max] bool
    labels: np.ndarray  # [B] int64
    samples: list | None = None  # originals, lets the model memoize alignment

    def __len__(self) -> int:
        return self.tokens.shape[0]


@dataclass
class SynthSpec:
    n_samples: int
    n_intents: int = 4
    flip_fraction: float = 0.5
    tone_snr: float = 25.0
    oos_fraction: float = 0.0
    l_t_min: int = 4
    l_t_max: int = 9
    frames_per_token: int = 2
    d_audio: int = 6
    d_visual: int = 6
    n_distractors: int = 0
    distractor_visual: bool = False
    tokens_per_intent: int = 3
    n_filler_tokens: int = 20
    oos_token_pool: int = 150
    seed: int = 0

    def validate(self) -> "SynthSpec":
        if self.n_samples < 1:
            raise BadSpecError("n_samples must be >= 1")
        if self.n_intents < 2 or self.n_intents % 2:
            raise BadSpecError("n_intents must be even and >= 2")
        for name in ("flip_fraction", "oos_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise BadSpecError(f"{name} must be in [0, 1], got {v}")
        if not self.tone_snr > 0:
            raise BadSpecError("tone_snr must be > 0")
        if self.l_t_min < 1 or self.l_t_max < self.l_t_min:
            raise BadSpecError("need 1 <= l_t_min <= l_t_max")
        if self.frames_per_token < 1:
            raise BadSpecError("frames_per_token must be >= 1")
        if min(self.d_audio, self.d_visual) < 1:
            raise BadSpecError("feature dims must be >= 1")
        if self.tokens_per_intent < 1 or self.n_filler_tokens < 1:
            raise BadSpecError("token pools must be >= 1")
        if self.oos_fraction > 0 and self.oos_token_pool < 1:
            raise BadSpecError("oos_token_pool must be >= 1 when OOS is enabled")
        if self.n_distractors < 0:
            raise BadSpecError("n_distractors must be >= 0")
        return self

    # token id blocks
    @property
    def filler_start(self) -> int:
        return _RESERVED

    def intent_token_range(self, intent: int) -> range:
        start = self.filler_start + self.n_filler_tokens \
            + intent * self.tokens_per_intent
        return range(start, start + self.tokens_per_intent)

    @property
    def oos_token_start(self) -> int:
        return self.filler_start + self.n_filler_tokens \
            + self.n_intents * self.tokens_per_intent

    @property
    def vocab_size(self) -> int:
        return self.oos_token_start + self.oos_token_pool

    @property
    def oos_class(self) -> int:
        return self.n_intents

    @property
    def n_classes(self) -> int:
        return self.n_intents + (1 if self.oos_fraction > 0 else 0)


def partner_intent(intent: int) -> int:
    """Intents are paired (0,1), (2,3), ...; the tone flip swaps the pair."""
    return intent ^ 1


def _make_sample(spec: SynthSpec, rng: Rng, oos: bool) -> MultimodalSample:
    n_tok = spec.l_t_min + rng.randint(spec.l_t_max - spec.l_t_min + 1)
    tokens = [spec.filler_start + rng.randint(spec.n_filler_tokens)
              for _ in range(n_tok)]
    pos = rng.randint(n_tok)

    if oos:
        tokens[pos] = spec.oos_token_start + rng.randint(spec.oos_token_pool)
        tone_audio = rng.sign()
        tone_visual = rng.sign()  # independent: incoherence is an OOS cue
        label = spec.oos_class
    else:
        intent = rng.randint(spec.n_intents)
        tokens[pos] = spec.intent_token_range(intent)[
            rng.randint(spec.tokens_per_intent)]
        flipped = rng.uniform() < spec.flip_fraction
        tone_audio = -1 if flipped else 1
        tone_visual = tone_audio
        label = partner_intent(intent) if flipped else intent

    fpt = spec.frames_per_token
    n_frames = fpt * n_tok
    noise_std = 0.0 if math.isinf(spec.tone_snr) else 1.0 / spec.tone_snr
    audio = rng.normal_array((n_frames, spec.d_audio), std=noise_std)
    visual = rng.normal_array((n_frames, spec.d_visual), std=noise_std)
    band = slice(pos * fpt, (pos + 1) * fpt)
    audio[band, 0] += tone_audio
    if rng.uniform() < 0.5:
        visual[band, 0] += tone_visual
    if spec.n_distractors > 0 and n_tok > 1:
        others = [p for p in range(n_tok) if p != pos]
        rng.shuffle(others)
        for p in others[:spec.n_distractors]:
            burst = slice(p * fpt, (p + 1) * fpt)
            audio[burst, 0] += rng.sign()
            if spec.distractor_visual:
                # distractor bands get independently signed visual bursts, so
                # pooled estimates are corrupted in both modalities while the
                # content band stays the only (audio,visual)-coherent one
                visual[burst, 0] += rng.sign()
    return MultimodalSample(tokens, audio, visual, label, oos)


def generate_modality_flip(spec: SynthSpec) -> list[MultimodalSample]:
    """Closed-set task where a tone sign flips the content token's meaning."""
    spec.validate()
    rng = Rng(spec.seed)
    return [_make_sample(spec, rng, oos=False) for _ in range(spec.n_samples)]


def generate_oos(spec: SynthSpec) -> list[MultimodalSample]:
    """Modality-flip task plus held-out-token OOS samples (extra class)."""
    spec.validate()
    if not spec.oos_fraction > 0:
        raise BadSpecError("generate_oos requires oos_fraction > 0")
    rng = Rng(spec.seed)
    return [_make_sample(spec, rng, oos=rng.uniform() < spec.oos_fraction)
            for _ in range(spec.n_samples)]


def bayes_flip_accuracy(samples: list[MultimodalSample], spec: SynthSpec) -> float:
    """Brute-force Bayes classifier on (content token, audio tone sign).

    Finds the content token by id block, decodes the tone as the sign of the
    mean tone-channel amplitude over its band, and predicts intent or partner
    accordingly; exact (accuracy 1.0) when tone_snr is infinite.
    """
    if not samples:
        raise EmptyDatasetError("no samples")
    token_to_intent = {tok: intent for intent in range(spec.n_intents)
                       for tok in spec.intent_token_range(intent)}
    hits = 0
    for s in samples:
        fpt = len(s.audio) // len(s.tokens)
        pos, intent = next((i, token_to_intent[t]) for i, t in enumerate(s.tokens)
                           if t in token_to_intent)
        band = s.audio[pos * fpt:(pos + 1) * fpt, 0].mean()
        pred = intent if band >= 0 else partner_intent(intent)
        hits += pred == s.label
    return hits / len(samples)


# ---------------------------------------------------------------------------
# JSON Lines interchange


def save_jsonl(path, samples: list[MultimodalSample],
               meta: dict | None = None) -> None:
    """One object per line; floats serialized with full round-trip precision."""
    with open(path, "w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")
        for s in samples:
            rec = {
                "tokens": [int(t) for t in s.tokens],
                "audio": [[float(x) for x in row] for row in s.audio],
                "visual": [[float(x) for x in row] for row in s.visual],
                "label": int(s.label),
                "oos": bool(s.is_oos),
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def default_meta(spec: SynthSpec) -> dict:
    classes = [f"intent_{i}" for i in range(spec.n_intents)]
    if spec.oos_fraction > 0:
        classes.append("oos")
    return {
        "d_audio": spec.d_audio,
        "d_visual": spec.d_visual,
        "n_classes": spec.n_classes,
        "class_names": classes,
        "vocab_size": spec.vocab_size,
    }


def load_jsonl(path) -> tuple[list[MultimodalSample], dict | None]:
    """Parse and validate a dataset file; errors carry 1-based line numbers."""
    samples: list[MultimodalSample] = []
    meta: dict | None = None
    d_audio = d_visual = None
    n_classes = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, f"invalid JSON: {exc}") from None
            if not isinstance(rec, dict):
                raise ParseError(line_no, "record must be a JSON object")
            if "meta" in rec:
                if line_no != 1:
                    raise ParseError(line_no, "meta header only allowed on line 1")
                meta = rec["meta"]
                d_audio = meta.get("d_audio")
                d_visual = meta.get("d_visual")
                n_classes = meta.get("n_classes")
                continue
            missing = {"tokens", "audio", "visual", "label"} - rec.keys()
            if missing:
                raise ParseError(line_no, f"missing keys: {sorted(missing)}")
            tokens = rec["tokens"]
            if (not isinstance(tokens, list) or not tokens
                    or not all(isinstance(t, int) for t in tokens)):
                raise ParseError(line_no, "tokens must be a non-empty int array")

            def to_matrix(key, width):
                rows = rec[key]
                if not isinstance(rows, list) or not rows:
                    raise ShapeError(line_no, f"{key} must be a non-empty matrix")
                widths = {len(r) for r in rows}
                if len(widths) != 1:
                    raise ShapeError(line_no, f"{key} rows have ragged widths {sorted(widths)}")
                got = widths.pop()
                if width is not None and got != width:
                    raise ShapeError(line_no, f"{key} row width {got} != expected {width}")
                return np.asarray(rows, dtype=np.float64)

            audio = to_matrix("audio", d_audio)
            visual = to_matrix("visual", d_visual)
            if d_audio is None:
                d_audio = audio.shape[1]
            if d_visual is None:
                d_visual = visual.shape[1]
            label = rec["label"]
            if not isinstance(label, int) or label < 0:
                raise ParseError(line_no, "label must be a non-negative int")
            if n_classes is not None and label >= n_classes:
                raise LabelError(line_no, f"label {label} >= n_classes {n_classes}")
            samples.append(MultimodalSample(tokens, audio, visual, label,
                                            bool(rec.get("oos", False))))
    return samples, meta


# ---------------------------------------------------------------------------
# batching


def _round_up(n: int, multiple: int) -> int:
    return ((n + multiple - 1) // multiple) * multiple


def pad_and_batch(samples: list[MultimodalSample], batch_size: int,
                  pad_multiple: int = 1) -> list[Batch]:
    """Deterministic-order batching with zero padding and validity masks.

    Shuffling is the trainer's job; per-batch lengths are the maxima rounded
    up to pad_multiple.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if pad_multiple < 1:
        raise ValueError("pad_multiple must be >= 1")
    if not samples:
        raise EmptyDatasetError("no samples to batch")
    batches = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        b = len(chunk)
        l_max = _round_up(max(len(s.tokens) for s in chunk), pad_multiple)
        a_max = _round_up(max(s.audio.shape[0] for s in chunk), pad_multiple)
        v_max = _round_up(max(s.visual.shape[0] for s in chunk), pad_multiple)
        d_a = chunk[0].audio.shape[1]
        d_v = chunk[0].visual.shape[1]
        tokens = np.full((b, l_max), PAD_ID, dtype=np.int64)
        text_mask = np.zeros((b, l_max), dtype=bool)
        audio = np.zeros((b, a_max, d_a))
        audio_mask = np.zeros((b, a_max), dtype=bool)
        visual = np.zeros((b, v_max, d_v))
        visual_mask = np.zeros((b, v_max), dtype=bool)
        labels = np.zeros(b, dtype=np.int64)
        for i, s in enumerate(chunk):
            if s.audio.shape[1] != d_a or s.visual.shape[1] != d_v:
                raise ShapeMismatchError("inconsistent feature widths in batch")
            tokens[i, :len(s.tokens)] = s.tokens
            text_mask[i, :len(s.tokens)] = True
            audio[i, :s.audio.shape[0]] = s.audio
            audio_mask[i, :s.audio.shape[0]] = True
            visual[i, :s.visual.shape[0]] = s.visual
            visual_mask[i, :s.visual.shape[0]] = True
            labels[i] = s.label
        batches.append(Batch(tokens, text_mask, audio, audio_mask,
                             visual, visual_mask, labels, samples=chunk))
    return batches


def unbatch(batch: Batch) -> list[MultimodalSample]:
    """Invert pad_and_batch for one batch (masks recover true lengths)."""
    out = []
    for i in range(len(batch)):
        n_tok = int(batch.text_mask[i].sum())
        n_a = int(batch.audio_mask[i].sum())
        n_v = int(batch.visual_mask[i].sum())
        out.append(MultimodalSample(
            [int(t) for t in batch.tokens[i, :n_tok]],
            batch.audio[i, :n_a].copy(),
            batch.visual[i, :n_v].copy(),
            int(batch.labels[i])))
    return out


def validate_samples(samples, d_audio: int | None = None,
                     d_visual: int | None = None) -> tuple[int, int]:
    """Input-validation helper: checks structure, returns (d_audio, d_visual)."""
    if not samples:
        raise EmptyDatasetError("empty sample list")
    for i, s in enumerate(samples):
        if not isinstance(s, MultimodalSample):
            raise TypeError(f"samples[{i}] is not a MultimodalSample")
        if not s.tokens:
            raise ShapeMismatchError(f"samples[{i}] has no tokens")
        if s.audio.ndim != 2 or s.visual.ndim != 2:
            raise ShapeMismatchError(f"samples[{i}] features must be matrices")
        if d_audio is None:
            d_audio = s.audio.shape[1]
        if d_visual is None:
            d_visual = s.visual.shape[1]
        if s.audio.shape[1] != d_audio or s.visual.shape[1] != d_visual:
            raise ShapeMismatchError(
                f"samples[{i}] feature widths {s.audio.shape[1]}/{s.visual.shape[1]} "
                f"differ from ({d_audio}, {d_visual})")
    return d_audio, d_visual
