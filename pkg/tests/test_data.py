"""Synthetic generators, JSONL interchange, and batching."""

import numpy as np
import pytest

from dkhyena import errors
from dkhyena.data import (
    Batch,
    MultimodalSample,
    SynthSpec,
    bayes_flip_accuracy,
    default_meta,
    generate_modality_flip,
    generate_oos,
    load_jsonl,
    pad_and_batch,
    partner_intent,
    save_jsonl,
    unbatch,
    validate_samples,
)
from dkhyena.rng import Rng, child_seed


class TestSpecValidation:
    def test_bad_fractions(self):
        with pytest.raises(errors.BadSpecError):
            SynthSpec(n_samples=10, oos_fraction=1.5).validate()
        with pytest.raises(errors.BadSpecError):
            SynthSpec(n_samples=10, flip_fraction=-0.1).validate()

    def test_odd_intents_rejected(self):
        with pytest.raises(errors.BadSpecError):
            SynthSpec(n_samples=10, n_intents=3).validate()

    def test_bad_lengths(self):
        with pytest.raises(errors.BadSpecError):
            SynthSpec(n_samples=10, l_t_min=5, l_t_max=4).validate()

    def test_vocab_layout_disjoint(self):
        spec = SynthSpec(n_samples=1).validate()
        blocks = [set(spec.intent_token_range(c)) for c in range(spec.n_intents)]
        blocks.append(set(range(spec.oos_token_start, spec.vocab_size)))
        blocks.append(set(range(spec.filler_start,
                                spec.filler_start + spec.n_filler_tokens)))
        union = set().union(*blocks)
        assert len(union) == sum(len(b) for b in blocks)
        assert 0 not in union and 1 not in union


class TestModalityFlip:
    def test_no_flips_means_text_label(self):
        spec = SynthSpec(n_samples=100, flip_fraction=0.0, seed=5)
        token_to_intent = {t: c for c in range(spec.n_intents)
                           for t in spec.intent_token_range(c)}
        for s in generate_modality_flip(spec):
            intents = [token_to_intent[t] for t in s.tokens if t in token_to_intent]
            assert len(intents) == 1
            assert s.label == intents[0]

    def test_bayes_classifier_exact_at_infinite_snr(self):
        spec = SynthSpec(n_samples=400, flip_fraction=0.5,
                         tone_snr=float("inf"), seed=6)
        samples = generate_modality_flip(spec)
        assert bayes_flip_accuracy(samples, spec) == 1.0

    def test_flip_swaps_to_partner(self):
        spec = SynthSpec(n_samples=300, flip_fraction=0.5,
                         tone_snr=float("inf"), seed=7)
        token_to_intent = {t: c for c in range(spec.n_intents)
                           for t in spec.intent_token_range(c)}
        flipped = unflipped = 0
        for s in generate_modality_flip(spec):
            pos, intent = next((i, token_to_intent[t])
                               for i, t in enumerate(s.tokens)
                               if t in token_to_intent)
            fpt = len(s.audio) // len(s.tokens)
            tone = s.audio[pos * fpt:(pos + 1) * fpt, 0].mean()
            if tone > 0:
                assert s.label == intent
                unflipped += 1
            else:
                assert s.label == partner_intent(intent)
                flipped += 1
        assert flipped > 100 and unflipped > 100

    def test_determinism_byte_for_byte(self, tmp_path):
        spec = SynthSpec(n_samples=50, seed=7)
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_jsonl(p1, generate_modality_flip(spec), default_meta(spec))
        save_jsonl(p2, generate_modality_flip(SynthSpec(n_samples=50, seed=7)),
                   default_meta(spec))
        assert p1.read_bytes() == p2.read_bytes()

    def test_different_seeds_differ(self):
        a = generate_modality_flip(SynthSpec(n_samples=20, seed=1))
        b = generate_modality_flip(SynthSpec(n_samples=20, seed=2))
        assert any(x.tokens != y.tokens for x, y in zip(a, b))

    def test_frames_per_token_ratio(self):
        for s in generate_modality_flip(SynthSpec(n_samples=20, seed=8)):
            assert s.audio.shape[0] == 2 * len(s.tokens)
            assert s.visual.shape[0] == 2 * len(s.tokens)

    def test_distractors_add_bursts_on_other_bands(self):
        spec = SynthSpec(n_samples=60, n_distractors=2, tone_snr=1000.0, seed=9)
        n_bursty = 0
        for s in generate_modality_flip(spec):
            fpt = 2
            bands = s.audio[:, 0].reshape(len(s.tokens), fpt).mean(axis=1)
            n_bursty += int((np.abs(bands) > 0.5).sum())
        # content band + 2 distractors per sample (lengths >= 4 guarantee room)
        assert n_bursty == 60 * 3


class TestOos:
    def test_requires_positive_fraction(self):
        with pytest.raises(errors.BadSpecError):
            generate_oos(SynthSpec(n_samples=10, oos_fraction=0.0))

    def test_count_reproducible_and_near_fraction(self):
        spec = SynthSpec(n_samples=1000, oos_fraction=0.2, seed=10)
        n1 = sum(s.is_oos for s in generate_oos(spec))
        n2 = sum(s.is_oos for s in generate_oos(spec))
        assert n1 == n2
        assert 140 <= n1 <= 260  # binomial around 200

    def test_oos_tokens_disjoint_from_in_scope(self):
        spec = SynthSpec(n_samples=500, oos_fraction=0.3, seed=11)
        in_scope_tokens = {t for c in range(spec.n_intents)
                           for t in spec.intent_token_range(c)}
        oos_tokens = set()
        for s in generate_oos(spec):
            if s.is_oos:
                oos_tokens.update(t for t in s.tokens
                                  if t >= spec.oos_token_start)
                assert not any(t in in_scope_tokens for t in s.tokens)
        assert oos_tokens
        assert oos_tokens.isdisjoint(in_scope_tokens)

    def test_oos_labels_use_dedicated_class(self):
        spec = SynthSpec(n_samples=300, oos_fraction=0.25, seed=12)
        for s in generate_oos(spec):
            assert s.is_oos == (s.label == spec.oos_class)
            assert s.label <= spec.oos_class

    def test_oos_visual_sign_independent_of_audio(self):
        # in-scope: visual copy always matches audio tone; OOS: both pairings occur
        spec = SynthSpec(n_samples=2000, oos_fraction=0.5,
                         tone_snr=float("inf"), seed=13)
        mismatched_oos = matched_oos = 0
        for s in generate_oos(spec):
            fpt = 2
            bands_a = s.audio[:, 0].reshape(-1, fpt).mean(axis=1)
            bands_v = s.visual[:, 0].reshape(-1, fpt).mean(axis=1)
            pos = int(np.abs(bands_a).argmax())
            if abs(bands_v[pos]) < 0.5:
                continue  # visual uninformative for this sample
            same = (bands_a[pos] > 0) == (bands_v[pos] > 0)
            if s.is_oos:
                matched_oos += same
                mismatched_oos += not same
            else:
                assert same
        assert matched_oos > 50 and mismatched_oos > 50


class TestJsonl:
    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.jsonl"
        p.write_text("")
        samples, meta = load_jsonl(p)
        assert samples == [] and meta is None

    def test_round_trip_exact(self, tmp_path):
        spec = SynthSpec(n_samples=30, oos_fraction=0.3, seed=14)
        samples = generate_oos(spec)
        p = tmp_path / "d.jsonl"
        save_jsonl(p, samples, default_meta(spec))
        loaded, meta = load_jsonl(p)
        assert meta["n_classes"] == spec.n_classes
        assert len(loaded) == len(samples)
        for a, b in zip(samples, loaded):
            assert a.tokens == b.tokens
            assert np.array_equal(a.audio, b.audio)  # f64 lossless
            assert np.array_equal(a.visual, b.visual)
            assert (a.label, a.is_oos) == (b.label, b.is_oos)

    def test_parse_error_carries_line(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"tokens": [2], "audio": [[0.0]], "visual": [[0.0]], "label": 0}\nnot json\n')
        with pytest.raises(errors.ParseError) as exc:
            load_jsonl(p)
        assert exc.value.line == 2

    def test_shape_error_wrong_width(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text(
            '{"meta": {"d_audio": 2, "d_visual": 1, "n_classes": 2}}\n'
            '{"tokens": [2], "audio": [[0.0, 1.0]], "visual": [[0.0]], "label": 0}\n'
            '{"tokens": [2], "audio": [[0.0]], "visual": [[0.0]], "label": 0}\n')
        with pytest.raises(errors.ShapeError) as exc:
            load_jsonl(p)
        assert exc.value.line == 3

    def test_ragged_rows_rejected(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"tokens": [2], "audio": [[0.0], [0.0, 1.0]], '
                     '"visual": [[0.0]], "label": 0}\n')
        with pytest.raises(errors.ShapeError) as exc:
            load_jsonl(p)
        assert exc.value.line == 1

    def test_label_out_of_range(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text(
            '{"meta": {"d_audio": 1, "d_visual": 1, "n_classes": 2}}\n'
            '{"tokens": [2], "audio": [[0.0]], "visual": [[0.0]], "label": 5}\n')
        with pytest.raises(errors.LabelError) as exc:
            load_jsonl(p)
        assert exc.value.line == 2

    def test_missing_keys(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"tokens": [2], "audio": [[0.0]], "label": 0}\n')
        with pytest.raises(errors.ParseError):
            load_jsonl(p)


class TestBatching:
    def test_single_sample_mask(self):
        s = MultimodalSample([2, 3, 4], np.zeros((6, 2)), np.zeros((6, 2)), 1)
        batches = pad_and_batch([s], 4)
        assert len(batches) == 1
        assert batches[0].text_mask[0].sum() == 3
        assert batches[0].text_mask[0].all()

    def test_pad_multiple_rounding(self):
        s3 = MultimodalSample([2, 3, 4], np.zeros((6, 2)), np.zeros((6, 2)), 0)
        s5 = MultimodalSample([2, 3, 4, 5, 6], np.zeros((10, 2)),
                              np.zeros((10, 2)), 1)
        batch = pad_and_batch([s3, s5], 2, pad_multiple=4)[0]
        assert batch.tokens.shape[1] == 8
        assert batch.text_mask[0].sum() == 3
        assert batch.text_mask[1].sum() == 5

    def test_unbatch_round_trip(self):
        spec = SynthSpec(n_samples=17, seed=15)
        samples = generate_modality_flip(spec)
        recovered = []
        for batch in pad_and_batch(samples, 5, pad_multiple=3):
            recovered.extend(unbatch(batch))
        assert len(recovered) == len(samples)
        for a, b in zip(samples, recovered):
            assert a.tokens == b.tokens
            assert np.array_equal(a.audio, b.audio)
            assert np.array_equal(a.visual, b.visual)
            assert a.label == b.label

    def test_pad_id_is_zero(self):
        s = MultimodalSample([2, 3], np.zeros((4, 2)), np.zeros((4, 2)), 0)
        batch = pad_and_batch([s], 1, pad_multiple=4)[0]
        assert (batch.tokens[0, 2:] == 0).all()

    def test_empty_rejected(self):
        with pytest.raises(errors.EmptyDatasetError):
            pad_and_batch([], 4)


class TestValidateSamples:
    def test_accepts_consistent(self):
        samples = generate_modality_flip(SynthSpec(n_samples=5, seed=16))
        d_a, d_v = validate_samples(samples)
        assert (d_a, d_v) == (6, 6)

    def test_rejects_width_mismatch(self):
        good = MultimodalSample([2], np.zeros((2, 3)), np.zeros((2, 3)), 0)
        bad = MultimodalSample([2], np.zeros((2, 4)), np.zeros((2, 3)), 0)
        with pytest.raises(errors.ShapeMismatchError):
            validate_samples([good, bad])

    def test_rejects_empty_tokens(self):
        with pytest.raises(errors.ShapeMismatchError):
            validate_samples([MultimodalSample([], np.zeros((1, 2)),
                                               np.zeros((1, 2)), 0)])


class TestRng:
    def test_same_seed_same_stream(self):
        a = Rng(42)
        b = Rng(42)
        assert [a.next_u64() for _ in range(10)] == [b.next_u64() for _ in range(10)]

    def test_uniform_in_unit_interval(self):
        rng = Rng(0)
        vals = [rng.uniform() for _ in range(1000)]
        assert all(0.0 <= v < 1.0 for v in vals)
        assert 0.4 < np.mean(vals) < 0.6

    def test_randint_bounds(self):
        rng = Rng(1)
        vals = [rng.randint(7) for _ in range(2000)]
        assert set(vals) == set(range(7))

    def test_normal_moments(self):
        vals = Rng(2).normal_array((20000,))
        assert abs(vals.mean()) < 0.03
        assert abs(vals.std() - 1.0) < 0.03

    def test_child_seed_decorrelates(self):
        assert child_seed(0, 0) != child_seed(0, 1)
        assert child_seed(0, 1) != child_seed(1, 0)

    def test_shuffle_is_permutation(self):
        rng = Rng(3)
        items = list(range(50))
        shuffled = items.copy()
        rng.shuffle(shuffled)
        assert sorted(shuffled) == items
        assert shuffled != items
