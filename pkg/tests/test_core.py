import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from draftverify.core import (
    MaskedSequence,
    PositionDistributions,
    VocabSpec,
    categorical_index,
    choose_without_replacement,
    confidence,
    kl_divergence,
    masked_positions,
    normalize_remask_weights,
)

from reference import kl_reference


def simplex(size):
    return (
        st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=size, max_size=size)
        .filter(lambda xs: sum(xs) > 1e-6)
        .map(lambda xs: np.array(xs) / np.sum(xs))
    )


class TestVocabSpec:
    def test_mask_id_is_one_past_last_token(self):
        v = VocabSpec(8)
        assert v.mask_id == 8
        assert not v.contains(v.mask_id)
        assert v.contains(0) and v.contains(7)

    @pytest.mark.parametrize("size", [1, 0, -3])
    def test_rejects_tiny_vocab(self, size):
        with pytest.raises(ValueError):
            VocabSpec(size)


class TestMaskedSequence:
    def test_masked_positions_examples(self, vocab2):
        mask = vocab2.mask_id
        assert masked_positions(MaskedSequence(vocab2, (mask, 1, mask))) == (0, 2)
        assert masked_positions(MaskedSequence(vocab2, (1, 0, 1))) == ()
        full = MaskedSequence.fully_masked(vocab2, 5)
        assert masked_positions(full) == (0, 1, 2, 3, 4)

    def test_rejects_out_of_vocab_tokens(self, vocab2):
        with pytest.raises(ValueError):
            MaskedSequence(vocab2, (0, 3))
        with pytest.raises(ValueError):
            MaskedSequence(vocab2, ())

    def test_assignment_refuses_unmasked_target(self, vocab2):
        seq = MaskedSequence(vocab2, (0, vocab2.mask_id))
        assert seq.with_assignments({1: 1}).tokens == (0, 1)
        with pytest.raises(ValueError):
            seq.with_assignments({0: 1})

    def test_remask_refuses_masked_target(self, vocab2):
        seq = MaskedSequence(vocab2, (0, vocab2.mask_id))
        assert seq.with_remasked([0]).tokens == (vocab2.mask_id, vocab2.mask_id)
        with pytest.raises(ValueError):
            seq.with_remasked([1])

    def test_prompt_must_fit(self, vocab2):
        with pytest.raises(ValueError):
            MaskedSequence.fully_masked(vocab2, 2, prompt=(0, 1))


class TestKLDivergence:
    def test_identity_is_exactly_zero(self):
        p = np.array([0.25, 0.5, 0.25])
        assert kl_divergence(p, p) == 0.0

    def test_reference_value(self):
        # frozen from the high-precision reference in reference.py
        got = kl_divergence([0.9, 0.1], [0.5, 0.5])
        assert got == pytest.approx(0.36806420716849715, abs=1e-9)
        assert got == pytest.approx(kl_reference([0.9, 0.1], [0.5, 0.5]), abs=1e-12)

    def test_zero_mass_terms_drop(self):
        # single surviving term: 1.0 * ln(1.0 / 0.5)
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(
            math.log(2.0), abs=1e-12)

    def test_zero_q_entry_stays_finite(self):
        value = kl_divergence([0.5, 0.5], [1.0, 0.0])
        assert math.isfinite(value)
        assert value == pytest.approx(0.5 * math.log(0.5 / 1e-12) + 0.5 * math.log(0.5),
                                      abs=1e-9)

    def test_length_mismatch_raises(self):
        with pytest.raises(ValueError):
            kl_divergence([1.0], [0.5, 0.5])

    @given(simplex(4), simplex(4))
    @settings(max_examples=200, deadline=None)
    def test_nonnegative(self, p, q):
        assert kl_divergence(p, q) >= 0.0

    @given(simplex(5))
    @settings(max_examples=100, deadline=None)
    def test_self_divergence_zero(self, p):
        assert kl_divergence(p, p) == 0.0


class TestConfidence:
    @pytest.mark.parametrize("probs,expected", [
        ([0.2, 0.5, 0.3], 0.5),
        ([0.0, 1.0, 0.0], 1.0),
        ([0.25, 0.25, 0.25, 0.25], 0.25),
    ])
    def test_examples(self, probs, expected):
        assert confidence(probs) == pytest.approx(expected)

    @given(simplex(6))
    @settings(max_examples=100, deadline=None)
    def test_lower_bound(self, p):
        assert confidence(p) >= 1.0 / 6 - 1e-12


class TestNormalizeRemaskWeights:
    def test_examples(self):
        assert normalize_remask_weights({0: 1.0, 1: 3.0}) == {0: 0.25, 1: 0.75}
        assert normalize_remask_weights({0: 0.0, 1: 0.0}) == {}
        assert normalize_remask_weights({7: 2.0}) == {7: 1.0}

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            normalize_remask_weights({0: -0.1})

    @given(st.dictionaries(st.integers(0, 20),
                           st.floats(0.0, 100.0, allow_nan=False),
                           min_size=1, max_size=8))
    @settings(max_examples=150, deadline=None)
    def test_sums_to_one_and_preserves_argmax(self, weights):
        out = normalize_remask_weights(weights)
        if not out:
            assert all(v == 0.0 for v in weights.values())
            return
        assert sum(out.values()) == pytest.approx(1.0, abs=1e-9)
        best_in = max(weights, key=lambda k: (weights[k], -k))
        best_out = max(out, key=lambda k: (out[k], -k))
        assert best_in == best_out


class TestPositionDistributions:
    def test_validates_rows(self):
        with pytest.raises(ValueError):
            PositionDistributions(np.array([[0.6, 0.2]]))
        with pytest.raises(ValueError):
            PositionDistributions(np.array([[1.2, -0.2]]))

    def test_rows_are_read_only(self):
        d = PositionDistributions.uniform(3, 4)
        with pytest.raises(ValueError):
            d.probs[0, 0] = 1.0


class TestSamplingHelpers:
    def test_categorical_respects_weights(self, rng):
        counts = np.zeros(3)
        for _ in range(30000):
            counts[categorical_index(rng, [0.2, 0.0, 0.8])] += 1
        freqs = counts / counts.sum()
        assert freqs[1] == 0.0
        assert freqs[0] == pytest.approx(0.2, abs=0.02)

    def test_choose_without_replacement_is_uniformish(self, rng):
        counts = np.zeros(5)
        for _ in range(20000):
            for pick in choose_without_replacement(rng, [0, 1, 2, 3, 4], 2):
                counts[pick] += 1
        freqs = counts / counts.sum()
        assert np.all(np.abs(freqs - 0.2) < 0.02)

    def test_choose_rejects_overdraw(self, rng):
        with pytest.raises(ValueError):
            choose_without_replacement(rng, [1, 2], 3)
