import numpy as np
import pytest

from draftverify import (
    MarkovOracle,
    MaskedSequence,
    NoiseSchedule,
    UniformModel,
    UnmaskPolicy,
    VocabSpec,
    forward_mask,
    unmask_step,
)
from draftverify.pipeline import DecodeProvenance


class TestNoiseSchedule:
    @pytest.mark.parametrize("kind", ["linear", "cosine"])
    def test_boundaries_and_monotonicity(self, kind):
        sched = NoiseSchedule(kind)
        assert sched.alpha(0.0) == pytest.approx(0.0, abs=1e-12)
        assert sched.alpha(1.0) == pytest.approx(1.0, abs=1e-12)
        ts = np.linspace(0, 1, 101)
        vals = [sched.alpha(t) for t in ts]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            NoiseSchedule("quadratic")
        with pytest.raises(ValueError):
            NoiseSchedule("linear").alpha(1.5)


class TestForwardMask:
    def test_boundary_times(self, vocab2, rng):
        x0 = MaskedSequence(vocab2, (0, 1, 0, 1))
        sched = NoiseSchedule("linear")
        assert forward_mask(x0, 0.0, sched, rng).tokens == x0.tokens
        assert forward_mask(x0, 1.0, sched, rng).num_masked() == 4

    def test_rejects_masked_input(self, vocab2, rng):
        seq = MaskedSequence.fully_masked(vocab2, 3)
        with pytest.raises(ValueError):
            forward_mask(seq, 0.5, NoiseSchedule("linear"), rng)

    def test_mask_rate_statistics(self, vocab2):
        # linear schedule, t=0.3, L=1000, 100 trials: binomial mean well
        # inside +/- 0.02
        rng = np.random.default_rng(2024)
        x0 = MaskedSequence(vocab2, tuple([0, 1] * 500))
        sched = NoiseSchedule("linear")
        fractions = [forward_mask(x0, 0.3, sched, rng).num_masked() / 1000
                     for _ in range(100)]
        assert abs(np.mean(fractions) - 0.30) < 0.02

    def test_per_position_rate(self, vocab2):
        rng = np.random.default_rng(7)
        x0 = MaskedSequence(vocab2, (0, 1, 0, 1, 0))
        sched = NoiseSchedule("linear")
        hits = np.zeros(5)
        n = 10000
        for _ in range(n):
            xt = forward_mask(x0, 0.4, sched, rng)
            for i in xt.masked_positions():
                hits[i] += 1
        assert np.all(np.abs(hits / n - 0.4) < 0.02)

    def test_seed_determinism(self, vocab2):
        x0 = MaskedSequence(vocab2, (0, 1) * 8)
        sched = NoiseSchedule("cosine")
        a = forward_mask(x0, 0.5, sched, np.random.default_rng(3))
        b = forward_mask(x0, 0.5, sched, np.random.default_rng(3))
        assert a.tokens == b.tokens


class _ScriptedModel(UniformModel):
    """Uniform everywhere except scripted per-position confidences."""

    def __init__(self, vocab, peaks):
        super().__init__(vocab)
        self.peaks = peaks  # position -> (token, prob)

    def _predict(self, seq):
        probs = np.full((len(seq), self.vocab.size), np.nan)
        for i in range(len(seq)):
            if i in self.peaks:
                tok, p = self.peaks[i]
                rest = (1.0 - p) / (self.vocab.size - 1)
                probs[i] = rest
                probs[i, tok] = p
            else:
                probs[i] = 1.0 / self.vocab.size
        from draftverify.core import PositionDistributions
        return PositionDistributions(probs)


class TestUnmaskStep:
    def test_requires_masked_positions(self, sticky_chain, rng):
        seq = MaskedSequence(sticky_chain.vocab, (0, 1))
        with pytest.raises(ValueError):
            unmask_step(sticky_chain, seq, UnmaskPolicy.top_k(1), rng)

    def test_top_k_selects_highest_confidence(self, rng):
        vocab = VocabSpec(4)
        model = _ScriptedModel(vocab, {0: (1, 0.9), 3: (2, 0.2 + 0.2), 5: (0, 0.7)})
        seq = MaskedSequence(vocab, (vocab.mask_id, 1, 2, vocab.mask_id, 3,
                                     vocab.mask_id))
        out = unmask_step(model, seq, UnmaskPolicy.top_k(2), rng)
        assert out.masked_positions() == (3,)
        assert out.tokens[0] == 1 and out.tokens[5] == 0

    def test_top_k_select_all_in_one_step(self, sticky_chain, rng):
        seq = MaskedSequence.fully_masked(sticky_chain.vocab, 6)
        out = unmask_step(sticky_chain, seq, UnmaskPolicy.top_k(6), rng)
        assert out.is_complete()

    def test_threshold_fallback_unmasks_single_best(self, rng):
        vocab = VocabSpec(4)
        model = _ScriptedModel(vocab, {0: (1, 0.6), 2: (2, 0.8)})
        seq = MaskedSequence(vocab, (vocab.mask_id, 0, vocab.mask_id))
        policy = UnmaskPolicy.confidence_threshold(1.0 - 1e-9)
        out = unmask_step(model, seq, policy, rng)
        assert out.masked_positions() == (0,)
        assert out.tokens[2] == 2

    def test_threshold_takes_all_qualifying(self, rng):
        vocab = VocabSpec(4)
        model = _ScriptedModel(vocab, {0: (1, 0.9), 1: (2, 0.85), 2: (3, 0.3)})
        seq = MaskedSequence.fully_masked(vocab, 3)
        out = unmask_step(model, seq, UnmaskPolicy.confidence_threshold(0.8), rng)
        assert out.masked_positions() == (2,)

    def test_random_policy_progress_and_determinism(self, sticky_chain):
        seq = MaskedSequence.fully_masked(sticky_chain.vocab, 8)
        policy = UnmaskPolicy.random(3)
        a = unmask_step(sticky_chain, seq, policy, np.random.default_rng(11))
        b = unmask_step(sticky_chain, seq, policy, np.random.default_rng(11))
        assert a.tokens == b.tokens
        assert a.num_masked() == 5

    def test_never_touches_unmasked_positions(self, sticky_chain, rng):
        seq = MaskedSequence(sticky_chain.vocab, (0, 2, 1, 2))
        out = unmask_step(sticky_chain, seq, UnmaskPolicy.top_k(4), rng)
        assert out.tokens[0] == 0 and out.tokens[2] == 1
        assert out.num_masked() == 0

    def test_progress_is_strict(self, sticky_chain, rng):
        seq = MaskedSequence.fully_masked(sticky_chain.vocab, 5)
        for policy in (UnmaskPolicy.top_k(1),
                       UnmaskPolicy.confidence_threshold(0.999999),
                       UnmaskPolicy.random(1)):
            out = unmask_step(sticky_chain, seq, policy, rng)
            assert out.num_masked() < seq.num_masked()

    def test_tie_break_prefers_lower_index(self, rng):
        vocab = VocabSpec(4)
        model = UniformModel(vocab)  # every confidence ties at 0.25
        seq = MaskedSequence.fully_masked(vocab, 5)
        out = unmask_step(model, seq, UnmaskPolicy.top_k(2), rng)
        assert out.masked_positions() == (2, 3, 4)

    def test_exactly_one_forward_pass(self, sticky_chain, rng):
        seq = MaskedSequence.fully_masked(sticky_chain.vocab, 4)
        before = sticky_chain.call_count
        unmask_step(sticky_chain, seq, UnmaskPolicy.top_k(2), rng)
        assert sticky_chain.call_count == before + 1

    def test_records_provenance(self, sticky_chain, rng):
        seq = MaskedSequence.fully_masked(sticky_chain.vocab, 4, prompt=(0,))
        prov = DecodeProvenance(4)
        prov.record_prompt(0)
        out = unmask_step(sticky_chain, seq, UnmaskPolicy.top_k(2), rng,
                          prov, cycle=3, role="drafter")
        decoded = [i for i in range(4) if prov.roles[i] == "drafter"]
        assert len(decoded) == 2
        for i in decoded:
            assert prov.cycles[i] == 3
            assert prov.dists[i] is not None
            assert out.tokens[i] == int(np.argmax(prov.dists[i]))

    def test_sample_commit_mode_draws_from_row(self):
        vocab = VocabSpec(2)
        model = _ScriptedModel(vocab, {0: (1, 0.8)})
        seq = MaskedSequence.fully_masked(vocab, 1)
        rng = np.random.default_rng(42)
        hits = 0
        n = 10000
        policy = UnmaskPolicy(kind="top_k", k=1, commit_mode="sample")
        for _ in range(n):
            out = unmask_step(model, seq, policy, rng)
            hits += out.tokens[0] == 1
        assert abs(hits / n - 0.8) < 0.02
