import numpy as np
import pytest

from draftverify import (
    MaskedSequence,
    PositionDistributions,
    VerificationConfig,
    VocabSpec,
    verify_confidence,
    verify_kl,
    verify_trust,
)


def dists_from_rows(rows):
    return PositionDistributions(np.asarray(rows, dtype=np.float64))


@pytest.fixture
def vocab4():
    return VocabSpec(4)


def peaked(tok, p, size=4):
    row = [(1.0 - p) / (size - 1)] * size
    row[tok] = p
    return row


class TestTrust:
    def test_identity_on_anything(self, vocab4):
        for toks in [(0, 1, 2), (vocab4.mask_id,) * 3, (3, 3, 3)]:
            seq = MaskedSequence(vocab4, toks)
            out = verify_trust(seq)
            assert out.verified_seq.tokens == seq.tokens
            assert out.remasked == frozenset()


class TestVerifyKL:
    def test_identical_dists_never_remask(self, vocab4, rng):
        seq = MaskedSequence(vocab4, (0, 1, 2))
        dists = dists_from_rows([peaked(t, 0.7) for t in (0, 1, 2)])
        for tau in (1e-9, 0.3, 10.0):
            cfg = VerificationConfig("kl_threshold", tau_kl=tau)
            out = verify_kl(seq, dists, dists, {0, 1, 2}, cfg, rng)
            assert out.remasked == frozenset()
            assert out.verified_seq.tokens == seq.tokens

    def test_threshold_picks_exceeding_positions(self, vocab4, rng):
        seq = MaskedSequence(vocab4, (0, 1, 2))
        drafter = dists_from_rows([peaked(0, 0.97), peaked(1, 0.97), peaked(2, 0.7)])
        verifier = dists_from_rows([peaked(1, 0.97), peaked(1, 0.97), peaked(2, 0.72)])
        cfg = VerificationConfig("kl_threshold", tau_kl=0.3)
        out = verify_kl(seq, drafter, verifier, {0, 1, 2}, cfg, rng)
        # position 0 disagrees hard, 1 agrees exactly, 2 within tolerance
        assert out.remasked == frozenset({0})
        assert out.verified_seq.tokens == (vocab4.mask_id, 1, 2)
        assert out.diagnostics[0].score > 0.3 >= out.diagnostics[2].score

    def test_threshold_monotone_in_tau(self, vocab4, rng):
        seq = MaskedSequence(vocab4, (0, 1, 2, 3))
        drafter = dists_from_rows([peaked(t, 0.9) for t in (0, 1, 2, 3)])
        verifier = dists_from_rows(
            [peaked(1, 0.9), peaked(1, 0.6), peaked(2, 0.9), peaked(0, 0.5)])
        scope = {0, 1, 2, 3}
        previous = None
        for tau in (0.01, 0.1, 0.5, 1.0, 3.0):
            cfg = VerificationConfig("kl_threshold", tau_kl=tau)
            remasked = verify_kl(seq, drafter, verifier, scope, cfg, rng).remasked
            if previous is not None:
                assert remasked <= previous
            previous = remasked

    def test_masked_scope_position_rejected(self, vocab4, rng):
        seq = MaskedSequence(vocab4, (0, vocab4.mask_id))
        dists = dists_from_rows([peaked(0, 0.9)] * 2)
        cfg = VerificationConfig("kl_threshold", tau_kl=0.3)
        with pytest.raises(ValueError):
            verify_kl(seq, dists, dists, {1}, cfg, rng)

    def test_proportional_single_draw_frequencies(self, vocab4):
        # KLs 1.0 vs 3.0 normalize to 0.25/0.75; one draw should hit the
        # first position about a quarter of the time
        seq = MaskedSequence(vocab4, (0, 1))
        drafter = dists_from_rows([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
        # craft verifier rows whose KL against the drafter is exactly 1 and 3
        verifier = dists_from_rows([
            [np.exp(-1.0), 1 - np.exp(-1.0), 0.0, 0.0],
            [1 - np.exp(-3.0), np.exp(-3.0), 0.0, 0.0],
        ])
        cfg = VerificationConfig("kl_proportional", budget=1)
        rng = np.random.default_rng(777)
        hits = np.zeros(2)
        n = 10000
        for _ in range(n):
            out = verify_kl(seq, drafter, verifier, {0, 1}, cfg, rng)
            assert len(out.remasked) == 1
            hits[min(out.remasked)] += 1
        assert abs(hits[0] / n - 0.25) < 0.02
        assert abs(hits[1] / n - 0.75) < 0.02

    def test_proportional_zero_divergence_no_remask(self, vocab4, rng):
        seq = MaskedSequence(vocab4, (0, 1))
        dists = dists_from_rows([peaked(0, 0.9), peaked(1, 0.9)])
        cfg = VerificationConfig("kl_proportional", budget=2)
        out = verify_kl(seq, dists, dists, {0, 1}, cfg, rng)
        assert out.remasked == frozenset()

    def test_proportional_budget_without_replacement(self, vocab4, rng):
        seq = MaskedSequence(vocab4, (0, 1, 2))
        drafter = dists_from_rows([peaked(0, 0.99)] * 3)
        verifier = dists_from_rows([peaked(1, 0.99), peaked(2, 0.99), peaked(3, 0.99)])
        cfg = VerificationConfig("kl_proportional", budget=5)
        out = verify_kl(seq, drafter, verifier, {0, 1, 2}, cfg, rng)
        # budget capped at the number of positive-weight positions
        assert out.remasked == frozenset({0, 1, 2})

    def test_default_budget_scales_with_scope(self):
        cfg = VerificationConfig("kl_proportional")
        assert cfg.effective_budget(5) == 1
        assert cfg.effective_budget(10) == 1
        assert cfg.effective_budget(11) == 2
        assert VerificationConfig("kl_proportional", budget=3).effective_budget(50) == 3


class TestVerifyConfidence:
    def test_one_hot_verifier_never_remasks(self, vocab4, rng):
        seq = MaskedSequence(vocab4, (0, 1, 2))
        rows = np.zeros((3, 4))
        for i, t in enumerate((0, 1, 2)):
            rows[i, t] = 1.0
        cfg = VerificationConfig("conf_threshold", tau_conf=0.99)
        out = verify_confidence(seq, dists_from_rows(rows), {0, 1, 2}, cfg, rng)
        assert out.remasked == frozenset()

    def test_threshold_remasks_low_confidence(self, vocab4, rng):
        seq = MaskedSequence(vocab4, (0, 1))
        verifier = dists_from_rows([peaked(0, 0.4), peaked(1, 0.8)])
        cfg = VerificationConfig("conf_threshold", tau_conf=0.5)
        out = verify_confidence(seq, verifier, {0, 1}, cfg, rng)
        assert out.remasked == frozenset({0})

    def test_threshold_monotone_in_tau(self, vocab4, rng):
        seq = MaskedSequence(vocab4, (0, 1, 2))
        verifier = dists_from_rows([peaked(0, 0.3), peaked(1, 0.6), peaked(2, 0.9)])
        previous = frozenset()
        for tau in (0.2, 0.5, 0.8, 0.95):
            cfg = VerificationConfig("conf_threshold", tau_conf=tau)
            remasked = verify_confidence(seq, verifier, {0, 1, 2}, cfg, rng).remasked
            assert remasked >= previous  # raising tau never un-remasks
            previous = remasked

    def test_probabilistic_rate(self):
        # confidence exactly 0.2 (uniform over 5) -> remask w.p. 0.8
        vocab5 = VocabSpec(5)
        seq = MaskedSequence(vocab5, (0,) * 3)
        rows = [[0.2] * 5] * 3
        cfg = VerificationConfig("conf_probabilistic")
        rng = np.random.default_rng(2718)
        hits = 0
        n = 10000
        for _ in range(n):
            out = verify_confidence(seq, dists_from_rows(rows), {1}, cfg, rng)
            hits += 1 in out.remasked
        assert abs(hits / n - 0.8) < 0.02

    def test_outcome_only_touches_remasked(self, vocab4, rng):
        seq = MaskedSequence(vocab4, (0, 1, 2, 3))
        verifier = dists_from_rows([peaked(0, 0.2), peaked(1, 0.95),
                                    peaked(2, 0.2), peaked(3, 0.95)])
        cfg = VerificationConfig("conf_threshold", tau_conf=0.5)
        out = verify_confidence(seq, verifier, {0, 1, 2, 3}, cfg, rng)
        assert out.remasked == frozenset({0, 2})
        for i in range(4):
            if i in out.remasked:
                assert out.verified_seq.tokens[i] == vocab4.mask_id
            else:
                assert out.verified_seq.tokens[i] == seq.tokens[i]


class TestConfigValidation:
    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            VerificationConfig("kl_threshold")
        with pytest.raises(ValueError):
            VerificationConfig("kl_threshold", tau_kl=0.0)
        with pytest.raises(ValueError):
            VerificationConfig("conf_threshold", tau_conf=1.0)
        with pytest.raises(ValueError):
            VerificationConfig("kl_proportional", budget=0)
        with pytest.raises(ValueError):
            VerificationConfig("majority_vote")
        with pytest.raises(ValueError):
            VerificationConfig("trust", drafter_dist_source="cached")
        with pytest.raises(ValueError):
            VerificationConfig("trust", scope="everything")
