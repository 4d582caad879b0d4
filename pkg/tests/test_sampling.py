import numpy as np
import pytest

from batchspec.sampling import (
    ROLE_DRAFT,
    ROLE_VERIFY,
    RngStream,
    TokenDistribution,
    residual_distribution,
    sample,
    speculative_accept,
    to_distribution,
)


def random_dist(rng, vocab=16, temperature=1.0, top_p=1.0):
    return to_distribution(rng.standard_normal(vocab), temperature, top_p)


class TestToDistribution:
    def test_temperature_zero_is_argmax(self):
        dist = to_distribution(np.array([1.0, 3.0, 2.0]), 0.0, 0.9)
        np.testing.assert_array_equal(dist.probs, [0.0, 1.0, 0.0])

    def test_argmax_invariant_to_rescaling(self):
        rng = np.random.default_rng(42)
        logits = rng.standard_normal(32)
        for scale in (0.1, 3.0, 250.0):
            a = to_distribution(logits, 0.0, 1.0)
            b = to_distribution(scale * logits, 0.0, 1.0)
            np.testing.assert_array_equal(a.probs, b.probs)

    def test_top_p_one_keeps_full_softmax(self):
        logits = np.array([0.5, -1.0, 2.0, 0.0])
        dist = to_distribution(logits, 1.0, 1.0)
        ref = np.exp(logits) / np.exp(logits).sum()
        np.testing.assert_allclose(dist.probs, ref, atol=1e-12)
        assert (dist.probs > 0).all()

    def test_hand_computed_truncation(self):
        # softmax([0, 0, ln 2]) = (0.25, 0.25, 0.5); top_p = 0.5 keeps only
        # index 2, renormalized to a point mass
        dist = to_distribution(np.array([0.0, 0.0, np.log(2.0)]), 1.0, 0.5)
        np.testing.assert_allclose(dist.probs, [0.0, 0.0, 1.0], atol=1e-12)

    def test_tie_break_by_token_id(self):
        # equal probabilities: the truncation boundary keeps lower ids first
        dist = to_distribution(np.zeros(4), 1.0, 0.5)
        np.testing.assert_allclose(dist.probs, [0.5, 0.5, 0.0, 0.0],
                                   atol=1e-12)

    def test_all_minus_inf_rejected(self):
        with pytest.raises(ValueError):
            to_distribution(np.full(4, -np.inf), 1.0, 0.9)

    def test_parameter_validation(self):
        logits = np.zeros(4)
        with pytest.raises(ValueError):
            to_distribution(logits, 1.0, 0.0)
        with pytest.raises(ValueError):
            to_distribution(logits, 1.0, 1.5)
        with pytest.raises(ValueError):
            to_distribution(logits, -0.1, 0.9)


class TestSample:
    def test_point_mass_always_sampled(self):
        dist = TokenDistribution(np.array([0.0, 0.0, 1.0, 0.0]))
        rng = np.random.default_rng(42)
        assert all(sample(dist, rng) == 2 for _ in range(100))

    def test_uniform_frequencies(self):
        dist = TokenDistribution(np.full(4, 0.25))
        rng = np.random.default_rng(0)
        draws = np.array([sample(dist, rng) for _ in range(100_000)])
        freqs = np.bincount(draws, minlength=4) / draws.size
        np.testing.assert_allclose(freqs, 0.25, atol=0.01)

    def test_fixed_key_replays_identically(self):
        stream = RngStream(123)
        dist = TokenDistribution(np.full(8, 0.125))
        a = sample(dist, stream.generator(3, ROLE_DRAFT, 17))
        b = sample(dist, stream.generator(3, ROLE_DRAFT, 17))
        assert a == b

    def test_distinct_keys_are_independent_streams(self):
        stream = RngStream(123)
        draws = {
            (seq, role, ctr): stream.generator(seq, role, ctr).random()
            for seq in range(3) for role in (ROLE_DRAFT, ROLE_VERIFY)
            for ctr in range(3)
        }
        assert len(set(draws.values())) == len(draws)


class TestSpeculativeAccept:
    def test_identical_distributions_always_accept(self):
        rng_dist = np.random.default_rng(42)
        q = random_dist(rng_dist)
        rng = np.random.default_rng(7)
        for _ in range(200):
            tok = sample(q, rng)
            decision = speculative_accept(q, q, tok, rng)
            assert decision.accepted

    def test_point_mass_acceptance_rate(self):
        # draft always proposes token 0; q(0) = 0.5, so about half accept
        q = TokenDistribution(np.array([0.5, 0.5, 0.0]))
        p = TokenDistribution(np.array([1.0, 0.0, 0.0]))
        rng = np.random.default_rng(11)
        hits = sum(speculative_accept(q, p, 0, rng).accepted
                   for _ in range(10_000))
        assert abs(hits / 10_000 - 0.5) < 0.02

    def test_zero_draft_probability_is_caller_bug(self):
        q = TokenDistribution(np.array([0.5, 0.5]))
        p = TokenDistribution(np.array([1.0, 0.0]))
        with pytest.raises(ValueError):
            speculative_accept(q, p, 1, np.random.default_rng(0))

    def test_corrected_token_in_main_support(self):
        rng_dist = np.random.default_rng(1)
        rng = np.random.default_rng(2)
        for _ in range(50):
            q = random_dist(rng_dist, temperature=0.7, top_p=0.9)
            p = random_dist(rng_dist, temperature=0.7, top_p=0.9)
            tok = sample(p, rng)
            decision = speculative_accept(q, p, tok, rng)
            if not decision.accepted:
                assert q.probs[decision.corrected_token] > 0


def analytic_emitted_law(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Exact one-step emitted-token law by enumeration: accepted mass
    min(p, q) plus total rejection mass routed through the residual."""
    accept = np.minimum(p, q)
    reject_mass = 1.0 - accept.sum()
    emitted = accept.copy()
    if reject_mass > 0:
        residual = np.maximum(q - p, 0.0)
        emitted += reject_mass * residual / residual.sum()
    return emitted


class TestDistributionPreservation:
    def test_analytic_law_equals_main(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            q = random_dist(rng, vocab=12)
            p = random_dist(rng, vocab=12)
            law = analytic_emitted_law(q.probs, p.probs)
            np.testing.assert_allclose(law, q.probs, atol=1e-9)

    def test_monte_carlo_marginal_matches(self):
        rng_dist = np.random.default_rng(3)
        q = random_dist(rng_dist, vocab=8)
        p = random_dist(rng_dist, vocab=8)
        rng = np.random.default_rng(4)
        counts = np.zeros(8)
        n = 20_000
        for _ in range(n):
            tok = sample(p, rng)
            decision = speculative_accept(q, p, tok, rng)
            emitted = tok if decision.accepted else decision.corrected_token
            counts[emitted] += 1
        tv = 0.5 * np.abs(counts / n - q.probs).sum()
        assert tv < 0.02

    def test_residual_is_distribution_when_rejection_possible(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            q = random_dist(rng)
            p = random_dist(rng)
            if np.minimum(q.probs, p.probs).sum() < 1.0 - 1e-12:
                r = residual_distribution(q, p)
                assert abs(r.probs.sum() - 1.0) < 1e-9
                assert (r.probs >= 0).all()


class TestTokenDistributionInvariants:
    def test_rejects_negative_and_unnormalized(self):
        with pytest.raises(ValueError):
            TokenDistribution(np.array([0.5, -0.1, 0.6]))
        with pytest.raises(ValueError):
            TokenDistribution(np.array([0.5, 0.4]))

    def test_support_nonempty(self):
        d = TokenDistribution(np.array([0.0, 1.0]))
        assert d.support.tolist() == [1]
