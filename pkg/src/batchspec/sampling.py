"""Temperature/nucleus sampling and the speculative accept/reject rule.

The accept rule takes a drafted token x with draft probability p(x) and main
probability q(x), accepts with probability min(1, q(x)/p(x)), and on
rejection redraws from the residual distribution normalize(max(q - p, 0)).
One step of this process emits a token whose law is exactly q, which is what
makes speculative decoding lossless.

Randomness comes from counter-based streams keyed by
(global seed, sequence id, role, position counter), so a sequence's draws
never depend on what else shares the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROLE_DRAFT = "draft"
ROLE_VERIFY = "verify"
_ROLE_CODES = {ROLE_DRAFT: 0, ROLE_VERIFY: 1}


@dataclass(frozen=True)
class TokenDistribution:
    """Probabilities per vocab entry after temperature and top-p shaping."""

    probs: np.ndarray

    def __post_init__(self):
        p = self.probs
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probs must be a non-empty vector")
        if not np.isfinite(p).all() or (p < 0).any():
            raise ValueError("probs must be finite and non-negative")
        if abs(float(p.sum()) - 1.0) > 1e-9:
            raise ValueError(f"probs sum to {p.sum()}, expected 1")

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.probs > 0)


@dataclass(frozen=True)
class AcceptDecision:
    """Outcome of one accept/reject test."""

    accepted: bool
    corrected_token: int | None = None


class RngStream:
    """Counter-based pseudo-random streams.

    ``generator(seq_id, role, counter)`` returns an independent, replayable
    generator for that key; draws within one key follow a fixed order set by
    the caller.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    def generator(self, seq_id: int, role: str, counter: int) -> np.random.Generator:
        key = (self.seed, int(seq_id), _ROLE_CODES[role], int(counter))
        return np.random.default_rng(np.random.SeedSequence(entropy=key))


def to_distribution(logits: np.ndarray, temperature: float,
                    top_p: float) -> TokenDistribution:
    """Shape logits into a sampling distribution.

    Temperature 0 collapses to a point mass on the argmax. Otherwise the
    softmax at the given temperature is truncated to the smallest prefix of
    tokens (by descending probability, ties broken by ascending token id)
    whose cumulative mass reaches ``top_p``, then renormalized.
    """
    if not 0.0 < top_p <= 1.0:
        raise ValueError(f"top_p must be in (0, 1], got {top_p}")
    if temperature < 0.0:
        raise ValueError(f"temperature must be >= 0, got {temperature}")
    logits = np.asarray(logits, dtype=np.float64)
    if not (np.isfinite(logits).any()):
        raise ValueError("all logits are -inf; distribution undefined")

    probs = np.zeros_like(logits)
    if temperature == 0.0:
        probs[int(np.argmax(logits))] = 1.0
        return TokenDistribution(probs)

    z = logits / temperature
    z = z - z[np.isfinite(z)].max()
    e = np.exp(z)
    e = np.where(np.isfinite(e), e, 0.0)
    full = e / e.sum()

    # descending probability, ties by ascending token id
    order = np.lexsort((np.arange(full.size), -full))
    csum = np.cumsum(full[order])
    cutoff = min(int(np.searchsorted(csum, top_p, side="left")), full.size - 1)
    keep = order[:cutoff + 1]
    probs[keep] = full[keep]
    probs /= probs.sum()
    return TokenDistribution(probs)


def sample(dist: TokenDistribution, rng: np.random.Generator) -> int:
    """Draw one token by inverse CDF over token-id order."""
    return _inverse_cdf(dist.probs, rng.random())


def _inverse_cdf(probs: np.ndarray, u: float) -> int:
    csum = np.cumsum(probs)
    idx = int(np.searchsorted(csum, u * csum[-1], side="right"))
    return min(idx, probs.size - 1)


def residual_distribution(q: TokenDistribution,
                          p: TokenDistribution) -> TokenDistribution:
    """normalize(max(q - p, 0)); defined whenever rejection is possible."""
    r = np.maximum(q.probs - p.probs, 0.0)
    total = r.sum()
    if total <= 0.0:
        raise ValueError("residual is empty: q <= p everywhere")
    return TokenDistribution(r / total)


def speculative_accept(q_main: TokenDistribution, p_draft: TokenDistribution,
                       draft_token: int,
                       rng: np.random.Generator) -> AcceptDecision:
    """Accept the drafted token with probability min(1, q(x)/p(x)).

    On rejection the corrected token is drawn from the residual
    distribution, so the emitted token's marginal law equals ``q_main``.
    """
    px = float(p_draft.probs[draft_token])
    if px <= 0.0:
        raise ValueError(
            f"draft token {draft_token} has zero draft probability"
        )
    qx = float(q_main.probs[draft_token])
    u = rng.random()
    if u * px < qx:
        return AcceptDecision(accepted=True)
    corrected = sample(residual_distribution(q_main, p_draft), rng)
    return AcceptDecision(accepted=False, corrected_token=corrected)
