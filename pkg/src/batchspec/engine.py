"""Regular and batched speculative decoding.

The speculative loop per step: the draft proposes a uniform number of tokens
per active sequence, the main model verifies all of them in one ragged block
(last committed token + proposals, giving draft_length + 1 next-token
distributions per sequence), each sequence accepts a prefix and commits a
corrected token at its first rejection or a bonus token on full acceptance,
and both caches roll back to each sequence's committed prefix.

Randomness is keyed per (seed, sequence id, role, absolute position), and
the bonus token is drawn through the same draft-coupled accept/reject
composite as any other position. Together these make a sequence's sampled
output depend only on (prompt, seed, sequence id) - never on batch
composition or on how the draft-length schedule happened to slice the run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .attention import AttentionStrategy
from .sampling import (
    ROLE_DRAFT,
    ROLE_VERIFY,
    RngStream,
    sample,
    speculative_accept,
    to_distribution,
)


@dataclass
class GenerationRequest:
    prompts: list[list[int]]
    max_new_tokens: int
    temperature: float = 1.0
    top_p: float = 1.0
    eos_token: int | None = None
    strategy: AttentionStrategy = AttentionStrategy.PAD
    seed: int = 0
    sequence_ids: list[int] | None = None  # defaults to slot index

    def __post_init__(self):
        if len(self.prompts) < 1:
            raise ValueError("batch size must be >= 1")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if any(len(p) < 1 for p in self.prompts):
            raise ValueError("every prompt needs at least one token")
        if self.sequence_ids is None:
            self.sequence_ids = list(range(len(self.prompts)))
        elif len(self.sequence_ids) != len(self.prompts):
            raise ValueError("sequence_ids must match batch size")

    @property
    def batch_size(self) -> int:
        return len(self.prompts)


@dataclass(frozen=True)
class SpecStepOutcome:
    """One decoding step: who was active, what they accepted and emitted."""

    step_index: int
    draft_length: int
    slots: tuple[int, ...]
    accepted: tuple[int, ...]                # accepted draft tokens per slot
    emitted: tuple[tuple[int, ...], ...]     # committed tokens per slot
    finished: tuple[bool, ...]
    kv_lengths: tuple[int, ...]              # committed length of all slots
    duration_s: float


@dataclass
class GenerationResult:
    mode: str
    prompts: list[list[int]]
    sequence_ids: list[int]
    tokens: list[list[int]]
    logprobs: list[list[float]]
    finish_reason: list[str]                 # "eos" | "length"
    completion_step: list[int]
    finish_wall_s: list[float]
    steps: list[SpecStepOutcome]
    wall_time_s: float
    main_forward_calls: int
    draft_forward_calls: int


def step_trace(result: GenerationResult) -> list[SpecStepOutcome]:
    """The recorded per-step trace, verbatim."""
    return result.steps


def _log_softmax_at(raw: np.ndarray, token: int) -> float:
    return float(raw[token] - logsumexp(raw))


def _finalize_emitted(emitted: list[int], generated: list[int],
                      max_new_tokens: int,
                      eos_token: int | None) -> tuple[list[int], str | None]:
    """Apply EOS and length budgets to a step's committed run."""
    reason = None
    if eos_token is not None and eos_token in emitted:
        emitted = emitted[:emitted.index(eos_token) + 1]
        reason = "eos"
    remaining = max_new_tokens - len(generated)
    if len(emitted) > remaining:
        emitted = emitted[:remaining]
        reason = "length"
    elif len(emitted) == remaining and reason is None:
        reason = "length"
    return emitted, reason


def decode_regular(main, request: GenerationRequest) -> GenerationResult:
    """Auto-regressive decoding, one token per sequence per step."""
    b = request.batch_size
    greedy = request.temperature == 0.0
    stream = RngStream(request.seed)
    for p in request.prompts:
        if len(p) + request.max_new_tokens > main.max_seq_len:
            raise ValueError(
                f"prompt ({len(p)}) + max_new_tokens "
                f"({request.max_new_tokens}) exceeds max_seq_len "
                f"{main.max_seq_len}"
            )

    t_start = time.perf_counter()
    cur_logits = [main.prefill(slot, request.prompts[slot]) for slot in range(b)]
    main_calls = b

    generated: list[list[int]] = [[] for _ in range(b)]
    logprobs: list[list[float]] = [[] for _ in range(b)]
    reason = [""] * b
    completion_step = [0] * b
    finish_wall = [0.0] * b
    done = [False] * b
    steps: list[SpecStepOutcome] = []
    step_idx = 0

    while not all(done):
        step_idx += 1
        t0 = time.perf_counter()
        active = [s for s in range(b) if not done[s]]
        emitted_step = []
        for slot in active:
            raw = cur_logits[slot]
            pos = len(request.prompts[slot]) + len(generated[slot])
            if greedy:
                tok = int(np.argmax(raw))
            else:
                dist = to_distribution(raw, request.temperature, request.top_p)
                gen_rng = stream.generator(request.sequence_ids[slot],
                                           ROLE_VERIFY, pos)
                tok = sample(dist, gen_rng)
            generated[slot].append(tok)
            logprobs[slot].append(_log_softmax_at(raw, tok))
            emitted_step.append((tok,))
            if request.eos_token is not None and tok == request.eos_token:
                done[slot], reason[slot] = True, "eos"
            elif len(generated[slot]) >= request.max_new_tokens:
                done[slot], reason[slot] = True, "length"

        survivors = [s for s in active if not done[s]]
        if survivors:
            outs = main.forward(survivors, [[generated[s][-1]] for s in survivors])
            main_calls += len(survivors)
            for s, out in zip(survivors, outs):
                cur_logits[s] = out[-1]

        now = time.perf_counter()
        for slot in active:
            if done[slot] and completion_step[slot] == 0:
                completion_step[slot] = step_idx
                finish_wall[slot] = now - t_start
        steps.append(SpecStepOutcome(
            step_index=step_idx, draft_length=0, slots=tuple(active),
            accepted=tuple(0 for _ in active), emitted=tuple(emitted_step),
            finished=tuple(done[s] for s in active),
            kv_lengths=tuple(len(request.prompts[s]) + len(generated[s])
                             for s in range(b)),
            duration_s=now - t0,
        ))

    return GenerationResult(
        mode="regular", prompts=request.prompts,
        sequence_ids=list(request.sequence_ids),
        tokens=generated, logprobs=logprobs, finish_reason=reason,
        completion_step=completion_step, finish_wall_s=finish_wall,
        steps=steps, wall_time_s=time.perf_counter() - t_start,
        main_forward_calls=main_calls, draft_forward_calls=0,
    )


def decode_speculative(main, draft, request: GenerationRequest,
                       controller) -> GenerationResult:
    """Batched speculative decoding with per-sequence accept/rollback."""
    b = request.batch_size
    if main.vocab_size != draft.vocab_size:
        raise ValueError(
            f"vocab mismatch: main {main.vocab_size} vs draft "
            f"{draft.vocab_size}"
        )
    limit = controller.max_length
    for p in request.prompts:
        if len(p) + request.max_new_tokens + limit > main.max_seq_len:
            raise ValueError(
                f"context overflow: prompt ({len(p)}) + max_new_tokens "
                f"({request.max_new_tokens}) + draft limit ({limit}) "
                f"exceeds max_seq_len {main.max_seq_len}"
            )

    greedy = request.temperature == 0.0
    stream = RngStream(request.seed)
    sids = request.sequence_ids
    committed = [list(p) for p in request.prompts]
    generated: list[list[int]] = [[] for _ in range(b)]
    logprobs: list[list[float]] = [[] for _ in range(b)]
    reason = [""] * b
    completion_step = [0] * b
    finish_wall = [0.0] * b
    done = [False] * b
    steps: list[SpecStepOutcome] = []
    main_calls = 0
    draft_calls = 0
    step_idx = 0
    t_start = time.perf_counter()

    def shaped(raw):
        return to_distribution(raw, request.temperature, request.top_p)

    while not all(done):
        step_idx += 1
        t0 = time.perf_counter()
        l_draft = controller.length
        active = [s for s in range(b) if not done[s]]

        # draft phase: l_draft proposals per sequence, batched by position.
        # The first feed re-encodes whatever committed suffix the draft has
        # not seen (normally just the last committed token).
        proposals: dict[int, list[int]] = {s: [] for s in active}
        pdists: dict[int, list] = {s: [] for s in active}
        feeds = {s: committed[s][draft.length(s):] for s in active}
        for j in range(l_draft):
            outs = draft.forward(active, [feeds[s] for s in active])
            draft_calls += len(active)
            for slot, out in zip(active, outs):
                raw = out[-1]
                pos = len(committed[slot]) + j
                if greedy:
                    tok = int(np.argmax(raw))
                else:
                    dist = shaped(raw)
                    tok = sample(dist, stream.generator(sids[slot],
                                                        ROLE_DRAFT, pos))
                    pdists[slot].append(dist)
                proposals[slot].append(tok)
                feeds[slot] = [tok]

        # verification: one ragged block per sequence covering the unseen
        # committed suffix plus all proposals; the last l_draft + 1 rows are
        # the next-token distributions at the proposal and bonus positions.
        blocks = [committed[s][main.length(s):] + proposals[s] for s in active]
        outs = main.forward(active, blocks)
        main_calls += len(active)
        ver = {s: out[-(l_draft + 1):] for s, out in zip(active, outs)}

        # accept pass: prefix acceptance, corrected token on first rejection
        accepted_n: dict[int, int] = {}
        emitted_core: dict[int, list[int]] = {}
        for slot in active:
            c0 = len(committed[slot])
            x = 0
            emitted: list[int] = []
            for j in range(l_draft):
                raw_q = ver[slot][j]
                tok = proposals[slot][j]
                if greedy:
                    am = int(np.argmax(raw_q))
                    if tok == am:
                        emitted.append(tok)
                        x += 1
                    else:
                        emitted.append(am)
                        break
                else:
                    dec = speculative_accept(
                        shaped(raw_q), pdists[slot][j], tok,
                        stream.generator(sids[slot], ROLE_VERIFY, c0 + j))
                    if dec.accepted:
                        emitted.append(tok)
                        x += 1
                    else:
                        emitted.append(dec.corrected_token)
                        break
            accepted_n[slot] = x
            emitted_core[slot] = emitted

        # bonus pass: sequences that accepted their whole draft commit one
        # extra token from the final verification distribution, drawn via
        # the same accept/reject composite against the draft's distribution
        # at that position (one extra draft forward supplies it)
        needs_bonus: list[int] = []
        for slot in active:
            if accepted_n[slot] != l_draft:
                continue
            hit_eos = (request.eos_token is not None
                       and request.eos_token in emitted_core[slot])
            remaining = request.max_new_tokens - len(generated[slot])
            if not hit_eos and remaining > l_draft:
                needs_bonus.append(slot)

        bonus_pd = {}
        if needs_bonus and not greedy:
            outs_b = draft.forward(needs_bonus,
                                   [[proposals[s][-1]] for s in needs_bonus])
            draft_calls += len(needs_bonus)
            for slot, out in zip(needs_bonus, outs_b):
                bonus_pd[slot] = shaped(out[-1])

        bonus_slots = set(needs_bonus)
        step_emitted: dict[int, list[int]] = {}
        for slot in active:
            emitted = emitted_core[slot]
            if slot in bonus_slots:
                pos = len(committed[slot]) + l_draft
                raw_b = ver[slot][l_draft]
                if greedy:
                    emitted.append(int(np.argmax(raw_b)))
                else:
                    pd = bonus_pd[slot]
                    tok_b = sample(pd, stream.generator(sids[slot],
                                                        ROLE_DRAFT, pos))
                    dec = speculative_accept(
                        shaped(raw_b), pd, tok_b,
                        stream.generator(sids[slot], ROLE_VERIFY, pos))
                    emitted.append(tok_b if dec.accepted
                                   else dec.corrected_token)

            emitted, fin = _finalize_emitted(emitted, generated[slot],
                                             request.max_new_tokens,
                                             request.eos_token)
            for j, tok in enumerate(emitted):
                logprobs[slot].append(_log_softmax_at(ver[slot][j], tok))
            generated[slot].extend(emitted)
            committed[slot].extend(emitted)
            step_emitted[slot] = emitted
            if fin is not None:
                done[slot], reason[slot] = True, fin

            # roll both caches back to the committed prefix; the newest
            # committed token is re-encoded as context next step
            target = len(committed[slot]) - 1
            main.rollback(slot, min(main.length(slot), target))
            draft.rollback(slot, min(draft.length(slot), target))

        controller.observe([accepted_n[s] for s in active])

        now = time.perf_counter()
        for slot in active:
            if done[slot] and completion_step[slot] == 0:
                completion_step[slot] = step_idx
                finish_wall[slot] = now - t_start
        steps.append(SpecStepOutcome(
            step_index=step_idx, draft_length=l_draft, slots=tuple(active),
            accepted=tuple(accepted_n[s] for s in active),
            emitted=tuple(tuple(step_emitted[s]) for s in active),
            finished=tuple(done[s] for s in active),
            kv_lengths=tuple(len(committed[s]) for s in range(b)),
            duration_s=now - t0,
        ))

    return GenerationResult(
        mode="speculative", prompts=request.prompts,
        sequence_ids=list(sids),
        tokens=generated, logprobs=logprobs, finish_reason=reason,
        completion_step=completion_step, finish_wall_s=finish_wall,
        steps=steps, wall_time_s=time.perf_counter() - t_start,
        main_forward_calls=main_calls, draft_forward_calls=draft_calls,
    )
