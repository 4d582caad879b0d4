"""Fast end-to-end invariant checks, runnable from the CLI.

Each check returns (name, passed, detail). These are smoke-level versions of
the full test suite: strategy equivalence, losslessness of the accept rule,
draft-length golden trace, acceptance expectations, quantization exactness,
greedy equivalence, rollback fidelity, and batch invariance.
"""

from __future__ import annotations

import numpy as np

from .attention import AttentionStrategy, AttentionWorkload, attend
from .draft_control import (
    AdaptiveDraftController,
    DraftLengthParams,
    init_state,
    update,
)
from .engine import GenerationRequest, decode_regular, decode_speculative
from .kv_cache import RaggedKvCache
from .model import MainModel, SyntheticAlignedDraft, desk_config, init_model
from .perf import expected_tokens_naive_batch, expected_tokens_per_seq
from .quant import (
    dequantize,
    int_gemm_dequant,
    quantize_activations_per_token,
    quantize_weights_per_channel,
)
from .sampling import to_distribution


def _random_workload(rng, batch, n_head=2, d_head=8):
    lens = rng.integers(1, 40, batch)
    q_lens = rng.integers(1, 5, batch)
    offs = [int(max(ln - q, 0)) for ln, q in zip(lens, q_lens)]
    lens = [off + int(q) for off, q in zip(offs, q_lens)]
    return AttentionWorkload(
        queries=[rng.standard_normal((n_head, int(q), d_head))
                 for q in q_lens],
        keys=[rng.standard_normal((n_head, int(ln), d_head)) for ln in lens],
        values=[rng.standard_normal((n_head, int(ln), d_head))
                for ln in lens],
        offsets=offs,
    )


def check_pad_split() -> tuple[str, bool, str]:
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        w = _random_workload(rng, int(rng.integers(1, 8)))
        pad = attend(w, AttentionStrategy.PAD)
        spl = attend(w, AttentionStrategy.SPLIT)
        worst = max(worst, max(float(np.abs(a - b).max())
                               for a, b in zip(pad, spl)))
    return ("pad_split_equivalence", worst <= 1e-6, f"max abs diff {worst:.2e}")


def check_distribution_preservation() -> tuple[str, bool, str]:
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(5):
        q = to_distribution(rng.standard_normal(16), 1.0, 1.0)
        p = to_distribution(rng.standard_normal(16), 1.0, 1.0)
        emitted = np.minimum(q.probs, p.probs).copy()
        reject_mass = 1.0 - emitted.sum()
        residual = np.maximum(q.probs - p.probs, 0.0)
        if reject_mass > 0:
            emitted += reject_mass * residual / residual.sum()
        worst = max(worst, float(np.abs(emitted - q.probs).max()))
    return ("distribution_preservation", worst <= 1e-9,
            f"max abs deviation {worst:.2e}")


def check_draft_length_golden() -> tuple[str, bool, str]:
    state = init_state(DraftLengthParams())
    seen = []
    for accepts in [(7, 3), (3, 1), (2, 2)]:
        state = update(state, accepts)
        seen.append(state.l_draft)
    return ("draft_length_golden", seen == [9, 8, 6], f"trace {seen}")


def check_acceptance_math() -> tuple[str, bool, str]:
    ok = abs(expected_tokens_naive_batch(0.8, 1) - 5.0) < 1e-12
    ok &= abs(expected_tokens_naive_batch(0.8, 5) - 1.488) < 1e-3
    ok &= abs(expected_tokens_per_seq(0.8, 7) - (1 - 0.8 ** 8) / 0.2) < 1e-12
    return ("acceptance_math", bool(ok), "closed forms match")


def check_quant_factorization() -> tuple[str, bool, str]:
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(5):
        a = rng.standard_normal((8, 16))
        w = rng.standard_normal((16, 8))
        aq = quantize_activations_per_token(a)
        wq = quantize_weights_per_channel(w)
        got = int_gemm_dequant(aq, wq)
        ref = dequantize(aq) @ dequantize(wq)
        denom = max(float(np.abs(ref).max()), 1e-12)
        worst = max(worst, float(np.abs(got - ref).max()) / denom)
    return ("quant_factorization", worst <= 1e-6, f"rel err {worst:.2e}")


def check_greedy_equivalence() -> tuple[str, bool, str]:
    cfg = desk_config(n_layer=2, n_head=4, d_model=64, vocab_size=96,
                      max_seq_len=256)
    weights = init_model(cfg, 5)
    req = GenerationRequest(
        prompts=[[1, 2, 3], [4, 5, 6, 7]], max_new_tokens=24,
        temperature=0.0, top_p=1.0, seed=9,
    )
    regular = decode_regular(MainModel(weights, 2), req)
    main = MainModel(weights, 2)
    draft = SyntheticAlignedDraft(weights, 0.7, 11, 2)
    spec = decode_speculative(main, draft, req,
                              AdaptiveDraftController())
    ok = regular.tokens == spec.tokens
    return ("greedy_equivalence", ok, "token-identical" if ok else "MISMATCH")


def check_rollback_fidelity() -> tuple[str, bool, str]:
    rng = np.random.default_rng(3)
    cache = RaggedKvCache(n_layer=1, n_seq=1, n_head=2, d_head=4)
    first = rng.standard_normal((2, 5, 4))
    cache.append(0, 0, first, first + 1)
    extra = rng.standard_normal((2, 3, 4))
    before_k, before_v = [x.copy() for x in cache.view(0, 0)]
    cache.append(0, 0, extra, extra - 1)
    cache.truncate(0, 5)
    after_k, after_v = cache.view(0, 0)
    ok = np.array_equal(before_k, after_k) and np.array_equal(before_v, after_v)
    return ("rollback_fidelity", ok, "bitwise" if ok else "MISMATCH")


def check_batch_invariance() -> tuple[str, bool, str]:
    cfg = desk_config(n_layer=2, n_head=4, d_model=64, vocab_size=96,
                      max_seq_len=256)
    weights = init_model(cfg, 6)
    prompts = [[1, 2, 3], [9, 8, 7, 6]]

    def spec_run(prompt_list, seq_ids):
        req = GenerationRequest(
            prompts=prompt_list, max_new_tokens=16, temperature=0.9,
            top_p=0.95, seed=4, sequence_ids=seq_ids,
        )
        main = MainModel(weights, len(prompt_list))
        draft = SyntheticAlignedDraft(weights, 0.8, 21, len(prompt_list))
        return decode_speculative(main, draft, req,
                                  AdaptiveDraftController())

    batched = spec_run(prompts, [0, 1])
    solo0 = spec_run([prompts[0]], [0])
    solo1 = spec_run([prompts[1]], [1])
    ok = (batched.tokens[0] == solo0.tokens[0]
          and batched.tokens[1] == solo1.tokens[0])
    return ("batch_invariance", ok, "exact" if ok else "MISMATCH")


def run_all() -> list[tuple[str, bool, str]]:
    checks = [
        check_pad_split,
        check_distribution_preservation,
        check_draft_length_golden,
        check_acceptance_math,
        check_quant_factorization,
        check_greedy_equivalence,
        check_rollback_fidelity,
        check_batch_invariance,
    ]
    return [c() for c in checks]
