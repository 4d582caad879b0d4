"""Attention over ragged batches: pad-to-max and per-sequence-split strategies.

Both strategies compute the same math: per sequence, scores = Q K^T / c with
c = sqrt(d_head), a causal mask against the sequence's own committed offset,
a per-sequence softmax, and a context GEMM against V. They differ in how the
two GEMMs are laid out:

* PAD batches one GEMM across the batch by padding K, V (and the probability
  rows) to the longest sequence, wasting multiply-adds on the padding.
* SPLIT runs one GEMM per sequence and wastes nothing, paying one kernel
  launch per sequence per stage instead.

The softmax is per-sequence in both layouts, so the strategies agree exactly
up to floating-point reduction order.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

# additive mask applied to padded score columns before the per-sequence
# softmax; large enough to underflow to an exact zero probability
PAD_SCORE_MASK = -1e9


class AttentionStrategy(enum.Enum):
    PAD = "pad"
    SPLIT = "split"


@dataclass
class AttentionWorkload:
    """One ragged attention call.

    queries[i]      : [n_head, q_i, d_head] new-position query vectors
    keys[i]/values[i]: [n_head, L_i, d_head] full history including the block
    offsets[i]      : committed length before the block; query row t may
                      attend to key positions s <= offsets[i] + t
    """

    queries: list[np.ndarray]
    keys: list[np.ndarray]
    values: list[np.ndarray]
    offsets: list[int]

    def __post_init__(self):
        b = len(self.queries)
        if not (len(self.keys) == len(self.values) == len(self.offsets) == b):
            raise ValueError("per-sequence lists must have equal length")
        if b == 0:
            raise ValueError("empty workload")
        n_head, _, d_head = self.queries[0].shape
        for q, k, v, off in zip(self.queries, self.keys, self.values,
                                self.offsets):
            if q.ndim != 3 or q.shape[0] != n_head or q.shape[2] != d_head:
                raise ValueError(f"query geometry mismatch: {q.shape}")
            if q.shape[1] < 1:
                raise ValueError("every sequence needs at least one query")
            if k.shape != (n_head, k.shape[1], d_head) or v.shape != k.shape:
                raise ValueError(f"key/value geometry mismatch: {k.shape}")
            if off < 0 or k.shape[1] < off:
                raise ValueError(f"offset {off} exceeds history {k.shape[1]}")
            if k.shape[1] < off + 1:
                raise ValueError(
                    "empty key history with nonzero causal expectation"
                )

    @property
    def batch_size(self) -> int:
        return len(self.queries)

    @property
    def n_head(self) -> int:
        return self.queries[0].shape[0]

    @property
    def d_head(self) -> int:
        return self.queries[0].shape[2]


def _causal_softmax(scores: np.ndarray, offset: int) -> np.ndarray:
    """Per-sequence masked softmax. scores: [n_head, q, L] -> probs."""
    _, q_len, kv_len = scores.shape
    t = np.arange(q_len)[:, None]
    s = np.arange(kv_len)[None, :]
    masked = np.where(s <= offset + t, scores, -np.inf)
    m = masked.max(axis=-1, keepdims=True)
    e = np.exp(masked - m)
    return e / e.sum(axis=-1, keepdims=True)


def _attend_split(w: AttentionWorkload):
    scale = math.sqrt(w.d_head)
    ctx, probs = [], []
    for q, k, v, off in zip(w.queries, w.keys, w.values, w.offsets):
        scores = np.matmul(q, np.swapaxes(k, 1, 2)) / scale
        p = _causal_softmax(scores, off)
        ctx.append(np.matmul(p, v))
        probs.append(p)
    return ctx, probs


def _attend_pad(w: AttentionWorkload):
    b, h, d = w.batch_size, w.n_head, w.d_head
    scale = math.sqrt(d)
    q_lens = [q.shape[1] for q in w.queries]
    kv_lens = [k.shape[1] for k in w.keys]
    q_max, l_max = max(q_lens), max(kv_lens)

    q_pad = np.zeros((b, h, q_max, d), w.queries[0].dtype)
    k_pad = np.zeros((b, h, l_max, d), w.keys[0].dtype)
    v_pad = np.zeros_like(k_pad)
    for i in range(b):
        q_pad[i, :, :q_lens[i]] = w.queries[i]
        k_pad[i, :, :kv_lens[i]] = w.keys[i]
        v_pad[i, :, :kv_lens[i]] = w.values[i]

    scores = np.matmul(q_pad, np.swapaxes(k_pad, 2, 3)) / scale
    for i in range(b):
        scores[i, :, :, kv_lens[i]:] += PAD_SCORE_MASK

    # softmax stays per-sequence; padded probability slots are exact zeros
    p_pad = np.zeros_like(scores)
    probs = []
    for i in range(b):
        p = _causal_softmax(scores[i, :, :q_lens[i], :kv_lens[i]],
                            w.offsets[i])
        p_pad[i, :, :q_lens[i], :kv_lens[i]] = p
        probs.append(p)

    ctx_pad = np.matmul(p_pad, v_pad)
    ctx = [ctx_pad[i, :, :q_lens[i]] for i in range(b)]
    return ctx, probs


def attend(workload: AttentionWorkload,
           strategy: AttentionStrategy = AttentionStrategy.PAD,
           return_probs: bool = False):
    """Compute per-sequence context vectors [n_head, q_i, d_head].

    With ``return_probs`` also returns each sequence's probability rows
    [n_head, q_i, L_i] (rows over the causal prefix sum to one).
    """
    if strategy is AttentionStrategy.PAD:
        ctx, probs = _attend_pad(workload)
    elif strategy is AttentionStrategy.SPLIT:
        ctx, probs = _attend_split(workload)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return (ctx, probs) if return_probs else ctx


def pad_cost(workload: AttentionWorkload) -> int:
    """Element-level multiply-adds wasted on padding by the PAD strategy.

    Each padded key slot costs d_head score MACs plus d_head context MACs
    plus one probability slot, per query row and per head.
    """
    kv_lens = [k.shape[1] for k in workload.keys]
    l_max = max(kv_lens)
    per_slot = 2 * workload.d_head + 1
    return sum(
        workload.n_head * q.shape[1] * (l_max - kv) * per_slot
        for q, kv in zip(workload.queries, kv_lens)
    )


def split_launch_count(batch_size: int) -> int:
    """Kernel launches for SPLIT: one per sequence for each of the three
    stages (score GEMM, softmax, context GEMM)."""
    return 3 * batch_size


def pad_launch_count(batch_size: int) -> int:
    """Kernel launches for PAD: one batched kernel per GEMM stage plus the
    per-sequence softmax kernels shared with SPLIT."""
    return 2 + batch_size


def split_cost(workload: AttentionWorkload,
               per_launch_overhead: float) -> float:
    """Launch-overhead estimate for the SPLIT strategy."""
    return split_launch_count(workload.batch_size) * per_launch_overhead
