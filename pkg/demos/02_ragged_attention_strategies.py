"""The two ragged-attention layouts and what each one costs.

PAD batches the two attention GEMMs by padding keys/values/probabilities to
the longest sequence and wastes multiply-adds on the padding; SPLIT launches
per-sequence kernels and wastes launches instead. Both share per-sequence
softmax and compute the same numbers.
"""

import numpy as np

from batchspec import (
    AttentionStrategy,
    AttentionWorkload,
    attend,
    pad_cost,
    pad_launch_count,
    split_cost,
    split_launch_count,
)

rng = np.random.default_rng(0)
n_head, d_head = 2, 8


def workload(kv_lens, q_lens):
    offsets = [k - q for k, q in zip(kv_lens, q_lens)]
    return AttentionWorkload(
        queries=[rng.standard_normal((n_head, q, d_head)) for q in q_lens],
        keys=[rng.standard_normal((n_head, k, d_head)) for k in kv_lens],
        values=[rng.standard_normal((n_head, k, d_head)) for k in kv_lens],
        offsets=offsets,
    )


# --- equivalence on a ragged batch -----------------------------------------
w = workload(kv_lens=[3, 7, 5, 1], q_lens=[1, 1, 1, 1])
pad_out = attend(w, AttentionStrategy.PAD)
split_out = attend(w, AttentionStrategy.SPLIT)
gap = max(np.abs(a - b).max() for a, b in zip(pad_out, split_out))
print(f"lengths [3,7,5,1]: pad vs split max abs diff {gap:.2e}")

# --- probability rows are causal and sum to one ----------------------------
_, probs = attend(w, AttentionStrategy.PAD, return_probs=True)
print("row sums:", [float(p.sum(axis=-1).ravel()[0]) for p in probs])

# --- cost accounting --------------------------------------------------------
print(f"\npadding waste on [3,7,5,1]: {pad_cost(w)} element-ops")
even = workload(kv_lens=[7, 7, 7, 7], q_lens=[1, 1, 1, 1])
print(f"padding waste on [7,7,7,7]: {pad_cost(even)} element-ops")
skewed = workload(kv_lens=[1, 1, 1, 64], q_lens=[1, 1, 1, 1])
print(f"padding waste on [1,1,1,64]: {pad_cost(skewed)} element-ops")

overhead = 5e-6
for b in (1, 2, 4, 8):
    wl = workload(kv_lens=[16] * b, q_lens=[1] * b)
    print(f"batch {b}: split launches {split_launch_count(b):2d} "
          f"({split_cost(wl, overhead) * 1e6:5.1f} us at 5 us each), "
          f"pad launches {pad_launch_count(b):2d}")

print("\nrule of thumb: pad wins when lengths are close, split when the "
      "spread is wide enough that dummy compute outweighs extra launches")
