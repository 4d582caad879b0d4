"""Why batched speculation pays: the closed forms and the roofline model.

Naive batched speculation (the whole batch must agree) collapses as p^b;
per-sequence acceptance keeps the geometric gain. The roofline model then
shows the utilization story on an A100-class profile with 7.8B-class main
and 310M-class draft geometries.
"""

import numpy as np

from batchspec import (
    A100_40GB,
    GEOMETRY_310M,
    GEOMETRY_7_8B,
    cost_regular_step,
    cost_speculative_step,
    expected_tokens_naive_batch,
    expected_tokens_per_seq,
    simulate_run,
)
from batchspec.perf import MODE_BATCHED_SPEC, MODE_REGULAR

print("tokens per draft when the whole batch must agree (p = 0.8):")
for b in (1, 2, 5, 8):
    print(f"  batch {b}: {expected_tokens_naive_batch(0.8, b):.3f}")

print("\ntokens per step with per-sequence acceptance (p = 0.8):")
for k in (1, 4, 7, 16):
    print(f"  draft length {k:2d}: {expected_tokens_per_seq(0.8, k):.3f}")

print("\nregular decoding utilization (7.8B, A100-class):")
for b in (1, 2, 4, 8):
    cost = cost_regular_step(A100_40GB, GEOMETRY_7_8B, b)
    print(f"  batch {b}: {cost.utilization:7.3%}   "
          f"step {cost.time_s * 1e3:6.2f} ms")

print("\nbatched speculative step (draft length 7):")
for b in (1, 2, 4, 8):
    cost = cost_speculative_step(A100_40GB, GEOMETRY_7_8B, GEOMETRY_310M,
                                 b, 7)
    print(f"  batch {b}: {cost.utilization:7.3%}   "
          f"step {cost.time_s * 1e3:6.2f} ms")

print("\nper-token latency spread grows with batch size "
      "(first / mean / last, simulated):")
for b in (2, 4, 8):
    first, allm, last = [], [], []
    for seed in range(20):
        sim = simulate_run(A100_40GB, GEOMETRY_7_8B, GEOMETRY_310M,
                           MODE_BATCHED_SPEC, b, 128, seed=seed)
        first.append(sim.first_latency)
        allm.append(sim.all_latency)
        last.append(sim.last_latency)
    print(f"  batch {b}: {np.mean(first) * 1e3:.2f} / "
          f"{np.mean(allm) * 1e3:.2f} / {np.mean(last) * 1e3:.2f} ms")

reg = simulate_run(A100_40GB, GEOMETRY_7_8B, None, MODE_REGULAR, 8, 128)
spec = simulate_run(A100_40GB, GEOMETRY_7_8B, GEOMETRY_310M,
                    MODE_BATCHED_SPEC, 8, 128, seed=0)
print(f"\nbatch-8 mean per-token speedup over regular: "
      f"{reg.all_latency / spec.all_latency:.2f}x")
