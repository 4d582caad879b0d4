"""Pass@First and Pass@Finished under a simulated time budget.

Each task decodes a batch of candidates from one prompt; sequences whose
simulated finish time exceeds the budget don't count. Pass@Finished asks
whether any finished candidate is correct; Pass@First asks whether the
top-ranked finished candidate (highest mean log-probability) is. More
candidates per prompt buys accuracy within the same budget.

The toy oracle for each prompt is the set of completions a probe batch
produced (plus the greedy one), so correct answers exist and sampled runs
hit them at a realistic rate.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from batchspec import (
    AdaptiveDraftController,
    GenerationRequest,
    MainModel,
    SyntheticAlignedDraft,
    decode_regular,
    decode_speculative,
)
from batchspec.bench import RunConfig, build_main_weights, run_quality

MAIN = {"n_layer": 2, "n_head": 4, "d_model": 64, "vocab_size": 96,
        "max_seq_len": 256}
TEMP, TOP_P, NEW = 0.05, 0.95, 4

conf = RunConfig.from_dict({
    "seed": 0, "batch_size": 2, "temperature": TEMP, "top_p": TOP_P,
    "main": dict(MAIN), "draft": {"alignment": 0.8}, "max_new_tokens": NEW,
})
weights = build_main_weights(conf)
rng = np.random.default_rng(4)

tasks = []
for i in range(12):
    prompt = rng.integers(0, 96, 4).tolist()
    greedy = decode_regular(
        MainModel(weights, 1),
        GenerationRequest(prompts=[prompt], max_new_tokens=NEW,
                          temperature=0.0)).tokens[0]
    probe = decode_speculative(
        MainModel(weights, 8),
        SyntheticAlignedDraft(weights, 0.8, 17, 8),
        GenerationRequest(prompts=[prompt] * 8, max_new_tokens=NEW,
                          temperature=TEMP, top_p=TOP_P, seed=990 + i),
        AdaptiveDraftController())
    accepted = {tuple(greedy)} | {tuple(t) for t in probe.tokens[:4]}
    tasks.append({"id": f"task{i}", "prompt": prompt,
                  "accepted": [list(t) for t in accepted],
                  "max_new_tokens": NEW})

task_path = Path(tempfile.mkdtemp()) / "tasks.json"
task_path.write_text(json.dumps({"tasks": tasks}))
print(f"task suite: {len(tasks)} prompts, oracle = greedy completion plus "
      f"probe-batch completions")

print("\nbatch  Pass@First  Pass@Finished")
for b in (1, 2, 4, 8):
    conf_b = RunConfig.from_dict({
        "seed": 0, "batch_size": b, "temperature": TEMP, "top_p": TOP_P,
        "main": dict(MAIN), "draft": {"alignment": 0.8},
        "max_new_tokens": NEW, "time_budget_s": 0.005,
    })
    rep = run_quality(conf_b, task_path, write=False)
    print(f"{b:5d}  {rep['pass_at_first']:10.2f}  "
          f"{rep['pass_at_finished']:13.2f}")

print("\nmore candidates raise Pass@Finished; mean-logP ranking decides "
      "which one is shown first")
