"""Benchmark runners: generation latency, quality under a time budget, and
cost-model sweeps.

Latency reports carry measured wall-clock numbers and simulated-clock
numbers side by side; the simulated clock prices the recorded trace with the
roofline model so results are machine-independent. Per-token latency is per
sequence (first finisher, last finisher, and the mean over sequences), never
total time divided by batch size. Reports are line-delimited JSON records
plus a summary table.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

from .attention import AttentionStrategy
from .checkpoint import load_checkpoint
from .draft_control import (
    AdaptiveDraftController,
    DraftLengthParams,
    FixedDraftController,
)
from .engine import GenerationRequest, decode_regular, decode_speculative
from .model import (
    MainModel,
    ModelConfig,
    SyntheticAlignedDraft,
    init_model,
)
from .perf import (
    GEOMETRY_310M,
    GEOMETRY_7_8B,
    MODE_BATCHED_SPEC,
    MODE_REGULAR,
    MODE_SINGLE_SPEC,
    HardwareProfile,
    geometry_from_model_config,
    simulate_from_trace,
    simulate_run,
)

REPORT_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def _model_config_from_dict(d: dict) -> ModelConfig:
    known = {"n_layer", "n_head", "d_model", "vocab_size", "max_seq_len"}
    unknown = set(d) - known - {"checkpoint", "init_seed"}
    if unknown:
        raise ConfigError(f"unknown model keys: {sorted(unknown)}")
    n_head = d.get("n_head", 8)
    d_model = d.get("d_model", 256)
    if d_model % n_head != 0:
        raise ConfigError(f"d_model {d_model} not divisible by n_head {n_head}")
    return ModelConfig(
        n_layer=d.get("n_layer", 4), n_head=n_head, d_model=d_model,
        d_head=d_model // n_head, vocab_size=d.get("vocab_size", 512),
        max_seq_len=d.get("max_seq_len", 1024),
    )


@dataclass
class RunConfig:
    """Validated run configuration; mirrors the CLI flags."""

    seed: int = 0
    batch_size: int = 4
    strategy: AttentionStrategy = AttentionStrategy.PAD
    max_new_tokens: int = 64
    temperature: float = 0.2
    top_p: float = 0.95
    eos_token: int | None = None
    main: dict = field(default_factory=dict)
    draft: dict = field(default_factory=lambda: {"alignment": 0.8})
    draft_params: DraftLengthParams = field(default_factory=DraftLengthParams)
    fixed_draft: int | None = None
    quant_enabled: bool = False
    hardware: HardwareProfile = field(default_factory=HardwareProfile)
    sim_preset: str | None = None  # "a100-7.8b" prices steps at paper scale
    time_budget_s: float | None = None
    prompts: list[list[int]] | None = None
    prompt_len: int = 16
    shared_prompt: bool = False
    out_dir: Path | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        draft_keys = set(self.draft)
        has_ckpt = "checkpoint" in draft_keys
        has_align = "alignment" in draft_keys
        if has_ckpt == has_align:
            raise ConfigError(
                "draft needs exactly one of 'checkpoint' or 'alignment'"
            )
        if has_align and not 0.0 <= self.draft["alignment"] <= 1.0:
            raise ConfigError("draft alignment must be in [0, 1]")
        if self.fixed_draft is not None and self.fixed_draft < 1:
            raise ConfigError("fixed draft length must be >= 1")
        if self.sim_preset not in (None, "a100-7.8b"):
            raise ConfigError(f"unknown sim_preset {self.sim_preset!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        if "strategy" in d:
            d["strategy"] = AttentionStrategy(d["strategy"])
        if "hardware" in d:
            d["hardware"] = HardwareProfile(**d["hardware"])
        if "draft_params" in d:
            d["draft_params"] = DraftLengthParams(**d["draft_params"])
        if d.get("fixed_draft") is not None and "draft_params" in d:
            raise ConfigError(
                "fixed_draft and draft_params are mutually exclusive"
            )
        if "out_dir" in d and d["out_dir"] is not None:
            d["out_dir"] = Path(d["out_dir"])
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def main_config(self) -> ModelConfig:
        return _model_config_from_dict(self.main)

    def resolve_prompts(self) -> list[list[int]]:
        if self.prompts is not None:
            if len(self.prompts) != self.batch_size:
                raise ConfigError("prompts must match batch_size")
            return [list(p) for p in self.prompts]
        cfg = self.main_config()
        rng = np.random.default_rng(self.seed + 1_000_003)
        if self.shared_prompt:
            one = rng.integers(0, cfg.vocab_size, self.prompt_len).tolist()
            return [list(one) for _ in range(self.batch_size)]
        return [rng.integers(0, cfg.vocab_size, self.prompt_len).tolist()
                for _ in range(self.batch_size)]


def build_main_weights(config: RunConfig):
    cfg = config.main_config()
    if config.main.get("checkpoint"):
        return load_checkpoint(config.main["checkpoint"], cfg)
    return init_model(cfg, config.main.get("init_seed", config.seed))


def make_providers(config: RunConfig, main_weights=None):
    """Fresh (main, draft) providers with empty caches for one run."""
    b = config.batch_size
    weights = main_weights if main_weights is not None \
        else build_main_weights(config)
    main = MainModel(weights, b, config.strategy, config.quant_enabled)
    if "alignment" in config.draft:
        draft = SyntheticAlignedDraft(
            weights, config.draft["alignment"],
            perturb_seed=config.draft.get("perturb_seed", config.seed + 17),
            n_seq=b, strategy=config.strategy,
            quantized=config.quant_enabled,
        )
    else:
        dcfg = _model_config_from_dict(config.draft.get("config", {}))
        dweights = load_checkpoint(config.draft["checkpoint"], dcfg)
        draft = MainModel(dweights, b, config.strategy, config.quant_enabled)
    return main, draft


def make_controller(config: RunConfig):
    if config.fixed_draft is not None:
        return FixedDraftController(config.fixed_draft)
    return AdaptiveDraftController(config.draft_params)


def _sim_geometries(config: RunConfig):
    if config.sim_preset == "a100-7.8b":
        return GEOMETRY_7_8B, GEOMETRY_310M
    main_geom = geometry_from_model_config(config.main_config())
    if "alignment" in config.draft:
        draft_geom = main_geom  # synthetic draft really runs the main model
    else:
        draft_geom = geometry_from_model_config(
            _model_config_from_dict(config.draft.get("config", {})))
    return main_geom, draft_geom


def _latency_block(result, sim) -> dict:
    per_tok = [w / max(len(t), 1)
               for w, t in zip(result.finish_wall_s, result.tokens)]
    return {
        "measured_first_s": min(per_tok),
        "measured_last_s": max(per_tok),
        "measured_all_s": float(np.mean(per_tok)),
        "simulated_first_s": sim.first_latency,
        "simulated_last_s": sim.last_latency,
        "simulated_all_s": sim.all_latency,
        "simulated_utilization": sim.mean_utilization,
    }


def _acceptance_stats(result) -> dict:
    drafted = 0
    accepted = 0
    for step in result.steps:
        for x in step.accepted:
            accepted += x
            drafted += x + (1 if x < step.draft_length else 0)
    total_tokens = sum(len(t) for t in result.tokens)
    return {
        "acceptance_rate": accepted / drafted if drafted else None,
        "tokens_per_main_invocation":
            total_tokens / result.main_forward_calls
            if result.main_forward_calls else None,
        "mean_committed_per_step":
            total_tokens / len(result.steps) if result.steps else None,
    }


def run_generate(config: RunConfig, write: bool = True) -> dict:
    """Regular baseline plus speculative run on the same prompts; returns
    the report dict and optionally writes JSONL records and generations."""
    weights = build_main_weights(config)
    prompts = config.resolve_prompts()
    main_geom, draft_geom = _sim_geometries(config)

    request = GenerationRequest(
        prompts=prompts, max_new_tokens=config.max_new_tokens,
        temperature=config.temperature, top_p=config.top_p,
        eos_token=config.eos_token, strategy=config.strategy,
        seed=config.seed,
    )

    base_main = MainModel(weights, config.batch_size, config.strategy,
                          config.quant_enabled)
    baseline = decode_regular(base_main, request)
    base_sim = simulate_from_trace(
        config.hardware, main_geom, None, baseline.steps, config.batch_size,
        [len(t) for t in baseline.tokens],
        split=config.strategy is AttentionStrategy.SPLIT)

    main, draft = make_providers(config, weights)
    controller = make_controller(config)
    spec = decode_speculative(main, draft, request, controller)
    spec_sim = simulate_from_trace(
        config.hardware, main_geom, draft_geom, spec.steps,
        config.batch_size, [len(t) for t in spec.tokens],
        split=config.strategy is AttentionStrategy.SPLIT)

    base_lat = _latency_block(baseline, base_sim)
    spec_lat = _latency_block(spec, spec_sim)
    speedup = {
        f"speedup_{k.removesuffix('_s')}":
            base_lat[k] / spec_lat[k] if spec_lat[k] > 0 else None
        for k in ("measured_first_s", "measured_last_s", "measured_all_s",
                  "simulated_first_s", "simulated_last_s", "simulated_all_s")
    }

    exact_match = [bt == st for bt, st in zip(baseline.tokens, spec.tokens)]
    report = {
        "record": "summary",
        "schema_version": REPORT_SCHEMA_VERSION,
        "seed": config.seed,
        "batch_size": config.batch_size,
        "strategy": config.strategy.value,
        "temperature": config.temperature,
        "top_p": config.top_p,
        "draft": ("fixed" if config.fixed_draft is not None else "adaptive"),
        "draft_length": config.fixed_draft,
        "quant_enabled": config.quant_enabled,
        "baseline": base_lat,
        "speculative": spec_lat,
        **speedup,
        **_acceptance_stats(spec),
        "greedy_exact_match": all(exact_match)
        if config.temperature == 0.0 else None,
        "spec_steps": len(spec.steps),
        "baseline_steps": len(baseline.steps),
    }

    records = [report]
    for run_name, result in (("regular", baseline), ("speculative", spec)):
        for i in range(config.batch_size):
            records.append({
                "record": "sequence",
                "schema_version": REPORT_SCHEMA_VERSION,
                "run": run_name,
                "slot": i,
                "sequence_id": result.sequence_ids[i],
                "tokens_generated": len(result.tokens[i]),
                "finish_reason": result.finish_reason[i],
                "completion_step": result.completion_step[i],
                "mean_logprob": float(np.mean(result.logprobs[i]))
                if result.logprobs[i] else None,
                "measured_finish_s": result.finish_wall_s[i],
            })

    if write and config.out_dir is not None:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.jsonl", "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
        with open(out / "generations.jsonl", "w") as fh:
            for run_name, result in (("regular", baseline),
                                     ("speculative", spec)):
                for i in range(config.batch_size):
                    fh.write(json.dumps({
                        "run": run_name, "slot": i,
                        "prompt": prompts[i],
                        "tokens": result.tokens[i],
                        "logprobs": [round(x, 6) for x in result.logprobs[i]],
                    }) + "\n")
    report["records"] = records
    return report


def load_tasks(path: str | Path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if "tasks" not in doc or not doc["tasks"]:
        raise ConfigError("task file needs a non-empty 'tasks' list")
    for i, task in enumerate(doc["tasks"]):
        if "prompt" not in task:
            raise ConfigError(f"task {i}: missing prompt")
        if not task.get("accept_any") and not task.get("accepted"):
            raise ConfigError(f"task {i}: missing correctness oracle "
                              "('accepted' completions or accept_any)")
    return doc


def _task_correct(task: dict, tokens: list[int]) -> bool:
    if task.get("accept_any"):
        return True
    return any(list(a) == list(tokens) for a in task["accepted"])


def run_quality(config: RunConfig, task_path: str | Path,
                write: bool = True) -> dict:
    """Pass@First / Pass@Finished over a task suite under a time budget.

    The batch decodes every task with ``batch_size`` sequences from the same
    prompt; sequences whose simulated finish time exceeds the budget do not
    count as finished. The first displayed sequence is the finished one with
    the highest mean log-probability.
    """
    doc = load_tasks(task_path)
    budget = config.time_budget_s
    if budget is None:
        budget = doc.get("budget_s")
    weights = build_main_weights(config)
    main_geom, draft_geom = _sim_geometries(config)

    per_task = []
    n_first = 0
    n_finished = 0
    for idx, task in enumerate(doc["tasks"]):
        prompts = [list(task["prompt"])] * config.batch_size
        request = GenerationRequest(
            prompts=prompts,
            max_new_tokens=task.get("max_new_tokens", config.max_new_tokens),
            temperature=config.temperature, top_p=config.top_p,
            eos_token=config.eos_token, strategy=config.strategy,
            seed=config.seed + idx,
        )
        main, draft = make_providers(config, weights)
        result = decode_speculative(main, draft, request,
                                    make_controller(config))
        sim = simulate_from_trace(
            config.hardware, main_geom, draft_geom, result.steps,
            config.batch_size, [len(t) for t in result.tokens],
            split=config.strategy is AttentionStrategy.SPLIT)

        finished = [
            i for i in range(config.batch_size)
            if budget is None or sim.finish_time_s[i] <= budget
        ]
        correct = {i: _task_correct(task, result.tokens[i]) for i in finished}
        any_correct = any(correct.values())
        first_correct = False
        if finished:
            ranked = max(finished,
                         key=lambda i: (np.mean(result.logprobs[i])
                                        if result.logprobs[i] else -np.inf))
            first_correct = correct[ranked]
        n_first += first_correct
        n_finished += any_correct
        per_task.append({
            "record": "task",
            "schema_version": REPORT_SCHEMA_VERSION,
            "task": task.get("id", idx),
            "finished": len(finished),
            "first_correct": bool(first_correct),
            "any_correct": bool(any_correct),
            "sim_finish_s": [round(t, 9) for t in sim.finish_time_s],
        })

    n = len(doc["tasks"])
    report = {
        "record": "quality_summary",
        "schema_version": REPORT_SCHEMA_VERSION,
        "tasks": n,
        "batch_size": config.batch_size,
        "time_budget_s": budget,
        "pass_at_first": n_first / n,
        "pass_at_finished": n_finished / n,
        "per_task": per_task,
    }
    if write and config.out_dir is not None:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "quality.jsonl", "w") as fh:
            fh.write(json.dumps({k: v for k, v in report.items()
                                 if k != "per_task"}) + "\n")
            for rec in per_task:
                fh.write(json.dumps(rec) + "\n")
    return report


COST_CSV_COLUMNS = [
    "mode", "batch_size", "draft_len", "steps", "total_time_s",
    "first_per_token_s", "last_per_token_s", "all_per_token_s",
    "mean_utilization", "total_flops", "total_bytes",
]


def run_cost_sweep(config: RunConfig, batch_sizes=(1, 2, 4, 8),
                   modes=(MODE_REGULAR, MODE_SINGLE_SPEC, MODE_BATCHED_SPEC),
                   draft_len: int = 7, acceptance: float = 0.8,
                   target_tokens: int = 128, write: bool = True) -> str:
    """Analytic sweep over (mode, batch size); returns CSV text."""
    main_geom, draft_geom = (GEOMETRY_7_8B, GEOMETRY_310M) \
        if config.sim_preset == "a100-7.8b" or not config.main \
        else _sim_geometries(config)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COST_CSV_COLUMNS)
    writer.writeheader()
    for mode in modes:
        for b in batch_sizes:
            if mode == MODE_SINGLE_SPEC and b != 1:
                continue
            sim = simulate_run(
                config.hardware, main_geom, draft_geom, mode, b,
                target_tokens, acceptance_p=acceptance, draft_len=draft_len,
                split=config.strategy is AttentionStrategy.SPLIT,
                prompt_len=config.prompt_len, seed=config.seed,
            )
            writer.writerow({
                "mode": mode, "batch_size": b,
                "draft_len": 0 if mode == MODE_REGULAR else draft_len,
                "steps": sim.steps,
                "total_time_s": f"{sim.total_time_s:.9f}",
                "first_per_token_s": f"{sim.first_latency:.9f}",
                "last_per_token_s": f"{sim.last_latency:.9f}",
                "all_per_token_s": f"{sim.all_latency:.9f}",
                "mean_utilization": f"{sim.mean_utilization:.6f}",
                "total_flops": f"{sim.total_flops:.6e}",
                "total_bytes": f"{sim.total_bytes:.6e}",
            })
    text = buf.getvalue()
    if write and config.out_dir is not None:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "cost_sweep.csv").write_text(text)
    return text


def run_selfcheck() -> list[tuple[str, bool, str]]:
    """Fast invariant suite; returns (name, passed, detail) triples."""
    from . import selfcheck
    return selfcheck.run_all()


def format_summary_table(report: dict) -> str:
    """Plain-text summary of a generate report."""
    rows = []
    for run in ("baseline", "speculative"):
        blk = report[run]
        rows.append(
            f"{run:<12} measured first/all/last (s/token): "
            f"{blk['measured_first_s']:.6f} / {blk['measured_all_s']:.6f} / "
            f"{blk['measured_last_s']:.6f}   simulated: "
            f"{blk['simulated_first_s']:.6e} / {blk['simulated_all_s']:.6e} "
            f"/ {blk['simulated_last_s']:.6e}"
        )
    rows.append(
        f"speedup (simulated, all): {report['speedup_simulated_all']:.2f}x  "
        f"acceptance rate: {report['acceptance_rate']}  "
        f"tokens/main-invocation: {report['tokens_per_main_invocation']:.3f}"
        if report["tokens_per_main_invocation"] is not None else "")
    return "\n".join(rows)
