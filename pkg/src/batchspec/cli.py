"""Command-line harness: generate, quality, cost-sweep, selfcheck."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import (
    RunConfig,
    format_summary_table,
    run_cost_sweep,
    run_generate,
    run_quality,
    run_selfcheck,
)


def _load_config(args) -> RunConfig:
    doc = {}
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
    # flags override config-file keys
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.strategy is not None:
        doc["strategy"] = args.strategy
    if args.batch_size is not None:
        doc["batch_size"] = args.batch_size
    if args.max_new_tokens is not None:
        doc["max_new_tokens"] = args.max_new_tokens
    if args.temperature is not None:
        doc["temperature"] = args.temperature
    if args.top_p is not None:
        doc["top_p"] = args.top_p
    if args.fixed_draft is not None:
        doc["fixed_draft"] = args.fixed_draft
    if args.alignment is not None:
        doc["draft"] = {"alignment": args.alignment}
    if args.time_budget is not None:
        doc["time_budget_s"] = args.time_budget
    if args.quant:
        doc["quant_enabled"] = True
    if args.out is not None:
        doc["out_dir"] = args.out
    return RunConfig.from_dict(doc)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--strategy", choices=["pad", "split"])
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--max-new-tokens", type=int, dest="max_new_tokens")
    p.add_argument("--temperature", type=float)
    p.add_argument("--top-p", type=float, dest="top_p")
    p.add_argument("--fixed-draft", type=int, dest="fixed_draft",
                   help="constant draft length instead of the adaptive rule")
    p.add_argument("--alignment", type=float,
                   help="synthetic draft alignment in [0, 1]")
    p.add_argument("--time-budget", type=float, dest="time_budget",
                   help="simulated-clock budget in seconds")
    p.add_argument("--quant", action="store_true",
                   help="run the INT8-simulated inference path")
    p.add_argument("--out", help="output directory for report files")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="batchspec",
        description="Batched speculative decoding benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate",
                           help="regular vs speculative decoding run")
    _add_common(p_gen)

    p_q = sub.add_parser("quality",
                         help="Pass@First / Pass@Finished under a budget")
    _add_common(p_q)
    p_q.add_argument("--tasks", required=True, help="JSON task suite")

    p_c = sub.add_parser("cost-sweep",
                         help="analytic cost-model sweep to CSV")
    _add_common(p_c)
    p_c.add_argument("--batch-sizes", default="1,2,4,8")
    p_c.add_argument("--draft-len", type=int, default=7, dest="draft_len")
    p_c.add_argument("--acceptance", type=float, default=0.8)
    p_c.add_argument("--target-tokens", type=int, default=128,
                     dest="target_tokens")

    p_s = sub.add_parser("selfcheck", help="run the invariant suite")

    args = parser.parse_args(argv)

    if args.command == "selfcheck":
        failures = 0
        for name, ok, detail in run_selfcheck():
            print(f"{'PASS' if ok else 'FAIL'}  {name:<28} {detail}")
            failures += not ok
        return 1 if failures else 0

    config = _load_config(args)

    if args.command == "generate":
        report = run_generate(config)
        print(format_summary_table(report))
        if config.out_dir:
            print(f"report written to {Path(config.out_dir) / 'report.jsonl'}")
        return 0

    if args.command == "quality":
        report = run_quality(config, args.tasks)
        print(f"tasks: {report['tasks']}  batch: {report['batch_size']}  "
              f"budget: {report['time_budget_s']}")
        print(f"Pass@First:    {report['pass_at_first']:.3f}")
        print(f"Pass@Finished: {report['pass_at_finished']:.3f}")
        return 0

    if args.command == "cost-sweep":
        batches = tuple(int(x) for x in args.batch_sizes.split(","))
        csv_text = run_cost_sweep(
            config, batch_sizes=batches, draft_len=args.draft_len,
            acceptance=args.acceptance, target_tokens=args.target_tokens,
        )
        print(csv_text, end="")
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
