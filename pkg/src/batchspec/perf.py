"""Acceptance expectations and a roofline-style GPU cost model.

The closed forms capture why naive batched speculation degrades (all-agree
acceptance shrinks as p^b) and what a per-sequence accept policy recovers
(truncated-geometric committed tokens per step). The cost model prices a
decoding step as max(bytes/bandwidth, flops/peak) plus kernel-launch
overhead; utilization is flops over time times peak. It reproduces orderings
and trends, not absolute milliseconds: activation traffic and softmax flops
are ignored as second-order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MODE_REGULAR = "regular"
MODE_SINGLE_SPEC = "single_spec"
MODE_BATCHED_SPEC = "batched_spec"

# dense kernels modeled per layer besides attention (projections, norms, ffn)
DENSE_LAUNCHES_PER_LAYER = 6
EXTRA_LAUNCHES = 2  # embedding gather + output head


@dataclass(frozen=True)
class HardwareProfile:
    """Roofline parameters. Defaults below are public A100 40GB figures;
    they are external constants, used only for qualitative bands."""

    mem_bandwidth: float = 1.555e12   # bytes/s
    peak_flops: float = 3.12e14      # FLOP/s
    launch_overhead: float = 5e-6    # s per kernel launch
    bytes_per_param: float = 2.0     # fp16/bf16

    def __post_init__(self):
        if min(self.mem_bandwidth, self.peak_flops, self.launch_overhead,
               self.bytes_per_param) <= 0:
            raise ValueError("profile parameters must be positive")


A100_40GB = HardwareProfile()


@dataclass(frozen=True)
class StepCost:
    time_s: float
    flops: float
    bytes_moved: float
    launches: int
    utilization: float


def _make_cost(profile: HardwareProfile, flops: float, bytes_moved: float,
               launches: int) -> StepCost:
    time = max(bytes_moved / profile.mem_bandwidth,
               flops / profile.peak_flops)
    time += launches * profile.launch_overhead
    util = flops / (time * profile.peak_flops)
    return StepCost(time, flops, bytes_moved, launches, util)


def combine_costs(profile: HardwareProfile, *costs: StepCost) -> StepCost:
    """Sum sequential phases; utilization is recomputed over the total."""
    time = sum(c.time_s for c in costs)
    flops = sum(c.flops for c in costs)
    return StepCost(
        time_s=time, flops=flops,
        bytes_moved=sum(c.bytes_moved for c in costs),
        launches=sum(c.launches for c in costs),
        utilization=flops / (time * profile.peak_flops) if time > 0 else 0.0,
    )


@dataclass(frozen=True)
class CostGeometry:
    """Transformer shape for cost purposes; n_params may be overridden when
    modeling a model whose exact layout is unknown."""

    n_layer: int
    d_model: int
    n_head: int
    vocab_size: int
    params_override: int | None = None

    @property
    def n_params(self) -> int:
        if self.params_override is not None:
            return self.params_override
        return 12 * self.n_layer * self.d_model ** 2 \
            + self.vocab_size * self.d_model

    def kv_bytes_per_token(self, bytes_per_param: float) -> float:
        return 2 * self.n_layer * self.d_model * bytes_per_param


# representative shapes for the published parameter counts
GEOMETRY_7_8B = CostGeometry(n_layer=30, d_model=4608, n_head=36,
                             vocab_size=50272)
GEOMETRY_310M = CostGeometry(n_layer=4, d_model=2048, n_head=16,
                             vocab_size=50272)


def geometry_from_model_config(cfg) -> CostGeometry:
    """Exact parameter count for a concrete desk-scale model."""
    d, dff = cfg.d_model, cfg.d_ff
    per_layer = 4 * d * d + d * dff + dff * d + 4 * d
    params = (cfg.vocab_size * d + cfg.max_seq_len * d
              + cfg.n_layer * per_layer + 2 * d + d * cfg.vocab_size)
    return CostGeometry(n_layer=cfg.n_layer, d_model=d, n_head=cfg.n_head,
                        vocab_size=cfg.vocab_size, params_override=params)


@dataclass(frozen=True)
class AcceptanceModel:
    """Position-independent acceptance regime: probability p per drafted
    position, batch size b, draft length k."""

    p: float
    b: int = 1
    k: int = 7

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must be in [0, 1], got {self.p}")
        if self.b < 1 or self.k < 1:
            raise ValueError("batch size and draft length must be >= 1")

    def tokens_per_draft_naive(self) -> float:
        """Committed tokens per draft when the whole batch must agree."""
        return expected_tokens_naive_batch(self.p, self.b)

    def tokens_per_step(self) -> float:
        """Committed tokens per step with per-sequence acceptance."""
        return expected_tokens_per_seq(self.p, self.k)


def expected_tokens_naive_batch(p: float, b: int) -> float:
    """Expected committed tokens per draft when the whole batch must agree
    at every position (per-position acceptance becomes p^b)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"p must be in [0, 1), got {p}")
    if b < 1:
        raise ValueError("batch size must be >= 1")
    return 1.0 / (1.0 - p ** b)


def expected_tokens_per_seq(p: float, k: int) -> float:
    """Expected committed tokens per step for one sequence with per-position
    acceptance p and draft length k, counting the correction/bonus token:
    sum_{j=0..k-1} p^j + p^k = (1 - p^(k+1)) / (1 - p)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    if k < 1:
        raise ValueError("draft length must be >= 1")
    if p == 1.0:
        return float(k + 1)
    return (1.0 - p ** (k + 1)) / (1.0 - p)


def _attention_launches(batch_size: int, split: bool) -> int:
    from .attention import pad_launch_count, split_launch_count
    return split_launch_count(batch_size) if split \
        else pad_launch_count(batch_size)


def cost_regular_step(profile: HardwareProfile, geom: CostGeometry,
                      batch_size: int,
                      context_lens: list[int] | int = 512) -> StepCost:
    """One auto-regressive decoding step for a batch.

    Every parameter is fetched once; each sequence additionally streams its
    KV history. Flops scale with the batch because each sequence computes
    its own token against the shared weights.
    """
    if isinstance(context_lens, int):
        context_lens = [context_lens] * batch_size
    kv = geom.kv_bytes_per_token(profile.bytes_per_param)
    bytes_moved = geom.n_params * profile.bytes_per_param \
        + kv * sum(context_lens)
    flops = 2.0 * geom.n_params * batch_size \
        + 4.0 * geom.n_layer * geom.d_model * sum(context_lens)
    launches = geom.n_layer * (DENSE_LAUNCHES_PER_LAYER
                               + _attention_launches(batch_size, False)) \
        + EXTRA_LAUNCHES
    return _make_cost(profile, flops, bytes_moved, launches)


def _verify_pass_cost(profile: HardwareProfile, geom: CostGeometry,
                      tokens_per_seq: int, context_lens: list[int],
                      split: bool) -> StepCost:
    b = len(context_lens)
    kv = geom.kv_bytes_per_token(profile.bytes_per_param)
    bytes_moved = geom.n_params * profile.bytes_per_param \
        + kv * sum(c + tokens_per_seq for c in context_lens)
    flops = 2.0 * geom.n_params * tokens_per_seq * b \
        + 4.0 * geom.n_layer * geom.d_model * tokens_per_seq \
        * sum(c + tokens_per_seq for c in context_lens)
    launches = geom.n_layer * (DENSE_LAUNCHES_PER_LAYER
                               + _attention_launches(b, split)) \
        + EXTRA_LAUNCHES
    if not split:
        # dummy multiply-adds on key/value positions padded to the longest
        # sequence, for every query row and head (one softmax slot each)
        lens = [c + tokens_per_seq for c in context_lens]
        l_max = max(lens)
        d_head = geom.d_model // geom.n_head
        waste_elems = sum(
            geom.n_head * tokens_per_seq * (l_max - ln) * (2 * d_head + 1)
            for ln in lens
        ) * geom.n_layer
        flops += 2.0 * waste_elems
    return _make_cost(profile, flops, bytes_moved, launches)


def cost_speculative_step(profile: HardwareProfile, main_geom: CostGeometry,
                          draft_geom: CostGeometry, batch_size: int,
                          draft_len: int, split: bool = False,
                          context_lens: list[int] | int = 512) -> StepCost:
    """One speculative step: draft_len sequential draft passes plus a single
    main verification pass over (draft_len + 1) positions per sequence, with
    the strategy's padding waste or launch overhead."""
    if isinstance(context_lens, int):
        context_lens = [context_lens] * batch_size
    phases = [
        cost_regular_step(profile, draft_geom, batch_size,
                          [c + j for c in context_lens])
        for j in range(draft_len)
    ]
    phases.append(_verify_pass_cost(profile, main_geom, draft_len + 1,
                                    context_lens, split))
    return combine_costs(profile, *phases)


@dataclass
class LatencySimulation:
    """Simulated-clock finish times for one batch run."""

    mode: str
    batch_size: int
    finish_time_s: list[float]
    tokens: list[int]
    steps: int
    total_time_s: float
    mean_utilization: float
    total_flops: float = 0.0
    total_bytes: float = 0.0

    @property
    def per_token_latency(self) -> list[float]:
        return [t / n for t, n in zip(self.finish_time_s, self.tokens)]

    @property
    def first_latency(self) -> float:
        return min(self.per_token_latency)

    @property
    def last_latency(self) -> float:
        return max(self.per_token_latency)

    @property
    def all_latency(self) -> float:
        # mean of per-sequence per-token latencies, never total/batch
        return float(np.mean(self.per_token_latency))


def simulate_run(profile: HardwareProfile, main_geom: CostGeometry,
                 draft_geom: CostGeometry | None, mode: str, batch_size: int,
                 target_tokens: int, acceptance_p: float = 0.8,
                 draft_len: int = 7, split: bool = False,
                 prompt_len: int = 128, seed: int = 0) -> LatencySimulation:
    """Analytic-mode simulation: position-independent acceptance.

    Per step each active sequence commits 1 + (truncated geometric) tokens;
    step times come from the cost model with the current ragged lengths.
    """
    if mode not in (MODE_REGULAR, MODE_SINGLE_SPEC, MODE_BATCHED_SPEC):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == MODE_SINGLE_SPEC and batch_size != 1:
        raise ValueError("single-sequence speculation requires batch 1")
    rng = np.random.default_rng(seed)
    committed = [0] * batch_size
    ctx = [prompt_len] * batch_size
    finish = [0.0] * batch_size
    clock = 0.0
    steps = 0
    util_acc = 0.0
    flops = bytes_moved = 0.0

    while any(c < target_tokens for c in committed):
        active = [i for i in range(batch_size) if committed[i] < target_tokens]
        steps += 1
        if mode == MODE_REGULAR:
            cost = cost_regular_step(profile, main_geom, len(active),
                                     [ctx[i] for i in active])
            gains = {i: 1 for i in active}
        else:
            cost = cost_speculative_step(profile, main_geom, draft_geom,
                                         len(active), draft_len, split,
                                         [ctx[i] for i in active])
            gains = {}
            for i in active:
                x = 0
                while x < draft_len and rng.random() < acceptance_p:
                    x += 1
                gains[i] = x + 1
        clock += cost.time_s
        util_acc += cost.utilization
        flops += cost.flops
        bytes_moved += cost.bytes_moved
        for i in active:
            committed[i] = min(committed[i] + gains[i], target_tokens)
            ctx[i] = prompt_len + committed[i]
            if committed[i] >= target_tokens and finish[i] == 0.0:
                finish[i] = clock

    return LatencySimulation(
        mode=mode, batch_size=batch_size, finish_time_s=finish,
        tokens=[target_tokens] * batch_size, steps=steps,
        total_time_s=clock, mean_utilization=util_acc / steps,
        total_flops=flops, total_bytes=bytes_moved,
    )


def simulate_from_trace(profile: HardwareProfile, main_geom: CostGeometry,
                        draft_geom: CostGeometry | None,
                        trace, batch_size: int,
                        tokens: list[int], split: bool = False,
                        ) -> LatencySimulation:
    """Attribute simulated step costs over a recorded engine trace."""
    clock = 0.0
    finish = [0.0] * batch_size
    util_acc = 0.0
    flops = bytes_moved = 0.0
    finished_seen = [False] * batch_size
    for step in trace:
        ctx = [step.kv_lengths[s] for s in step.slots]
        if step.draft_length == 0:
            cost = cost_regular_step(profile, main_geom, len(step.slots), ctx)
        else:
            cost = cost_speculative_step(profile, main_geom, draft_geom,
                                         len(step.slots), step.draft_length,
                                         split, ctx)
        clock += cost.time_s
        util_acc += cost.utilization
        flops += cost.flops
        bytes_moved += cost.bytes_moved
        for slot, fin in zip(step.slots, step.finished):
            if fin and not finished_seen[slot]:
                finished_seen[slot] = True
                finish[slot] = clock
    return LatencySimulation(
        mode=MODE_BATCHED_SPEC if any(s.draft_length for s in trace)
        else MODE_REGULAR,
        batch_size=batch_size, finish_time_s=finish, tokens=tokens,
        steps=len(trace), total_time_s=clock,
        mean_utilization=util_acc / max(len(trace), 1),
        total_flops=flops, total_bytes=bytes_moved,
    )
