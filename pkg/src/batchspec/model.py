"""Desk-scale decoder-only transformer over a ragged KV cache.

Pre-layer-norm blocks with GELU feed-forward, learned absolute position
embeddings, and untied output head. All arithmetic is float64 with values
initialized on the float32 grid, so checkpoints (stored float32) round-trip
bit-exactly. Dense layers are computed per sequence, which makes every
sequence's logits independent of what else shares the batch; only the
attention stage sees the whole ragged batch, through the pad/split
strategies.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np
from scipy.special import erf

from .attention import AttentionStrategy, AttentionWorkload, attend
from .kv_cache import RaggedKvCache
from .quant import (
    QuantTensor,
    fake_quant_per_head,
    int_gemm_dequant,
    quantize_activations_per_token,
    quantize_weights_per_channel,
)

LN_EPS = 1e-5
WEIGHT_STD = 0.02
FFN_MULT = 4


@dataclass(frozen=True)
class ModelConfig:
    n_layer: int
    n_head: int
    d_model: int
    d_head: int
    vocab_size: int
    max_seq_len: int

    def __post_init__(self):
        for name in ("n_layer", "n_head", "d_model", "d_head", "vocab_size",
                     "max_seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_model % self.n_head != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_head {self.n_head}"
            )
        if self.d_model != self.n_head * self.d_head:
            raise ValueError(
                f"d_model {self.d_model} != n_head {self.n_head} "
                f"* d_head {self.d_head}"
            )

    @property
    def d_ff(self) -> int:
        return FFN_MULT * self.d_model


def desk_config(n_layer=4, n_head=8, d_model=256, vocab_size=512,
                max_seq_len=1024) -> ModelConfig:
    """Default desk-scale geometry: runs in seconds yet hits every path."""
    return ModelConfig(n_layer=n_layer, n_head=n_head, d_model=d_model,
                       d_head=d_model // n_head, vocab_size=vocab_size,
                       max_seq_len=max_seq_len)


@dataclass
class BlockWeights:
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray
    w_fc: np.ndarray
    w_proj: np.ndarray


@dataclass
class ModelWeights:
    config: ModelConfig
    token_emb: np.ndarray   # [vocab, d_model]
    pos_emb: np.ndarray     # [max_seq_len, d_model]
    blocks: list[BlockWeights]
    ln_f_gain: np.ndarray
    ln_f_bias: np.ndarray
    head: np.ndarray        # [d_model, vocab]


@dataclass
class QuantizedModelWeights:
    """Per-channel INT8 companions for every linear layer."""

    blocks: list[dict[str, QuantTensor]]
    head: QuantTensor


def _gauss(rng: np.random.Generator, shape) -> np.ndarray:
    # draw on the float32 grid so checkpoint round-trips are bit-exact
    x = rng.normal(0.0, WEIGHT_STD, size=shape)
    return x.astype(np.float32).astype(np.float64)


def init_model(config: ModelConfig, seed: int) -> ModelWeights:
    """Deterministic seeded Gaussian init (std 0.02); no training happens."""
    rng = np.random.default_rng(seed)
    d, v, s = config.d_model, config.vocab_size, config.max_seq_len
    token_emb = _gauss(rng, (v, d))
    pos_emb = _gauss(rng, (s, d))
    blocks = []
    for _ in range(config.n_layer):
        blocks.append(BlockWeights(
            ln1_gain=np.ones(d), ln1_bias=np.zeros(d),
            wq=_gauss(rng, (d, d)), wk=_gauss(rng, (d, d)),
            wv=_gauss(rng, (d, d)), wo=_gauss(rng, (d, d)),
            ln2_gain=np.ones(d), ln2_bias=np.zeros(d),
            w_fc=_gauss(rng, (d, config.d_ff)),
            w_proj=_gauss(rng, (config.d_ff, d)),
        ))
    return ModelWeights(
        config=config, token_emb=token_emb, pos_emb=pos_emb, blocks=blocks,
        ln_f_gain=np.ones(d), ln_f_bias=np.zeros(d),
        head=_gauss(rng, (d, v)),
    )


def prepare_quantized(weights: ModelWeights) -> QuantizedModelWeights:
    names = ("wq", "wk", "wv", "wo", "w_fc", "w_proj")
    blocks = [
        {n: quantize_weights_per_channel(getattr(blk, n)) for n in names}
        for blk in weights.blocks
    ]
    return QuantizedModelWeights(
        blocks=blocks, head=quantize_weights_per_channel(weights.head)
    )


def new_cache(config: ModelConfig, n_seq: int) -> RaggedKvCache:
    return RaggedKvCache(config.n_layer, n_seq, config.n_head, config.d_head)


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * gain + bias


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _linear(x: np.ndarray, w: np.ndarray,
            wq: QuantTensor | None) -> np.ndarray:
    if wq is None:
        return x @ w
    return int_gemm_dequant(quantize_activations_per_token(x), wq)


def _split_heads(x: np.ndarray, n_head: int) -> np.ndarray:
    t, d = x.shape
    return x.reshape(t, n_head, d // n_head).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, t, dh = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * dh)


def forward_block(weights: ModelWeights, cache: RaggedKvCache,
                  active_seqs: list[int], new_tokens: list[list[int]],
                  strategy: AttentionStrategy = AttentionStrategy.PAD,
                  quantized: QuantizedModelWeights | None = None,
                  ) -> list[np.ndarray]:
    """Run a ragged block of new tokens through the model.

    ``new_tokens[i]`` extends sequence ``active_seqs[i]``; lengths may
    differ across the batch. Returns one [len_i, vocab] logits array per
    sequence and leaves the new positions' K/V in the cache.
    """
    cfg = weights.config
    if len(active_seqs) != len(new_tokens) or not active_seqs:
        raise ValueError("active_seqs and new_tokens must align and be non-empty")
    offsets = []
    for seq, toks in zip(active_seqs, new_tokens):
        if len(toks) < 1:
            raise ValueError(f"sequence {seq}: empty token block")
        off = cache.length(seq)
        if off + len(toks) > cfg.max_seq_len:
            raise ValueError(
                f"sequence {seq}: context {off + len(toks)} exceeds "
                f"max_seq_len {cfg.max_seq_len}"
            )
        offsets.append(off)

    xs = []
    for seq, toks, off in zip(active_seqs, new_tokens, offsets):
        ids = np.asarray(toks, dtype=np.int64)
        if ids.min() < 0 or ids.max() >= cfg.vocab_size:
            raise ValueError(f"sequence {seq}: token id outside vocab")
        pos = np.arange(off, off + len(toks))
        xs.append(weights.token_emb[ids] + weights.pos_emb[pos])

    for li, blk in enumerate(weights.blocks):
        bq = quantized.blocks[li] if quantized is not None else {}
        queries = []
        for i, seq in enumerate(active_seqs):
            h = _layer_norm(xs[i], blk.ln1_gain, blk.ln1_bias)
            q = _linear(h, blk.wq, bq.get("wq"))
            k = _linear(h, blk.wk, bq.get("wk"))
            v = _linear(h, blk.wv, bq.get("wv"))
            if quantized is not None:
                q = fake_quant_per_head(q, cfg.n_head)
                k = fake_quant_per_head(k, cfg.n_head)
                v = fake_quant_per_head(v, cfg.n_head)
            cache.append(seq, li, _split_heads(k, cfg.n_head),
                         _split_heads(v, cfg.n_head))
            queries.append(_split_heads(q, cfg.n_head))
        workload = AttentionWorkload(
            queries=queries,
            keys=[cache.view(seq, li)[0] for seq in active_seqs],
            values=[cache.view(seq, li)[1] for seq in active_seqs],
            offsets=offsets,
        )
        ctx = attend(workload, strategy)
        for i in range(len(active_seqs)):
            xs[i] = xs[i] + _linear(_merge_heads(ctx[i]), blk.wo,
                                    bq.get("wo"))
            h2 = _layer_norm(xs[i], blk.ln2_gain, blk.ln2_bias)
            ff = _linear(_gelu(_linear(h2, blk.w_fc, bq.get("w_fc"))),
                         blk.w_proj, bq.get("w_proj"))
            xs[i] = xs[i] + ff

    head_q = quantized.head if quantized is not None else None
    out = []
    for i in range(len(active_seqs)):
        h = _layer_norm(xs[i], weights.ln_f_gain, weights.ln_f_bias)
        out.append(_linear(h, weights.head, head_q))
    return out


def prefill(weights: ModelWeights, cache: RaggedKvCache, seq: int,
            prompt: list[int],
            strategy: AttentionStrategy = AttentionStrategy.PAD,
            quantized: QuantizedModelWeights | None = None) -> np.ndarray:
    """Encode a prompt into an empty sequence; returns last-position logits."""
    if len(prompt) == 0:
        raise ValueError("empty prompt: prefill needs at least one token")
    if cache.length(seq) != 0:
        raise ValueError(f"sequence {seq} already has cached context")
    logits = forward_block(weights, cache, [seq], [list(prompt)], strategy,
                           quantized)
    return logits[0][-1]


@runtime_checkable
class LogitsProvider(Protocol):
    """Uniform interface over main model, draft model, and synthetic draft.

    Given committed context per sequence and a block of new tokens, return
    logits for each new position and update the provider's own cache. Two
    calls with identical committed state and inputs return identical logits.
    """

    @property
    def vocab_size(self) -> int: ...

    @property
    def max_seq_len(self) -> int: ...

    def prefill(self, seq: int, prompt: list[int]) -> np.ndarray: ...

    def forward(self, active_seqs: list[int],
                new_tokens: list[list[int]]) -> list[np.ndarray]: ...

    def rollback(self, seq: int, length: int) -> None: ...

    def length(self, seq: int) -> int: ...


class MainModel:
    """Logits provider over one model and its own ragged cache.

    Two calls with identical committed state and inputs return identical
    logits; the cache is owned by this instance and rolled back via
    ``rollback``.
    """

    def __init__(self, weights: ModelWeights, n_seq: int,
                 strategy: AttentionStrategy = AttentionStrategy.PAD,
                 quantized: bool = False):
        self.weights = weights
        self.strategy = strategy
        self.cache = new_cache(weights.config, n_seq)
        self.quantized = prepare_quantized(weights) if quantized else None

    @property
    def config(self) -> ModelConfig:
        return self.weights.config

    @property
    def vocab_size(self) -> int:
        return self.config.vocab_size

    @property
    def max_seq_len(self) -> int:
        return self.config.max_seq_len

    def prefill(self, seq: int, prompt: list[int]) -> np.ndarray:
        return prefill(self.weights, self.cache, seq, prompt, self.strategy,
                       self.quantized)

    def forward(self, active_seqs: list[int],
                new_tokens: list[list[int]]) -> list[np.ndarray]:
        return forward_block(self.weights, self.cache, active_seqs,
                             new_tokens, self.strategy, self.quantized)

    def rollback(self, seq: int, length: int) -> None:
        self.cache.truncate(seq, length)

    def length(self, seq: int) -> int:
        return self.cache.length(seq)

    def lengths(self) -> list[int]:
        return self.cache.lengths()


class SyntheticAlignedDraft:
    """Draft provider with a controllable acceptance rate.

    Runs the main model's weights on its own cache and emits, per position,
    a deterministic-seeded mixture of the main distribution (weight =
    alignment) and a perturbed one: a hash of (perturbation seed, token
    history) selects which component the position gets, so with probability
    ``alignment`` the logits are the main model's bitwise, and otherwise a
    point mass on a pseudo-random token. Point masses land where the main
    model has almost no mass, so the measured acceptance rate tracks the
    alignment knob at any temperature, and per-position acceptances are
    independent - the regime the closed-form acceptance math assumes.

    At alignment 1 every position is the main distribution, exactly.
    """

    def __init__(self, weights: ModelWeights, alignment: float,
                 perturb_seed: int, n_seq: int,
                 strategy: AttentionStrategy = AttentionStrategy.PAD,
                 quantized: bool = False):
        if not 0.0 <= alignment <= 1.0:
            raise ValueError(f"alignment must be in [0, 1], got {alignment}")
        self.alignment = float(alignment)
        self.perturb_seed = int(perturb_seed)
        self.inner = MainModel(weights, n_seq, strategy, quantized)
        self._history: list[list[int]] = [[] for _ in range(n_seq)]

    @property
    def vocab_size(self) -> int:
        return self.inner.vocab_size

    @property
    def max_seq_len(self) -> int:
        return self.inner.max_seq_len

    def _perturbation(self, prefix: list[int]) -> tuple[float, int]:
        """Deterministic (uniform draw, perturbation token) for a context."""
        data = self.perturb_seed.to_bytes(8, "little", signed=True)
        data += np.asarray(prefix, dtype=np.int64).tobytes()
        digest = hashlib.blake2b(data, digest_size=16).digest()
        u = int.from_bytes(digest[:8], "little") / 2.0 ** 64
        y = int.from_bytes(digest[8:], "little") % self.vocab_size
        return u, y

    def _mix(self, seq: int, raw: np.ndarray, base_len: int) -> np.ndarray:
        if self.alignment == 1.0:
            return raw
        out = raw.copy()
        hist = self._history[seq]
        for j in range(raw.shape[0]):
            u, y = self._perturbation(hist[:base_len + j + 1])
            if u >= self.alignment:
                out[j] = -np.inf
                out[j, y] = 0.0
        return out

    def prefill(self, seq: int, prompt: list[int]) -> np.ndarray:
        base_len = len(self._history[seq])
        raw = self.inner.prefill(seq, prompt)
        self._history[seq] = list(prompt)
        return self._mix(seq, raw[None, :], base_len + len(prompt) - 1)[0]

    def forward(self, active_seqs: list[int],
                new_tokens: list[list[int]]) -> list[np.ndarray]:
        raws = self.inner.forward(active_seqs, new_tokens)
        outs = []
        for seq, toks, raw in zip(active_seqs, new_tokens, raws):
            base_len = len(self._history[seq])
            self._history[seq].extend(toks)
            outs.append(self._mix(seq, raw, base_len))
        return outs

    def rollback(self, seq: int, length: int) -> None:
        self.inner.rollback(seq, length)
        del self._history[seq][length:]

    def length(self, seq: int) -> int:
        return self.inner.length(seq)

    def lengths(self) -> list[int]:
        return self.inner.lengths()


def synthetic_draft_logits(draft: SyntheticAlignedDraft, seq: int,
                           new_tokens: list[int]) -> np.ndarray:
    """Advance the synthetic draft by a token block; returns [len, vocab]
    mixed logits for the new positions."""
    return draft.forward([seq], [list(new_tokens)])[0]
