"""INT8 quantization numerics with integer-accumulate GEMM.

Symmetric scale-only quantization at the finest granularity that keeps the
matrix product in integer arithmetic: one scale per weight output channel,
one per activation row (token), and one per (token, head) group for keys,
queries and values. The GEMM accumulates int8 payloads exactly in int64 and
applies both scales, bias and residual in a single dequantizing epilogue, so
the integer path equals a float GEMM of the dequantized operands up to
output rounding.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

QMAX = 127


class GroupAxis(enum.Enum):
    PER_CHANNEL = "per_channel"        # weight output channels (columns)
    PER_TOKEN = "per_token"            # activation rows
    PER_HEAD_TOKEN = "per_head_token"  # (token, head) groups


@dataclass(frozen=True)
class QuantTensor:
    payload: np.ndarray  # int8, |values| <= 127
    scales: np.ndarray   # > 0, one per quantization group
    axis: GroupAxis
    n_head: int = 1      # used by PER_HEAD_TOKEN only

    def __post_init__(self):
        if self.payload.dtype != np.int8:
            raise ValueError("payload must be int8")
        if np.abs(self.payload).max(initial=0) > QMAX:
            raise ValueError("payload out of [-127, 127]")
        if (self.scales <= 0).any():
            raise ValueError("scales must be positive")


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _quantize_groups(x: np.ndarray, group_max: np.ndarray):
    """Quantize with one scale per group; zero-max groups get scale 1."""
    scales = np.where(group_max > 0, group_max / QMAX, 1.0)
    payload = np.clip(_round_half_away(x / scales), -QMAX, QMAX)
    return payload.astype(np.int8), scales


def quantize_weights_per_channel(w: np.ndarray) -> QuantTensor:
    """Quantize a [d_in, d_out] weight matrix, one scale per output channel."""
    w = np.asarray(w, dtype=np.float64)
    if not np.isfinite(w).all():
        raise ValueError("weights must be finite")
    group_max = np.abs(w).max(axis=0, keepdims=True)
    payload, scales = _quantize_groups(w, group_max)
    return QuantTensor(payload, scales[0], GroupAxis.PER_CHANNEL)


def quantize_activations_per_token(a: np.ndarray) -> QuantTensor:
    """Quantize a [tokens, d] activation matrix, one scale per row."""
    a = np.asarray(a, dtype=np.float64)
    if not np.isfinite(a).all():
        raise ValueError("activations must be finite")
    group_max = np.abs(a).max(axis=1, keepdims=True)
    payload, scales = _quantize_groups(a, group_max)
    return QuantTensor(payload, scales[:, 0], GroupAxis.PER_TOKEN)


def quantize_kqv_per_head(t: np.ndarray, n_head: int) -> QuantTensor:
    """Quantize a [tokens, d] K/Q/V matrix with one scale per (token, head)."""
    t = np.asarray(t, dtype=np.float64)
    if not np.isfinite(t).all():
        raise ValueError("input must be finite")
    n_tok, d = t.shape
    if d % n_head != 0:
        raise ValueError(f"inner dim {d} not divisible by n_head {n_head}")
    grouped = t.reshape(n_tok, n_head, d // n_head)
    group_max = np.abs(grouped).max(axis=2, keepdims=True)
    payload, scales = _quantize_groups(grouped, group_max)
    return QuantTensor(payload.reshape(n_tok, d), scales[:, :, 0],
                       GroupAxis.PER_HEAD_TOKEN, n_head=n_head)


def dequantize(qt: QuantTensor) -> np.ndarray:
    x = qt.payload.astype(np.float64)
    if qt.axis is GroupAxis.PER_CHANNEL:
        return x * qt.scales[None, :]
    if qt.axis is GroupAxis.PER_TOKEN:
        return x * qt.scales[:, None]
    n_tok, d = x.shape
    grouped = x.reshape(n_tok, qt.n_head, d // qt.n_head)
    return (grouped * qt.scales[:, :, None]).reshape(n_tok, d)


def int_gemm_dequant(aq: QuantTensor, wq: QuantTensor,
                     bias: np.ndarray | None = None,
                     residual: np.ndarray | None = None) -> np.ndarray:
    """Integer-accumulate GEMM with a fused dequantize/bias/residual epilogue.

    out[t, c] = (sum_i aq[t, i] * wq[i, c]) * scale_t * scale_c
                + bias[c] + residual[t, c]
    """
    if aq.axis is not GroupAxis.PER_TOKEN:
        raise ValueError("activations must be quantized per token")
    if wq.axis is not GroupAxis.PER_CHANNEL:
        raise ValueError("weights must be quantized per output channel")
    if aq.payload.shape[1] != wq.payload.shape[0]:
        raise ValueError(
            f"inner dims differ: {aq.payload.shape} @ {wq.payload.shape}"
        )
    acc = aq.payload.astype(np.int64) @ wq.payload.astype(np.int64)
    out = acc.astype(np.float64) * aq.scales[:, None] * wq.scales[None, :]
    if bias is not None:
        out = out + bias
    if residual is not None:
        out = out + residual
    return out


def fake_quant_per_head(t: np.ndarray, n_head: int) -> np.ndarray:
    """Round-trip through per-(token, head) INT8; used on K/Q/V so the
    attention GEMMs see exactly the values an integer kernel would."""
    return dequantize(quantize_kqv_per_head(t, n_head))
