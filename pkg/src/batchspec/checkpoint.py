"""Binary checkpoint container for model weights.

Layout: magic "BASSCKPT", format version (u32), array count (u32), then per
array: name length (u32), UTF-8 name, rank (u32), dims (u32 each), dtype tag
(u32, 0 = float32 little-endian), raw data. All integers little-endian.
Weights are written on the float32 grid, so save/load round-trips are
bit-exact against in-memory float64 arrays.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import BlockWeights, ModelConfig, ModelWeights

MAGIC = b"BASSCKPT"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 0


class CheckpointError(ValueError):
    pass


def _manifest(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, v, s, f = (config.d_model, config.vocab_size, config.max_seq_len,
                  config.d_ff)
    names: dict[str, tuple[int, ...]] = {
        "token_embedding": (v, d),
        "position_embedding": (s, d),
    }
    per_layer = {
        "attn_norm.gain": (d,), "attn_norm.bias": (d,),
        "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
        "ffn_norm.gain": (d,), "ffn_norm.bias": (d,),
        "w_fc": (d, f), "w_proj": (f, d),
    }
    for i in range(config.n_layer):
        for k, shape in per_layer.items():
            names[f"layer{i}.{k}"] = shape
    names["final_norm.gain"] = (d,)
    names["final_norm.bias"] = (d,)
    names["output_head"] = (d, v)
    return names


def _flatten(weights: ModelWeights) -> dict[str, np.ndarray]:
    out = {
        "token_embedding": weights.token_emb,
        "position_embedding": weights.pos_emb,
    }
    fields = (("attn_norm.gain", "ln1_gain"), ("attn_norm.bias", "ln1_bias"),
              ("wq", "wq"), ("wk", "wk"), ("wv", "wv"), ("wo", "wo"),
              ("ffn_norm.gain", "ln2_gain"), ("ffn_norm.bias", "ln2_bias"),
              ("w_fc", "w_fc"), ("w_proj", "w_proj"))
    for i, blk in enumerate(weights.blocks):
        for name, attr in fields:
            out[f"layer{i}.{name}"] = getattr(blk, attr)
    out["final_norm.gain"] = weights.ln_f_gain
    out["final_norm.bias"] = weights.ln_f_bias
    out["output_head"] = weights.head
    return out


def save_checkpoint(weights: ModelWeights, path: str | Path) -> None:
    arrays = _flatten(weights)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(arrays)))
        for name, arr in arrays.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(struct.pack("<I", DTYPE_FLOAT32))
            fh.write(data.tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint")
    return buf


def load_checkpoint(path: str | Path, config: ModelConfig) -> ModelWeights:
    """Read a checkpoint and validate every array shape against ``config``."""
    expected = _manifest(config)
    arrays: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise CheckpointError("bad magic: not a checkpoint file")
        version, count = struct.unpack("<II", _read_exact(fh, 8))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported format version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
            (tag,) = struct.unpack("<I", _read_exact(fh, 4))
            if tag != DTYPE_FLOAT32:
                raise CheckpointError(f"{name}: unsupported dtype tag {tag}")
            n_elem = int(np.prod(shape, dtype=np.int64)) if rank else 1
            raw = _read_exact(fh, 4 * n_elem)
            if name not in expected:
                raise CheckpointError(f"unexpected array {name!r}")
            if shape != expected[name]:
                raise CheckpointError(
                    f"{name}: shape {shape} does not match config "
                    f"{expected[name]}"
                )
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
            arrays[name] = arr.astype(np.float64)
    missing = set(expected) - set(arrays)
    if missing:
        raise CheckpointError(f"missing arrays: {sorted(missing)}")

    blocks = []
    for i in range(config.n_layer):
        blocks.append(BlockWeights(
            ln1_gain=arrays[f"layer{i}.attn_norm.gain"],
            ln1_bias=arrays[f"layer{i}.attn_norm.bias"],
            wq=arrays[f"layer{i}.wq"], wk=arrays[f"layer{i}.wk"],
            wv=arrays[f"layer{i}.wv"], wo=arrays[f"layer{i}.wo"],
            ln2_gain=arrays[f"layer{i}.ffn_norm.gain"],
            ln2_bias=arrays[f"layer{i}.ffn_norm.bias"],
            w_fc=arrays[f"layer{i}.w_fc"], w_proj=arrays[f"layer{i}.w_proj"],
        ))
    return ModelWeights(
        config=config,
        token_emb=arrays["token_embedding"],
        pos_emb=arrays["position_embedding"],
        blocks=blocks,
        ln_f_gain=arrays["final_norm.gain"],
        ln_f_bias=arrays["final_norm.bias"],
        head=arrays["output_head"],
    )
