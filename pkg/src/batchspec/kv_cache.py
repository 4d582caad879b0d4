"""Ragged per-sequence key/value cache with append and rollback.

Each sequence in a batch keeps its own committed length, so sequences can
advance at different speeds. Storage is a contiguous growable buffer per
(layer, sequence); padding never materializes here, only transiently inside
the attention kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CacheSnapshot:
    """Per-sequence committed lengths captured before a speculative step."""

    lengths: tuple[int, ...]


class RaggedKvCache:
    """Per-layer, per-sequence K/V history with independent lengths.

    All sequences share (n_layer, n_head, d_head) geometry. Appends grow a
    sequence by whole positions. Per-layer lengths diverge only transiently
    while a forward call appends layer by layer; outside a forward call they
    agree for every sequence, and that common value is the committed length.
    """

    def __init__(self, n_layer: int, n_seq: int, n_head: int, d_head: int,
                 dtype=np.float64):
        if min(n_layer, n_seq, n_head, d_head) < 1:
            raise ValueError("cache geometry must be positive")
        self.n_layer = n_layer
        self.n_seq = n_seq
        self.n_head = n_head
        self.d_head = d_head
        self.dtype = dtype
        self._len = [[0] * n_seq for _ in range(n_layer)]
        # _bufs[layer][seq] -> (k_buf, v_buf), each [n_head, capacity, d_head]
        self._bufs = [
            [self._empty_pair() for _ in range(n_seq)] for _ in range(n_layer)
        ]

    def _empty_pair(self):
        shape = (self.n_head, 0, self.d_head)
        return (np.empty(shape, self.dtype), np.empty(shape, self.dtype))

    def _grow(self, layer: int, seq: int, need: int) -> None:
        k, v = self._bufs[layer][seq]
        cap = k.shape[1]
        if cap >= need:
            return
        new_cap = max(need, 2 * cap, 16)
        nk = np.empty((self.n_head, new_cap, self.d_head), self.dtype)
        nv = np.empty_like(nk)
        nk[:, :cap] = k
        nv[:, :cap] = v
        self._bufs[layer][seq] = (nk, nv)

    def append(self, seq: int, layer: int, keys: np.ndarray,
               values: np.ndarray) -> None:
        """Append new (key, value) positions for one sequence and layer.

        ``keys`` and ``values`` have shape [n_head, n_new, d_head].
        """
        keys = np.asarray(keys)
        values = np.asarray(values)
        expect = (self.n_head, keys.shape[1] if keys.ndim == 3 else -1,
                  self.d_head)
        if keys.ndim != 3 or keys.shape != expect or values.shape != keys.shape:
            raise ValueError(
                f"geometry mismatch: got {keys.shape}/{values.shape}, "
                f"want [n_head={self.n_head}, n, d_head={self.d_head}]"
            )
        n_new = keys.shape[1]
        length = self._len[layer][seq]
        self._grow(layer, seq, length + n_new)
        k, v = self._bufs[layer][seq]
        k[:, length:length + n_new] = keys
        v[:, length:length + n_new] = values
        self._len[layer][seq] = length + n_new

    def view(self, seq: int, layer: int, length: int | None = None):
        """Read-only (K, V) views of the first ``length`` positions."""
        if length is None:
            length = self._len[layer][seq]
        k, v = self._bufs[layer][seq]
        return k[:, :length], v[:, :length]

    def truncate(self, seq: int, new_len: int) -> None:
        """Roll one sequence back to ``new_len`` positions (all layers)."""
        if new_len < 0:
            raise ValueError("negative length")
        for layer in range(self.n_layer):
            if new_len > self._len[layer][seq]:
                raise ValueError(
                    f"truncate to {new_len} exceeds current length "
                    f"{self._len[layer][seq]} for sequence {seq}"
                )
        for layer in range(self.n_layer):
            self._len[layer][seq] = new_len

    def layer_length(self, seq: int, layer: int) -> int:
        return self._len[layer][seq]

    def length(self, seq: int) -> int:
        """Committed length of one sequence (layers must agree)."""
        lens = {self._len[layer][seq] for layer in range(self.n_layer)}
        if len(lens) != 1:
            raise RuntimeError(
                f"sequence {seq} has divergent per-layer lengths {sorted(lens)}"
            )
        return lens.pop()

    def lengths(self) -> list[int]:
        """Committed length of every sequence."""
        return [self.length(s) for s in range(self.n_seq)]

    def snapshot(self) -> CacheSnapshot:
        return CacheSnapshot(tuple(self.lengths()))

    def restore(self, snap: CacheSnapshot) -> None:
        """Roll every sequence back to a snapshot taken earlier."""
        for seq, n in enumerate(snap.lengths):
            self.truncate(seq, n)
