"""Temporal fusion: a key/value memory of past frames read by attention.

Each past frame contributes one (C/8, h, w) key map and one (C/2, h, w)
value map.  Reading flattens the query key to an (h*w, C/8) matrix, matches
it against all memory positions with a scaled dot product, normalizes with a
softmax over the whole memory axis, and mixes the value vectors.  Every
output position is therefore a convex combination of memory value vectors.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat, exp, matmul, reshape, rowmax, softmax_rows, transpose
from .errors import ShapeError, StateError

SIMILARITY_MODES = ("standard", "paper-literal")


class MemoryBank:
    """Keys/values of past frames, insertion-ordered, first entry pinned.

    When a capacity is set, appending beyond it evicts the oldest entry
    that is not the first frame.
    """

    def __init__(self, capacity: int | None = None):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be >= 1 or None")
        self.capacity = capacity
        self.keys: list[Tensor] = []
        self.values: list[Tensor] = []

    def __len__(self) -> int:
        return len(self.keys)

    def append(self, key: Tensor, value: Tensor) -> None:
        if key.ndim != 3 or value.ndim != 3:
            raise ShapeError("memory entries must be (C, h, w) maps")
        if key.shape[1:] != value.shape[1:]:
            raise ShapeError(f"key/value spatial dims disagree: {key.shape} vs {value.shape}")
        if self.keys:
            if key.shape != self.keys[0].shape:
                raise ShapeError(f"key shape {key.shape} != bank {self.keys[0].shape}")
            if value.shape != self.values[0].shape:
                raise ShapeError(f"value shape {value.shape} != bank {self.values[0].shape}")
        self.keys.append(key)
        self.values.append(value)
        if self.capacity is not None and len(self.keys) > self.capacity:
            del self.keys[1], self.values[1]


def _flatten_key(key: Tensor) -> Tensor:
    c, h, w = key.shape
    return reshape(key, (c, h * w))


def attention_read(query_key: Tensor, keys: list[Tensor], values: list[Tensor],
                   *, key_scaling: bool = True, similarity: str = "standard",
                   return_attention: bool = False):
    """Shared attention mechanics for the temporal and spatial reads.

    ``similarity='paper-literal'`` applies an extra exponential to the
    scores before the softmax, stabilized by a per-row max subtraction at
    both levels; the default reads the exponential as softmax notation.
    """
    if similarity not in SIMILARITY_MODES:
        raise ValueError(f"similarity must be one of {SIMILARITY_MODES}, got {similarity!r}")
    ck, h, w = query_key.shape
    if any(k.shape != query_key.shape for k in keys):
        raise ShapeError("memory key dims do not match the query key")

    query = transpose(_flatten_key(query_key))                      # (hw, C/8)
    memory_keys = concat([_flatten_key(k) for k in keys], axis=1)   # (C/8, T*hw)
    scores = matmul(query, memory_keys)
    if key_scaling:
        scores = scores * (1.0 / np.sqrt(ck))
    if similarity == "paper-literal":
        scores = exp(scores - rowmax(scores))
    attention = softmax_rows(scores)                                # (hw, T*hw)

    memory_values = concat([_flatten_key(v) for v in values], axis=1)
    mixed = matmul(attention, transpose(memory_values))             # (hw, C/2)
    cv = values[0].shape[0]
    out = reshape(transpose(mixed), (cv, h, w))
    if return_attention:
        return out, attention
    return out


def memory_read(bank: MemoryBank, query_key: Tensor, *, key_scaling: bool = True,
                similarity: str = "standard", return_attention: bool = False):
    """Attend over the whole memory bank with the current frame's key."""
    if len(bank) == 0:
        raise StateError("memory_read on an empty bank")
    return attention_read(query_key, bank.keys, bank.values, key_scaling=key_scaling,
                          similarity=similarity, return_attention=return_attention)
