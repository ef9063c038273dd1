"""Plain-array helpers for probabilities and token-level cross-entropy."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from mtlm.errors import InvalidInputError


def softmax_rows(logits) -> np.ndarray:
    """Row-wise softmax of a 2-D array, stable for large magnitudes."""
    x = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("softmax_rows: logits must be finite")
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_rows(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("log_softmax_rows: logits must be finite")
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def masked_cross_entropy(log_probs, targets: Sequence[int], read_positions: Iterable[int]) -> float:
    """Sum of ``-log_probs[r, targets[r + 1]]`` over 0-based read rows ``r``.

    ``targets`` is the full id sequence; row ``r`` predicts the token one
    position to its right.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    total = 0.0
    for r in sorted(read_positions):
        if r < 0 or r >= lp.shape[0] or r + 1 >= len(targets):
            raise IndexError(f"read position {r} out of range for {lp.shape[0]} rows")
        total -= lp[r, targets[r + 1]]
    return float(total)
