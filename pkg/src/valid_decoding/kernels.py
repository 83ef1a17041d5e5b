"""Hot numeric kernels: row-wise softmax and Shannon entropy.

Two implementations are provided: numba @njit kernels and a pure-numpy
fallback. Selection happens once at import time:

  * set VALID_NO_NUMBA=1 to force the numpy path;
  * the numpy path is also used automatically when numba is unavailable.

Both paths must agree to ~1e-15; tests and benchmarks/bench_kernels.py
compare them directly. All kernels take and return float64 arrays.
"""
from __future__ import annotations

import math
import os

import numpy as np

_FORCE_NUMPY = os.environ.get("VALID_NO_NUMBA", "").strip() not in ("", "0")

try:
    if _FORCE_NUMPY:
        raise ImportError
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:
    _HAVE_NUMBA = False


def _softmax_rows_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _entropy_rows_np(probs: np.ndarray) -> np.ndarray:
    # 0 * ln 0 = 0 by skipping zeros, so one-hot rows give exactly 0.0
    safe = np.where(probs > 0.0, probs, 1.0)
    return -(np.where(probs > 0.0, probs * np.log(safe), 0.0)).sum(axis=1)


if _HAVE_NUMBA:

    @njit(cache=True)
    def _softmax_rows_nb(logits):  # pragma: no cover - exercised via dispatch
        n, v = logits.shape
        out = np.empty((n, v))
        for i in range(n):
            m = logits[i, 0]
            for j in range(1, v):
                if logits[i, j] > m:
                    m = logits[i, j]
            s = 0.0
            for j in range(v):
                e = math.exp(logits[i, j] - m)
                out[i, j] = e
                s += e
            for j in range(v):
                out[i, j] /= s
        return out

    @njit(cache=True)
    def _entropy_rows_nb(probs):  # pragma: no cover - exercised via dispatch
        n, v = probs.shape
        out = np.empty(n)
        for i in range(n):
            h = 0.0
            for j in range(v):
                p = probs[i, j]
                if p > 0.0:
                    h -= p * math.log(p)
            out[i] = h
        return out

    softmax_rows = _softmax_rows_nb
    entropy_rows = _entropy_rows_nb
else:
    softmax_rows = _softmax_rows_np
    entropy_rows = _entropy_rows_np


def backend() -> str:
    """Name of the active kernel backend ('numba' or 'numpy')."""
    return "numba" if _HAVE_NUMBA else "numpy"
