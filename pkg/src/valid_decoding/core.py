"""Numerically safe primitives for next-token probability vectors.

Entropy is measured in nats throughout; the maximum-entropy bound ln(V)
is then exact for the uniform distribution. All computation is float64
even when trace storage is float32.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import EmptyVector, InvalidDistribution, NonFinite, ZeroMass

# sum-to-one tolerance for distributions accepted as input
SUM_TOLERANCE = 1e-6


def _as_f64(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


def softmax(logits) -> np.ndarray:
    """Stable softmax of a logit vector; max is subtracted before exp."""
    v = _as_f64(logits)
    if v.size == 0:
        raise EmptyVector("softmax of an empty vector")
    if not np.isfinite(v).all():
        raise NonFinite("softmax input contains NaN or infinity")
    return kernels.softmax_rows(v.reshape(1, -1))[0]


def entropy(p) -> float:
    """Shannon entropy in nats, with the 0*ln(0)=0 convention."""
    v = _as_f64(p)
    check_distribution(v)
    return float(kernels.entropy_rows(v.reshape(1, -1))[0])


def normalize(raw) -> np.ndarray:
    """Scale a non-negative vector to unit sum.

    Raises ZeroMass when every entry is zero, which signals that
    clamping/truncation annihilated the distribution and the caller must
    fall back.
    """
    v = _as_f64(raw)
    if v.size == 0:
        raise EmptyVector("normalize of an empty vector")
    if not np.isfinite(v).all():
        raise NonFinite("normalize input contains NaN or infinity")
    if (v < 0).any():
        raise InvalidDistribution("normalize input has negative entries")
    total = v.sum()
    if total <= 0.0:
        raise ZeroMass("all entries are zero")
    return v / total


def check_distribution(p: np.ndarray, tol: float = SUM_TOLERANCE) -> None:
    """Validate the TokenDistribution invariants, raising InvalidDistribution."""
    if p.ndim != 1 or p.size == 0:
        raise InvalidDistribution("distribution must be a non-empty vector")
    if not np.isfinite(p).all():
        raise NonFinite("distribution contains NaN or infinity")
    if (p < 0).any():
        raise InvalidDistribution("distribution has negative entries")
    s = p.sum()
    if abs(s - 1.0) > tol:
        raise InvalidDistribution(f"distribution sums to {s!r}, not 1")


def entropies_for_rows(rows: np.ndarray) -> np.ndarray:
    """Entropy of each row of a (n, V) probability matrix, in nats."""
    m = _as_f64(rows)
    if m.ndim != 2:
        raise InvalidDistribution("expected a 2-D matrix of rows")
    return kernels.entropy_rows(m)
