"""Contrastive correction of the standard-layer distribution.

The corrected scores are (1+alpha)*p_ori - alpha*p_ref, optionally in log
space, followed by an adaptive reliability constraint that zeroes tokens
whose original probability falls below beta times the original maximum.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import _as_f64, check_distribution, normalize
from .errors import DimensionMismatch, ValidError, ZeroMass

SPACE_PROBABILITY = "probability"
SPACE_LOGIT = "logit"


@dataclass(frozen=True)
class ContrastConfig:
    alpha: float = 1.0
    beta: float = 0.1
    space: str = SPACE_PROBABILITY
    truncation: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise ValidError("alpha must be >= 0")
        if not (0 < self.beta <= 1):
            raise ValidError("beta must be in (0, 1]")
        if self.space not in (SPACE_PROBABILITY, SPACE_LOGIT):
            raise ValidError(f"unknown contrast space {self.space!r}")


@dataclass(frozen=True)
class ContrastResult:
    p_valid: np.ndarray          # corrected distribution, unit sum
    kept_support: np.ndarray     # token ids surviving the reliability mask
    raw_scores: np.ndarray       # pre-clamp contrast scores, for diagnostics
    fallback: bool = False       # True when ZeroMass forced the p_ori fallback


def reliability_mask(p_ori: np.ndarray, beta: float) -> np.ndarray:
    """Boolean mask of tokens with p_ori >= beta * max(p_ori).

    Never empty: the argmax always qualifies (including beta == 1).
    """
    if not (0 < beta <= 1):
        raise ValidError("beta must be in (0, 1]")
    p = _as_f64(p_ori)
    check_distribution(p)
    return p >= beta * p.max()


def apply_mask(raw_scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero scores outside the mask, clamp negatives, renormalize.

    Raises ZeroMass if nothing positive survives.
    """
    raw = _as_f64(raw_scores)
    if mask.shape != raw.shape:
        raise DimensionMismatch("mask and scores differ in length")
    if not mask.any():
        raise ValidError("mask must be non-empty")
    kept = np.where(mask, np.maximum(raw, 0.0), 0.0)
    return normalize(kept)  # raises ZeroMass when all surviving scores <= 0


def contrast(p_ori, p_ref, cfg: ContrastConfig) -> ContrastResult:
    """Corrected distribution from the original and reference distributions.

    On ZeroMass (clamping plus truncation annihilated everything) the
    result falls back to truncated-renormalized p_ori with the fallback
    flag set, so a decode never aborts mid-sequence.
    """
    po = _as_f64(p_ori)
    pr = _as_f64(p_ref)
    if po.shape != pr.shape:
        raise DimensionMismatch(
            f"p_ori has {po.size} entries, p_ref has {pr.size}"
        )
    check_distribution(po)
    check_distribution(pr)

    if cfg.space == SPACE_PROBABILITY:
        raw = (1.0 + cfg.alpha) * po - cfg.alpha * pr
    else:
        with np.errstate(divide="ignore"):
            log_po = np.log(po)
            log_pr = np.log(pr)
        raw_logits = (1.0 + cfg.alpha) * log_po - cfg.alpha * log_pr
        # -inf stays -inf (zero-probability tokens stay at zero); NaN can
        # only arise from inf - inf, i.e. both sides zero, same outcome
        raw_logits = np.nan_to_num(raw_logits, nan=-np.inf, posinf=-np.inf)
        shifted = raw_logits - raw_logits.max()
        raw = np.exp(shifted)
        raw /= raw.sum()

    mask = reliability_mask(po, cfg.beta) if cfg.truncation else np.ones(po.size, bool)
    try:
        p_valid = apply_mask(raw, mask)
        fallback = False
    except ZeroMass:
        p_valid = apply_mask(po, mask)
        fallback = True
    return ContrastResult(
        p_valid=p_valid,
        kept_support=np.flatnonzero(mask),
        raw_scores=raw,
        fallback=fallback,
    )


ORDER_VCD_THEN_VALID = "vcd_then_valid"
ORDER_VALID_THEN_VCD = "valid_then_vcd"


def compose_decode(
    p_ori,
    p_ent,
    p_noi,
    order: str,
    alpha: float,
    alpha_prime: float,
) -> np.ndarray:
    """Raw scores of the two contrast operators applied in sequence.

    The noise-reference operator uses coefficient alpha, the fused-layer
    operator uses alpha_prime; each maps p to (1+coef)*p - coef*reference.
    The result is intentionally not renormalized so the order-of-composition
    identity |order1 - order2| == alpha*alpha_prime*|p_ent - p_noi| can be
    checked exactly.
    """
    po = _as_f64(p_ori)
    pe = _as_f64(p_ent)
    pn = _as_f64(p_noi)
    if not (po.shape == pe.shape == pn.shape):
        raise DimensionMismatch("composed distributions differ in length")

    def vcd(p):
        return (1.0 + alpha) * p - alpha * pn

    def valid_op(p):
        return (1.0 + alpha_prime) * p - alpha_prime * pe

    if order == ORDER_VCD_THEN_VALID:
        return valid_op(vcd(po))
    if order == ORDER_VALID_THEN_VCD:
        return vcd(valid_op(po))
    raise ValidError(f"unknown composition order {order!r}")
