"""Uncertainty-guided layer selection and fusion of per-layer distributions.

At each decode step, the candidate layers with the highest next-token
entropy are selected and their distributions are averaged with
softmax-of-entropy weights to form the reference distribution.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .core import _as_f64
from .errors import DimensionMismatch, EmptySelection, MissingLayer, ValidError


@dataclass(frozen=True)
class CandidateBucket:
    """A contiguous-ish set of vision-encoder layers used as fusion candidates.

    Layer indices are 1-based. The standard output layer is excluded from
    the candidate set by construction.
    """

    layers: Tuple[int, ...]
    standard_layer: int
    name: str = ""

    def __post_init__(self):
        if not self.layers:
            raise ValidError("bucket must contain at least one layer")
        if any(b <= a for a, b in zip(self.layers, self.layers[1:])):
            raise ValidError("bucket layers must be strictly increasing")
        if self.standard_layer in self.layers:
            raise ValidError(
                f"standard layer {self.standard_layer} may not be a fusion candidate"
            )
        if any(l < 1 for l in self.layers) or self.standard_layer < 1:
            raise ValidError("layer indices are 1-based")


# Named presets per model. Candidate layer lists follow the published
# per-model selections; the standard output layer is the one the deployed
# model consumes (penultimate encoder layer for llava-v1.5 and
# instructblip-style encoders, final layer for qwen-vl, whose published
# candidate list is trimmed of the standard layer itself).
BUCKET_PRESETS: Dict[str, CandidateBucket] = {
    "llava-v1.5": CandidateBucket(
        layers=(13, 15, 17, 19, 21, 23, 25), standard_layer=24, name="llava-v1.5"
    ),
    "instructblip": CandidateBucket(
        layers=(29, 31, 33, 35, 37, 39), standard_layer=38, name="instructblip"
    ),
    "qwen-vl": CandidateBucket(
        layers=(45, 46, 47, 48), standard_layer=49, name="qwen-vl"
    ),
}


def load_bucket_config(path) -> Dict[str, CandidateBucket]:
    """Parse a plain-text bucket config.

    One bucket per line: ``name = 13,15,17 @ 24`` (candidate layers, then
    the standard layer after '@'). '#' starts a comment; blank lines are
    skipped.
    """
    buckets: Dict[str, CandidateBucket] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                name, rhs = (part.strip() for part in line.split("=", 1))
                layer_part, std_part = (part.strip() for part in rhs.split("@", 1))
                layers = tuple(int(tok) for tok in layer_part.split(","))
                standard = int(std_part)
            except ValueError as exc:
                raise ValidError(f"{path}:{lineno}: malformed bucket line") from exc
            buckets[name] = CandidateBucket(layers=layers, standard_layer=standard, name=name)
    return buckets


def select_top_k(
    per_layer: Mapping[int, np.ndarray],
    bucket: CandidateBucket,
    k: int,
    entropies: Mapping[int, float] | None = None,
) -> List[Tuple[int, float]]:
    """Pick the k bucket layers with the highest next-token entropy.

    Returns (layer, entropy) pairs sorted by entropy descending. Ties are
    broken toward the deeper layer so selection is deterministic.
    Precomputed entropies may be passed to avoid recomputation.
    """
    if k < 1:
        raise ValidError("k must be positive")
    from .core import entropy as _entropy

    scored = []
    for layer in bucket.layers:
        if layer not in per_layer:
            raise MissingLayer(f"layer {layer} has no recorded distribution")
        h = entropies[layer] if entropies is not None else _entropy(per_layer[layer])
        scored.append((layer, float(h)))
    scored.sort(key=lambda pair: (-pair[1], -pair[0]))
    return scored[: min(k, len(scored))]


def fusion_weights(selected: Sequence[Tuple[int, float]]) -> Dict[int, float]:
    """Softmax of entropy values over the selected layers (weights sum to 1)."""
    if not selected:
        raise EmptySelection("fusion over an empty layer selection")
    hs = np.array([h for _, h in selected], dtype=np.float64)
    e = np.exp(hs - hs.max())
    w = e / e.sum()
    return {layer: float(wi) for (layer, _), wi in zip(selected, w)}


def reference_distribution(
    per_layer: Mapping[int, np.ndarray], weights: Mapping[int, float]
) -> np.ndarray:
    """Convex combination of the selected layers' distributions."""
    if not weights:
        raise EmptySelection("no fusion weights")
    out = None
    for layer, w in weights.items():
        if layer not in per_layer:
            raise MissingLayer(f"layer {layer} has no recorded distribution")
        p = _as_f64(per_layer[layer])
        if out is None:
            out = w * p
        else:
            if p.shape != out.shape:
                raise DimensionMismatch(
                    f"layer {layer} has vocab size {p.size}, expected {out.size}"
                )
            out += w * p
    return out
