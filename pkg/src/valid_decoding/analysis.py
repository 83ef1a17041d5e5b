"""Corpus diagnostics: encoding-distortion rate and per-layer curves.

EDR of a bucket is the fraction of standard-layer-wrong questions that at
least one bucket layer answers correctly. The layer curves track mean
next-token entropy and decoding accuracy per layer across a corpus.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from .core import entropies_for_rows
from .errors import EmptyDenominator, EmptyInput, MissingLayer, ValidError
from .traceio import StepRecord, TraceHeader, materialize_step

# Versioned answer-normalization table (v1): maps a stripped, lowercased
# first answer word to a binary label. Anything not listed is unparseable.
ANSWER_TABLE_VERSION = 1
_ANSWER_TABLE = {
    "yes": "yes",
    "yeah": "yes",
    "yep": "yes",
    "no": "no",
    "nope": "no",
}


def normalize_answer(text: str):
    """Map an answer string to 'yes'/'no', or None when unparseable."""
    word = text.strip().strip(".,!?;:\"'").lower()
    return _ANSWER_TABLE.get(word)


def build_correctness_table(
    traces: Iterable[Tuple[TraceHeader, Sequence[StepRecord]]],
    gold_tokens: Mapping[str, int],
) -> Dict[str, Dict[int, bool]]:
    """Per-question, per-layer first-step decode correctness.

    A layer is correct when its greedy first-step token equals the gold
    token for the question.
    """
    table: Dict[str, Dict[int, bool]] = {}
    for header, steps in traces:
        gold = gold_tokens.get(header.question_id)
        if gold is None:
            continue
        per_layer = materialize_step(header, steps[0])
        table[header.question_id] = {
            layer: int(np.argmax(dist)) == gold for layer, dist in per_layer.items()
        }
    return table


@dataclass(frozen=True)
class EdrReport:
    per_bucket: Dict[str, dict]  # bucket id -> {numerator, denominator, edr}
    bucket_definitions: Dict[str, Tuple[int, ...]]


def compute_edr(
    table: Mapping[str, Mapping[int, bool]],
    buckets: Mapping[str, Sequence[int]],
    standard_layer: int,
) -> EdrReport:
    """EDR per bucket over the questions where the standard layer is wrong.

    A bucket counts as correct for a question when ANY of its layers
    decodes correctly.
    """
    if not table:
        raise EmptyInput("empty correctness table")
    wrong_qids = []
    for qid, layers in table.items():
        if standard_layer not in layers:
            raise MissingLayer(f"question {qid}: standard layer not in table")
        if not layers[standard_layer]:
            wrong_qids.append(qid)
    if not wrong_qids:
        raise EmptyDenominator("standard layer is never wrong on this corpus")

    per_bucket = {}
    for bucket_id, layer_set in buckets.items():
        for layer in layer_set:
            for qid in wrong_qids:
                if layer not in table[qid]:
                    raise MissingLayer(f"question {qid}: layer {layer} not in table")
        numerator = sum(
            1
            for qid in wrong_qids
            if any(table[qid][layer] for layer in layer_set)
        )
        per_bucket[bucket_id] = {
            "numerator": numerator,
            "denominator": len(wrong_qids),
            "edr": numerator / len(wrong_qids),
        }
    return EdrReport(
        per_bucket=per_bucket,
        bucket_definitions={b: tuple(layers) for b, layers in buckets.items()},
    )


@dataclass(frozen=True)
class LayerCurve:
    per_layer: Dict[int, dict]  # layer -> {mean_entropy, accuracy, n}


# Accumulator form so shards can be aggregated in parallel and merged;
# the merge is exact for counts and associative for the entropy sums.

def curve_accumulate(
    records: Mapping[str, Mapping[int, Tuple[float, bool]]]
) -> Dict[int, List[float]]:
    acc: Dict[int, List[float]] = {}
    for layers in records.values():
        for layer, (h, correct) in layers.items():
            bucket = acc.setdefault(layer, [0.0, 0, 0])
            bucket[0] += h
            bucket[1] += 1 if correct else 0
            bucket[2] += 1
    return acc


def curve_merge(a: Dict[int, List[float]], b: Dict[int, List[float]]) -> Dict[int, List[float]]:
    out = {layer: list(v) for layer, v in a.items()}
    for layer, v in b.items():
        bucket = out.setdefault(layer, [0.0, 0, 0])
        bucket[0] += v[0]
        bucket[1] += v[1]
        bucket[2] += v[2]
    return out


def curve_finalize(acc: Mapping[int, Sequence[float]]) -> LayerCurve:
    if not acc:
        raise EmptyInput("no layer records")
    per_layer = {}
    for layer in sorted(acc):
        h_sum, n_correct, n = acc[layer]
        per_layer[int(layer)] = {
            "mean_entropy": h_sum / n,
            "accuracy": n_correct / n,
            "n": int(n),
        }
    return LayerCurve(per_layer=per_layer)


def layer_curves(
    records: Mapping[str, Mapping[int, Tuple[float, bool]]]
) -> LayerCurve:
    """Mean entropy and decoding accuracy per layer across questions."""
    return curve_finalize(curve_accumulate(records))


def build_curve_records(
    traces: Iterable[Tuple[TraceHeader, Sequence[StepRecord]]],
    gold_tokens: Mapping[str, int],
) -> Dict[str, Dict[int, Tuple[float, bool]]]:
    """(entropy, correct) per question and layer, from first-step rows."""
    records: Dict[str, Dict[int, Tuple[float, bool]]] = {}
    for header, steps in traces:
        gold = gold_tokens.get(header.question_id)
        if gold is None:
            continue
        per_layer = materialize_step(header, steps[0])
        rows = np.asarray([per_layer[l] for l in header.layer_ids])
        hs = entropies_for_rows(rows)
        records[header.question_id] = {
            layer: (float(h), int(np.argmax(per_layer[layer])) == gold)
            for layer, h in zip(header.layer_ids, hs)
        }
    return records


# --- deterministic CSV / SVG emitters --------------------------------------

def write_curve_csv(curve: LayerCurve, path) -> None:
    if not curve.per_layer:
        raise EmptyInput("empty curve")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("layer,mean_entropy,accuracy,n\n")
        for layer, row in curve.per_layer.items():
            fh.write(
                f"{layer},{row['mean_entropy']:.12g},{row['accuracy']:.12g},{row['n']}\n"
            )


def write_edr_csv(report: EdrReport, path) -> None:
    if not report.per_bucket:
        raise EmptyInput("empty EDR report")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("bucket,layers,numerator,denominator,edr\n")
        for bucket_id, row in report.per_bucket.items():
            layers = " ".join(str(l) for l in report.bucket_definitions[bucket_id])
            fh.write(
                f"{bucket_id},{layers},{row['numerator']},{row['denominator']},"
                f"{row['edr']:.12g}\n"
            )


_SVG_W, _SVG_H, _SVG_PAD = 640, 360, 48


def _scale(values, lo, hi, out_lo, out_hi):
    span = (hi - lo) or 1.0
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in values]


def write_curve_svg(curve: LayerCurve, path) -> None:
    """Two-line chart (mean entropy, accuracy) rendered without plotting deps
    so the bytes are a pure function of the input."""
    if not curve.per_layer:
        raise EmptyInput("empty curve")
    layers = list(curve.per_layer)
    ent = [curve.per_layer[l]["mean_entropy"] for l in layers]
    acc = [curve.per_layer[l]["accuracy"] for l in layers]
    xs = _scale(layers, min(layers), max(layers), _SVG_PAD, _SVG_W - _SVG_PAD)
    ys_e = _scale(ent, 0.0, max(ent) or 1.0, _SVG_H - _SVG_PAD, _SVG_PAD)
    ys_a = _scale(acc, 0.0, 1.0, _SVG_H - _SVG_PAD, _SVG_PAD)

    def poly(ys):
        return " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}">',
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
        f'<polyline points="{poly(ys_e)}" fill="none" stroke="#d62728" stroke-width="2"/>',
        f'<polyline points="{poly(ys_a)}" fill="none" stroke="#1f77b4" stroke-width="2"/>',
        f'<text x="{_SVG_PAD}" y="20" fill="#d62728">mean entropy (nats)</text>',
        f'<text x="{_SVG_W // 2}" y="20" fill="#1f77b4">decoding accuracy</text>',
        f'<text x="{_SVG_W // 2 - 20}" y="{_SVG_H - 12}">layer</text>',
        "</svg>",
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")


def write_edr_svg(report: EdrReport, path) -> None:
    """Bar chart of EDR per bucket, deterministic bytes."""
    if not report.per_bucket:
        raise EmptyInput("empty EDR report")
    items = list(report.per_bucket.items())
    n = len(items)
    slot = (_SVG_W - 2 * _SVG_PAD) / n
    bars = []
    for i, (bucket_id, row) in enumerate(items):
        h = row["edr"] * (_SVG_H - 2 * _SVG_PAD)
        x = _SVG_PAD + i * slot + slot * 0.15
        y = _SVG_H - _SVG_PAD - h
        bars.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{slot * 0.7:.2f}" '
            f'height="{h:.2f}" fill="#1f77b4"/>'
        )
        bars.append(
            f'<text x="{x:.2f}" y="{_SVG_H - _SVG_PAD + 16}" font-size="11">'
            f"{bucket_id}</text>"
        )
        bars.append(
            f'<text x="{x:.2f}" y="{y - 4:.2f}" font-size="11">'
            f"{row['edr'] * 100:.2f}%</text>"
        )
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}">',
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
        *bars,
        f'<text x="{_SVG_PAD}" y="20">encoding distortion rate per bucket</text>',
        "</svg>",
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")
