"""Bit-exact reader/writer for the logit-trace binary format.

One trace file holds everything recorded for one question: which encoder
layers were probed, the standard output layer, and for every decode step a
float32 row of logits (or probabilities) per layer, an optional
noise-reference row, and the token the recording model emitted.

Layout is little-endian and documented in docs/trace-format.md. Storage is
float32; all downstream computation converts to float64.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    BadMagic,
    NonFinitePayload,
    ParseError,
    ShapeMismatch,
    TruncatedFile,
    UnsupportedVersion,
)
from .kernels import softmax_rows

MAGIC = b"VLIDTRC1"
VERSION = 1

STORAGE_LOGITS = 0
STORAGE_PROBS = 1

GOLD_LABELS = ("yes", "no", "free_text")
SAMPLING_SPLITS = ("random", "popular", "adversarial")


@dataclass(frozen=True)
class TraceHeader:
    vocab_size: int
    layer_ids: Tuple[int, ...]
    standard_layer: int
    step_count: int
    has_noise_channel: bool
    storage: int
    question_id: str
    version: int = VERSION

    def __post_init__(self):
        if self.vocab_size <= 0:
            raise ShapeMismatch("vocab_size must be positive")
        if self.step_count < 1:
            raise ShapeMismatch("step_count must be >= 1")
        if not self.layer_ids:
            raise ShapeMismatch("layer_ids must be non-empty")
        if self.standard_layer not in self.layer_ids:
            raise ShapeMismatch("standard_layer must be among layer_ids")
        if self.storage not in (STORAGE_LOGITS, STORAGE_PROBS):
            raise UnsupportedVersion(f"unknown storage enum {self.storage}")

    @property
    def layer_count(self) -> int:
        return len(self.layer_ids)


@dataclass(frozen=True)
class StepRecord:
    per_layer: np.ndarray                  # (layer_count, vocab_size) float32
    chosen_token: int
    noise_ref: Optional[np.ndarray] = None  # (vocab_size,) float32

    def __eq__(self, other):
        if not isinstance(other, StepRecord):
            return NotImplemented
        if self.chosen_token != other.chosen_token:
            return False
        if not np.array_equal(self.per_layer, other.per_layer):
            return False
        if (self.noise_ref is None) != (other.noise_ref is None):
            return False
        return self.noise_ref is None or np.array_equal(self.noise_ref, other.noise_ref)


_HEADER_FIXED = struct.Struct("<H I H")     # version, vocab_size, layer_count
_HEADER_TAIL = struct.Struct("<H I B B H")  # standard, steps, noise, storage, qid len


def write_trace(header: TraceHeader, steps: Sequence[StepRecord], sink: BinaryIO) -> int:
    """Serialize a trace; returns the number of bytes written."""
    if len(steps) != header.step_count:
        raise ShapeMismatch(
            f"header declares {header.step_count} steps, got {len(steps)}"
        )
    qid = header.question_id.encode("utf-8")
    if len(qid) > 0xFFFF:
        raise ShapeMismatch("question_id longer than 65535 bytes")

    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_HEADER_FIXED.pack(header.version, header.vocab_size, header.layer_count))
    buf.write(struct.pack(f"<{header.layer_count}H", *header.layer_ids))
    buf.write(
        _HEADER_TAIL.pack(
            header.standard_layer,
            header.step_count,
            1 if header.has_noise_channel else 0,
            header.storage,
            len(qid),
        )
    )
    buf.write(qid)

    expected = (header.layer_count, header.vocab_size)
    for i, step in enumerate(steps):
        rows = np.asarray(step.per_layer, dtype=np.float32)
        if rows.shape != expected:
            raise ShapeMismatch(f"step {i}: rows shape {rows.shape}, expected {expected}")
        if not np.isfinite(rows).all():
            raise NonFinitePayload(f"step {i}: non-finite per-layer rows")
        buf.write(rows.tobytes(order="C"))
        if header.has_noise_channel:
            if step.noise_ref is None:
                raise ShapeMismatch(f"step {i}: noise channel declared but missing")
            noise = np.asarray(step.noise_ref, dtype=np.float32)
            if noise.shape != (header.vocab_size,):
                raise ShapeMismatch(f"step {i}: noise row shape {noise.shape}")
            if not np.isfinite(noise).all():
                raise NonFinitePayload(f"step {i}: non-finite noise row")
            buf.write(noise.tobytes(order="C"))
        elif step.noise_ref is not None:
            raise ShapeMismatch(f"step {i}: noise row present but channel not declared")
        buf.write(struct.pack("<I", step.chosen_token))

    payload = buf.getvalue()
    sink.write(payload)
    return len(payload)


class _Cursor:
    """Sequential reader that raises TruncatedFile on shortfall."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(
                f"needed {n} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out


def read_trace(source: BinaryIO) -> Tuple[TraceHeader, List[StepRecord]]:
    """Parse a trace stream, validating magic, version, and shapes."""
    cur = _Cursor(source.read())

    magic = cur.take(len(MAGIC))
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    version, vocab_size, layer_count = _HEADER_FIXED.unpack(cur.take(_HEADER_FIXED.size))
    if version != VERSION:
        raise UnsupportedVersion(f"version {version} not supported")
    if layer_count == 0:
        raise ShapeMismatch("layer_count is zero")
    layer_ids = struct.unpack(f"<{layer_count}H", cur.take(2 * layer_count))
    standard, steps_n, noise_flag, storage, qid_len = _HEADER_TAIL.unpack(
        cur.take(_HEADER_TAIL.size)
    )
    question_id = cur.take(qid_len).decode("utf-8")
    header = TraceHeader(
        vocab_size=vocab_size,
        layer_ids=tuple(layer_ids),
        standard_layer=standard,
        step_count=steps_n,
        has_noise_channel=bool(noise_flag),
        storage=storage,
        question_id=question_id,
        version=version,
    )

    row_bytes = layer_count * vocab_size * 4
    steps: List[StepRecord] = []
    for i in range(steps_n):
        rows = np.frombuffer(cur.take(row_bytes), dtype="<f4").reshape(
            layer_count, vocab_size
        )
        if not np.isfinite(rows).all():
            raise NonFinitePayload(f"step {i}: non-finite per-layer rows")
        noise = None
        if header.has_noise_channel:
            noise = np.frombuffer(cur.take(vocab_size * 4), dtype="<f4")
            if not np.isfinite(noise).all():
                raise NonFinitePayload(f"step {i}: non-finite noise row")
        (chosen,) = struct.unpack("<I", cur.take(4))
        steps.append(StepRecord(per_layer=rows, chosen_token=chosen, noise_ref=noise))
    return header, steps


def write_trace_file(header: TraceHeader, steps: Sequence[StepRecord], path) -> int:
    with open(path, "wb") as fh:
        return write_trace(header, steps, fh)


def read_trace_file(path) -> Tuple[TraceHeader, List[StepRecord]]:
    with open(path, "rb") as fh:
        return read_trace(fh)


def materialize_step(header: TraceHeader, step: StepRecord) -> Dict[int, np.ndarray]:
    """Per-layer float64 distributions for one step, keyed by layer id.

    Logit storage goes through a stable softmax; probability storage is
    renormalized in float64 to absorb the float32 sum tolerance.
    """
    rows = np.asarray(step.per_layer, dtype=np.float64)
    if header.storage == STORAGE_LOGITS:
        dists = softmax_rows(np.ascontiguousarray(rows))
    else:
        dists = rows / rows.sum(axis=1, keepdims=True)
    return {layer: dists[i] for i, layer in enumerate(header.layer_ids)}


def materialize_noise(header: TraceHeader, step: StepRecord) -> Optional[np.ndarray]:
    """The noise-reference distribution for one step, or None."""
    if step.noise_ref is None:
        return None
    row = np.asarray(step.noise_ref, dtype=np.float64)
    if header.storage == STORAGE_LOGITS:
        return softmax_rows(np.ascontiguousarray(row.reshape(1, -1)))[0]
    return row / row.sum()


@dataclass(frozen=True)
class QuestionMeta:
    question_id: str
    prompt_text: str
    gold_label: str
    dataset_tag: str
    gold_text: Optional[str] = None
    sampling_split: Optional[str] = None


def read_questions(path) -> List[QuestionMeta]:
    """Read the JSON-lines question sidecar, one object per question.

    Unknown keys are ignored; missing required keys raise ParseError with
    the offending line number.
    """
    out: List[QuestionMeta] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise ParseError(lineno, "expected a JSON object")
            for key in ("question_id", "prompt_text", "gold_label", "dataset_tag"):
                if key not in obj:
                    raise ParseError(lineno, f"missing required key {key!r}")
            if obj["gold_label"] not in GOLD_LABELS:
                raise ParseError(lineno, f"bad gold_label {obj['gold_label']!r}")
            split = obj.get("sampling_split")
            if split is not None and split not in SAMPLING_SPLITS:
                raise ParseError(lineno, f"bad sampling_split {split!r}")
            out.append(
                QuestionMeta(
                    question_id=str(obj["question_id"]),
                    prompt_text=str(obj["prompt_text"]),
                    gold_label=obj["gold_label"],
                    dataset_tag=str(obj["dataset_tag"]),
                    gold_text=obj.get("gold_text"),
                    sampling_split=split,
                )
            )
    return out
