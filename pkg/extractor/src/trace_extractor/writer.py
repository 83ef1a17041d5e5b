"""Independent writer for the `.vlt` trace format.

Layout (all little-endian, rows stored as float32):

    magic             8 bytes  "VLIDTRC1"
    version           u16      1
    vocab_size        u32
    layer_count       u16
    layer_ids         L x u16  strictly increasing
    standard_layer    u16      must appear in layer_ids
    step_count        u32      >= 1
    has_noise_channel u8
    storage           u8       0 = logits, 1 = probabilities
    question_id_len   u16
    question_id       UTF-8 bytes
    then per step:    L rows of V float32, optional noise row, u32 chosen token

This module deliberately shares no code with the decoding engine's reader;
the tests prove byte-for-byte compatibility across that boundary.
"""
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ExtractionError

MAGIC = b"VLIDTRC1"
VERSION = 1
STORAGE_LOGITS = 0
STORAGE_PROBS = 1

_FIXED = struct.Struct("<HIH")     # version, vocab_size, layer_count
_TAIL = struct.Struct("<HIBBH")    # standard, step_count, noise, storage, id_len
_TOKEN = struct.Struct("<I")


def _row_bytes(row: np.ndarray, vocab_size: int) -> bytes:
    arr = np.ascontiguousarray(row, dtype=np.float32)
    if arr.shape != (vocab_size,):
        raise ExtractionError(
            f"row shape {arr.shape} does not match vocab size {vocab_size}"
        )
    if not np.isfinite(arr).all():
        raise ExtractionError("non-finite value in trace row")
    return arr.tobytes()


def trace_bytes(
    *,
    question_id: str,
    vocab_size: int,
    layer_ids: Sequence[int],
    standard_layer: int,
    storage: int,
    steps: Sequence[tuple[dict[int, np.ndarray], np.ndarray | None, int]],
) -> bytes:
    """Serialize one question's trace.

    Each step is ``(rows_by_layer, noise_row_or_None, chosen_token)``. The
    noise channel must be consistently present or absent across steps.
    """
    layer_ids = [int(x) for x in layer_ids]
    if not layer_ids or any(b <= a for a, b in zip(layer_ids, layer_ids[1:])):
        raise ExtractionError("layer ids must be non-empty and strictly increasing")
    if standard_layer not in layer_ids:
        raise ExtractionError("standard layer missing from layer ids")
    if not steps:
        raise ExtractionError("a trace needs at least one step")
    has_noise = steps[0][1] is not None

    qid = question_id.encode("utf-8")
    parts = [
        MAGIC,
        _FIXED.pack(VERSION, vocab_size, len(layer_ids)),
        struct.pack(f"<{len(layer_ids)}H", *layer_ids),
        _TAIL.pack(standard_layer, len(steps), int(has_noise), storage, len(qid)),
        qid,
    ]
    for rows, noise, chosen in steps:
        if (noise is not None) != has_noise:
            raise ExtractionError("inconsistent noise channel across steps")
        for lid in layer_ids:
            if lid not in rows:
                raise ExtractionError(f"step is missing layer {lid}")
            parts.append(_row_bytes(rows[lid], vocab_size))
        if noise is not None:
            parts.append(_row_bytes(noise, vocab_size))
        parts.append(_TOKEN.pack(int(chosen)))
    return b"".join(parts)


def write_trace_file(path: str | Path, **kwargs) -> Path:
    """Serialize and write atomically (temp file + rename)."""
    path = Path(path)
    payload = trace_bytes(**kwargs)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path
