"""Extraction loop: one trace file per question, greedy teacher forcing."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExtractorConfig
from .errors import ConfigError, ExtractionError
from .writer import STORAGE_LOGITS, write_trace_file

log = logging.getLogger("trace_extractor")

_REQUIRED_KEYS = ("question_id", "prompt_text", "gold_label", "dataset_tag")


@dataclass(frozen=True)
class ExtractReport:
    written: tuple[Path, ...]
    skipped: tuple[str, ...]  # question ids that failed


def read_questions(path: Path) -> list[dict]:
    questions = []
    if not Path(path).is_file():
        raise ExtractionError(f"question file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ExtractionError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            missing = [k for k in _REQUIRED_KEYS if k not in obj]
            if missing:
                raise ExtractionError(
                    f"{path}:{lineno}: missing keys {', '.join(missing)}"
                )
            questions.append(obj)
    if not questions:
        raise ExtractionError(f"{path}: no questions")
    return questions


def _safe_name(question_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", question_id)


def _greedy(logits: np.ndarray) -> int:
    # ties break to the lowest token id (np.argmax's convention)
    return int(np.argmax(logits))


def extract_question(cfg: ExtractorConfig, adapter, question: dict) -> Path:
    qid = question["question_id"]
    image_path = None
    if cfg.image_root is not None and question.get("image_file"):
        image_path = cfg.image_root / question["image_file"]
    session = adapter.begin(qid, question["prompt_text"], image_path)

    all_layers = sorted(set(cfg.layers) | {cfg.standard_layer})
    generated: list[int] = []
    steps = []
    for _ in range(cfg.max_new_tokens):
        rows = {
            lid: adapter.step_logits(session, lid, generated)
            for lid in all_layers
        }
        noise = (
            adapter.noise_logits(session, generated)
            if cfg.noise_channel else None
        )
        chosen = _greedy(rows[cfg.standard_layer])
        steps.append((rows, noise, chosen))
        generated.append(chosen)
        if adapter.eos_token_id is not None and chosen == adapter.eos_token_id:
            break

    out = cfg.output_dir / "traces" / f"{_safe_name(qid)}.vlt"
    return write_trace_file(
        out,
        question_id=qid,
        vocab_size=adapter.vocab_size,
        layer_ids=all_layers,
        standard_layer=cfg.standard_layer,
        storage=STORAGE_LOGITS,
        steps=steps,
    )


def extract(cfg: ExtractorConfig, adapter=None) -> ExtractReport:
    """Run extraction for every question; failures are logged and skipped."""
    if adapter is None:
        from .adapters import build_adapter

        adapter = build_adapter(
            cfg.model, device=cfg.device,
            noise_sigma=cfg.noise_sigma if cfg.noise_channel else 0.0,
            seed=cfg.seed, options=cfg.adapter_options,
        )

    bad = [l for l in (*cfg.layers, cfg.standard_layer)
           if l > adapter.encoder_layer_count]
    if bad:
        raise ConfigError(
            f"layer ids {bad} exceed this encoder's layer count "
            f"({adapter.encoder_layer_count})"
        )

    questions = read_questions(cfg.questions)
    (cfg.output_dir / "traces").mkdir(parents=True, exist_ok=True)

    written, skipped = [], []
    for q in questions:
        try:
            written.append(extract_question(cfg, adapter, q))
        except Exception:
            log.exception("question %s failed; skipping", q["question_id"])
            skipped.append(q["question_id"])

    # sidecar: copy through only the schema keys plus known optionals
    sidecar = cfg.output_dir / "questions.jsonl"
    keep = set(_REQUIRED_KEYS) | {"gold_text", "sampling_split"}
    with open(sidecar, "w", encoding="utf-8") as fh:
        for q in questions:
            if q["question_id"] in skipped:
                continue
            fh.write(json.dumps(
                {k: v for k, v in q.items() if k in keep}, sort_keys=True
            ) + "\n")

    return ExtractReport(written=tuple(written), skipped=tuple(skipped))
