"""Binary yes/no hallucination metrics over decode outcomes.

Positive class is "yes". Unparseable predictions count as wrong and as
"not yes" under the default policy; alternative policies exist behind a
flag and are always recorded in the output.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

from .errors import EmptyInput, MissingBaseline, ValidError

PRED_YES = "yes"
PRED_NO = "no"
PRED_UNPARSEABLE = "unparseable"

POLICY_WRONG = "count_as_wrong"   # default: unparseable = incorrect, not yes
POLICY_DROP = "drop"              # exclude unparseable records entirely
POLICY_COERCE_NO = "coerce_no"    # treat unparseable as a "no" prediction


@dataclass(frozen=True)
class EvalRecord:
    question_id: str
    gold: str                  # yes | no
    predicted: str             # yes | no | unparseable
    mode: str
    split: str = ""

    def __post_init__(self):
        if self.gold not in (PRED_YES, PRED_NO):
            raise ValidError(f"gold label must be yes/no, got {self.gold!r}")
        if self.predicted not in (PRED_YES, PRED_NO, PRED_UNPARSEABLE):
            raise ValidError(f"bad prediction {self.predicted!r}")


@dataclass(frozen=True)
class MetricsRow:
    accuracy: float
    precision: float
    recall: float
    f1: float
    yes_ratio: float
    n: int
    n_unparseable: int


@dataclass(frozen=True)
class MetricsTable:
    per_split: Dict[Tuple[str, str], MetricsRow]  # (mode, split) -> metrics
    policy: str


def _confusion(records: List[EvalRecord], policy: str):
    tp = tn = fp = fn = yes = unparseable = 0
    n = 0
    for r in records:
        pred = r.predicted
        if pred == PRED_UNPARSEABLE:
            unparseable += 1
            if policy == POLICY_DROP:
                continue
            if policy == POLICY_COERCE_NO:
                pred = PRED_NO
        n += 1
        if pred == PRED_YES:
            yes += 1
        if pred == PRED_UNPARSEABLE:
            # counts in n, never correct, never yes
            continue
        if r.gold == PRED_YES:
            if pred == PRED_YES:
                tp += 1
            else:
                fn += 1
        else:
            if pred == PRED_YES:
                fp += 1
            else:
                tn += 1
    return tp, tn, fp, fn, yes, n, unparseable


def _row(tp, tn, fp, fn, yes, n, unparseable) -> MetricsRow:
    if n == 0:
        raise EmptyInput("no scoreable records")
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return MetricsRow(
        accuracy=(tp + tn) / n,
        precision=precision,
        recall=recall,
        f1=f1,
        yes_ratio=yes / n,
        n=n,
        n_unparseable=unparseable,
    )


def score(records: Iterable[EvalRecord], policy: str = POLICY_WRONG) -> MetricsTable:
    """Confusion-matrix metrics per (mode, split)."""
    if policy not in (POLICY_WRONG, POLICY_DROP, POLICY_COERCE_NO):
        raise ValidError(f"unknown unparseable policy {policy!r}")
    records = list(records)
    if not records:
        raise EmptyInput("no records to score")
    groups: Dict[Tuple[str, str], List[EvalRecord]] = {}
    for r in records:
        groups.setdefault((r.mode, r.split), []).append(r)
    per_split = {
        key: _row(*_confusion(group, policy)) for key, group in sorted(groups.items())
    }
    return MetricsTable(per_split=per_split, policy=policy)


def compare(
    tables: Mapping[str, MetricsTable], baseline: str
) -> Dict[str, Dict[str, Dict[str, float]]]:
    """Per-split metric deltas of every mode against a baseline mode.

    Returns mode -> split -> {metric: delta}.
    """
    if baseline not in tables:
        raise MissingBaseline(f"no metrics table for baseline mode {baseline!r}")
    base = tables[baseline]
    base_by_split = {split: row for (_, split), row in base.per_split.items()}
    deltas: Dict[str, Dict[str, Dict[str, float]]] = {}
    for mode, table in tables.items():
        if mode == baseline:
            continue
        deltas[mode] = {}
        for (_, split), row in table.per_split.items():
            if split not in base_by_split:
                raise MissingBaseline(
                    f"baseline has no split {split!r} for mode {mode!r}"
                )
            b = base_by_split[split]
            deltas[mode][split] = {
                "accuracy": row.accuracy - b.accuracy,
                "precision": row.precision - b.precision,
                "recall": row.recall - b.recall,
                "f1": row.f1 - b.f1,
                "yes_ratio": row.yes_ratio - b.yes_ratio,
            }
    return deltas


_METRIC_COLS = ("accuracy", "precision", "recall", "f1", "yes_ratio")


def write_metrics_csv(table: MetricsTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("mode,split,accuracy,precision,recall,f1,yes_ratio,n,n_unparseable\n")
        for (mode, split), row in table.per_split.items():
            fh.write(
                f"{mode},{split},{row.accuracy:.6f},{row.precision:.6f},"
                f"{row.recall:.6f},{row.f1:.6f},{row.yes_ratio:.6f},"
                f"{row.n},{row.n_unparseable}\n"
            )


def write_metrics_markdown(table: MetricsTable, path) -> None:
    lines = [
        "| Mode | Split | Accuracy | Precision | Recall | F1 | Yes ratio | n |",
        "|---|---|---|---|---|---|---|---|",
    ]
    for (mode, split), row in table.per_split.items():
        lines.append(
            f"| {mode} | {split} | {row.accuracy * 100:.2f} | "
            f"{row.precision * 100:.2f} | {row.recall * 100:.2f} | "
            f"{row.f1 * 100:.2f} | {row.yes_ratio * 100:.2f} | {row.n} |"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_compare_csv(deltas: Mapping[str, Mapping[str, Mapping[str, float]]], baseline: str, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("mode,baseline,split," + ",".join(f"d_{m}" for m in _METRIC_COLS) + "\n")
        for mode in sorted(deltas):
            for split in sorted(deltas[mode]):
                vals = deltas[mode][split]
                fh.write(
                    f"{mode},{baseline},{split},"
                    + ",".join(f"{vals[m]:+.6f}" for m in _METRIC_COLS)
                    + "\n"
                )
