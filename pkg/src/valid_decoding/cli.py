"""Command-line pipeline: synth, decode, edr, curves, score, compare,
inspect-trace.

Exit codes: 0 success, 1 usage error (flag validation, before any file is
touched), 2 data error. Every run that writes outputs also writes a
config-snapshot JSON next to them so results are reproducible from the
snapshot plus the inputs.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    build_correctness_table,
    build_curve_records,
    compute_edr,
    layer_curves,
    normalize_answer,
    write_curve_csv,
    write_curve_svg,
    write_edr_csv,
    write_edr_svg,
)
from .contrast import SPACE_LOGIT, SPACE_PROBABILITY, ContrastConfig
from .decode import (
    DEFAULT_TOKEN_TEXT,
    K_ALL,
    MODES,
    SAMPLER_GREEDY,
    SAMPLER_TEMPERATURE,
    SynthSpec,
    ValidConfig,
    decode_question,
    synth_corpus,
)
from .errors import ValidError
from .evaluation import (
    POLICY_COERCE_NO,
    POLICY_DROP,
    POLICY_WRONG,
    EvalRecord,
    MetricsRow,
    MetricsTable,
    compare,
    score,
    write_compare_csv,
    write_metrics_csv,
    write_metrics_markdown,
)
from .fusion import BUCKET_PRESETS, CandidateBucket, load_bucket_config
from .traceio import read_questions, read_trace_file, write_trace_file

SNAPSHOT_SCHEMA_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; this tool reserves 2 for data errors
    def error(self, message):
        raise UsageError(message)


def _write_snapshot(out_dir: Path, subcommand: str, payload: dict) -> None:
    snapshot = {
        "schema_version": SNAPSHOT_SCHEMA_VERSION,
        "tool_version": __version__,
        "subcommand": subcommand,
        **payload,
    }
    with open(out_dir / "config_snapshot.json", "w", encoding="utf-8") as fh:
        json.dump(snapshot, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_layer_list(text: str):
    try:
        return tuple(int(tok) for tok in text.split(","))
    except ValueError:
        raise UsageError(f"--layers expects a comma-separated integer list, got {text!r}")


def _resolve_candidate_layers(args):
    """Candidate layer ids from --bucket (preset name or explicit list)."""
    if args.bucket in BUCKET_PRESETS:
        return BUCKET_PRESETS[args.bucket].layers
    if args.bucket_config:
        buckets = load_bucket_config(args.bucket_config)
        if args.bucket in buckets:
            return buckets[args.bucket].layers
    if "," in args.bucket or args.bucket.isdigit():
        return _parse_layer_list(args.bucket)
    raise UsageError(
        f"--bucket {args.bucket!r} is neither a known preset "
        f"({', '.join(sorted(BUCKET_PRESETS))}) nor a layer list"
    )


def _trace_paths(inputs):
    paths = []
    for inp in inputs:
        p = Path(inp)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.vlt")))
        else:
            paths.append(p)
    if not paths:
        raise ValidError(f"no trace files found under {list(inputs)}")
    return paths


def _load_token_map(path):
    if path is None:
        return dict(DEFAULT_TOKEN_TEXT)
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return {int(k): str(v) for k, v in raw.items()}


def _gold_tokens(questions, token_map):
    """gold token id per question: the token whose surface normalizes to gold."""
    label_to_token = {}
    for tok, text in sorted(token_map.items()):
        label = normalize_answer(text)
        if label is not None and label not in label_to_token:
            label_to_token[label] = tok
    gold = {}
    for q in questions:
        if q.gold_label in label_to_token:
            gold[q.question_id] = label_to_token[q.gold_label]
    return gold


# --- subcommands ------------------------------------------------------------

def _cmd_synth(args):
    base = SynthSpec(
        vocab_size=args.vocab_size,
        layers=_parse_layer_list(args.layers),
        standard_layer=args.standard_layer,
        distortion=args.distortion,
        n_clean_layers=args.clean_layers,
        jitter=args.jitter,
    )
    out = Path(args.output)
    traces_dir = out / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)
    metas = []
    for _, header, steps, meta in synth_corpus(args.count, args.seed, base):
        write_trace_file(header, steps, traces_dir / f"{meta.question_id}.vlt")
        metas.append(meta)
    with open(out / "questions.jsonl", "w", encoding="utf-8") as fh:
        for m in metas:
            fh.write(
                json.dumps(
                    {
                        "question_id": m.question_id,
                        "prompt_text": m.prompt_text,
                        "gold_label": m.gold_label,
                        "dataset_tag": m.dataset_tag,
                        "sampling_split": m.sampling_split,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    with open(out / "token_map.json", "w", encoding="utf-8") as fh:
        json.dump({str(k): v for k, v in DEFAULT_TOKEN_TEXT.items()}, fh, indent=2)
        fh.write("\n")
    _write_snapshot(
        out,
        "synth",
        {
            "count": args.count,
            "seed": args.seed,
            "distortion": args.distortion,
            "vocab_size": args.vocab_size,
            "layers": list(base.layers),
            "standard_layer": args.standard_layer,
            "clean_layers": args.clean_layers,
            "jitter": args.jitter,
        },
    )
    print(f"wrote {len(metas)} traces to {traces_dir}")
    return 0


def _decode_one(path_str: str, cfg_fields: dict, candidate_layers):
    """Worker: decode one trace file (picklable for process pools)."""
    header, steps = read_trace_file(path_str)
    bucket = None
    if candidate_layers is not None:
        bucket = CandidateBucket(
            layers=tuple(candidate_layers), standard_layer=header.standard_layer
        )
    cfg = ValidConfig(
        contrast=ContrastConfig(
            alpha=cfg_fields["alpha"],
            beta=cfg_fields["beta"],
            space=cfg_fields["space"],
            truncation=cfg_fields["truncation"],
        ),
        bucket=bucket,
        k=cfg_fields["k"],
        mode=cfg_fields["mode"],
        sampler=cfg_fields["sampler"],
        temperature=cfg_fields["temperature"],
        alpha_vcd=cfg_fields["alpha_vcd"],
        seed=cfg_fields["seed"],
    )
    return decode_question(header, steps, cfg).to_json_obj()


def _cmd_decode(args):
    # validate every flag before touching files
    cfg_fields = {
        "alpha": args.alpha,
        "beta": args.beta,
        "space": args.space,
        "truncation": args.truncation == "on",
        "k": K_ALL if args.k in (None, "all") else int(args.k),
        "mode": args.mode,
        "sampler": args.sampler,
        "temperature": args.temperature,
        "alpha_vcd": args.alpha_vcd,
        "seed": args.seed,
    }
    try:
        ContrastConfig(
            alpha=cfg_fields["alpha"],
            beta=cfg_fields["beta"],
            space=cfg_fields["space"],
            truncation=cfg_fields["truncation"],
        )
        if cfg_fields["k"] < 0:
            raise ValidError("--k must be positive or 'all'")
    except ValidError as exc:
        raise UsageError(str(exc))

    candidate_layers = None
    if args.mode != "vanilla" and args.mode != "vcd":
        if not args.bucket:
            raise UsageError(f"--bucket is required for mode {args.mode}")
        candidate_layers = _resolve_candidate_layers(args)

    paths = _trace_paths(args.traces)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(
                pool.map(
                    _decode_one,
                    [str(p) for p in paths],
                    [cfg_fields] * len(paths),
                    [candidate_layers] * len(paths),
                )
            )
    else:
        outcomes = [_decode_one(str(p), cfg_fields, candidate_layers) for p in paths]

    outcomes.sort(key=lambda o: o["question_id"])  # deterministic merge
    with open(out / "outcomes.jsonl", "w", encoding="utf-8") as fh:
        for o in outcomes:
            fh.write(json.dumps(o, sort_keys=True) + "\n")
    _write_snapshot(
        out,
        "decode",
        {
            **cfg_fields,
            "bucket": list(candidate_layers) if candidate_layers else None,
            "bucket_arg": args.bucket,
            "traces": [str(p) for p in paths],
            "jobs": args.jobs,
        },
    )
    print(f"decoded {len(outcomes)} questions in mode {args.mode} -> {out / 'outcomes.jsonl'}")
    return 0


def _load_corpus(args):
    paths = _trace_paths(args.traces)
    traces = [read_trace_file(p) for p in paths]
    questions = read_questions(args.questions)
    token_map = _load_token_map(args.token_map)
    return traces, questions, _gold_tokens(questions, token_map)


def _cmd_edr(args):
    buckets = {}
    for spec in args.edr_bucket:
        if "=" not in spec:
            raise UsageError(f"--edr-bucket expects name=layers, got {spec!r}")
        name, layers = spec.split("=", 1)
        buckets[name.strip()] = _parse_layer_list(layers)
    traces, _, gold = _load_corpus(args)
    standard_layers = {h.standard_layer for h, _ in traces}
    if len(standard_layers) != 1:
        raise ValidError(f"traces disagree on the standard layer: {standard_layers}")
    table = build_correctness_table(traces, gold)
    report = compute_edr(table, buckets, standard_layers.pop())
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_edr_csv(report, out / "edr.csv")
    write_edr_svg(report, out / "edr.svg")
    _write_snapshot(
        out,
        "edr",
        {
            "buckets": {k: list(v) for k, v in buckets.items()},
            "questions": args.questions,
            "token_map": args.token_map,
        },
    )
    for bucket_id, row in report.per_bucket.items():
        print(
            f"{bucket_id}: EDR {row['edr'] * 100:.2f}% "
            f"({row['numerator']}/{row['denominator']})"
        )
    return 0


def _cmd_curves(args):
    traces, _, gold = _load_corpus(args)
    records = build_curve_records(traces, gold)
    curve = layer_curves(records)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_curve_csv(curve, out / "curves.csv")
    write_curve_svg(curve, out / "curves.svg")
    _write_snapshot(
        out, "curves", {"questions": args.questions, "token_map": args.token_map}
    )
    print(f"wrote per-layer curves for {len(records)} questions -> {out / 'curves.csv'}")
    return 0


def _cmd_score(args):
    questions = {q.question_id: q for q in read_questions(args.questions)}
    token_map = _load_token_map(args.token_map)
    records = []
    with open(args.outcomes, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            o = json.loads(line)
            q = questions.get(o["question_id"])
            if q is None or q.gold_label not in ("yes", "no"):
                continue
            first = o["emitted_tokens"][0] if o["emitted_tokens"] else None
            label = normalize_answer(token_map.get(first, "")) if first is not None else None
            records.append(
                EvalRecord(
                    question_id=o["question_id"],
                    gold=q.gold_label,
                    predicted=label if label is not None else "unparseable",
                    mode=o["mode"],
                    split=q.sampling_split or "",
                )
            )
    table = score(records, policy=args.policy)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(table, out / "metrics.csv")
    write_metrics_markdown(table, out / "metrics.md")
    _write_snapshot(
        out,
        "score",
        {
            "outcomes": args.outcomes,
            "questions": args.questions,
            "token_map": args.token_map,
            "policy": args.policy,
        },
    )
    for (mode, split), row in table.per_split.items():
        print(
            f"{mode}/{split or '-'}: acc {row.accuracy * 100:.2f} "
            f"f1 {row.f1 * 100:.2f} yes {row.yes_ratio * 100:.2f} (n={row.n})"
        )
    return 0


def _read_metrics_csv(path) -> MetricsTable:
    per_split = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) < 9:
                continue
            mode, split = parts[0], parts[1]
            per_split[(mode, split)] = MetricsRow(
                accuracy=float(parts[2]),
                precision=float(parts[3]),
                recall=float(parts[4]),
                f1=float(parts[5]),
                yes_ratio=float(parts[6]),
                n=int(parts[7]),
                n_unparseable=int(parts[8]),
            )
    return MetricsTable(per_split=per_split, policy="unknown")


def _cmd_compare(args):
    tables = {}
    for spec in args.metrics:
        if "=" not in spec:
            raise UsageError(f"--metrics expects mode=path, got {spec!r}")
        mode, path = spec.split("=", 1)
        tables[mode.strip()] = _read_metrics_csv(path)
    deltas = compare(tables, args.baseline)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_compare_csv(deltas, args.baseline, out / "compare.csv")
    _write_snapshot(
        out, "compare", {"metrics": list(args.metrics), "baseline": args.baseline}
    )
    for mode in sorted(deltas):
        for split in sorted(deltas[mode]):
            d = deltas[mode][split]
            print(
                f"{mode} vs {args.baseline} [{split or '-'}]: "
                f"acc {d['accuracy'] * 100:+.2f} f1 {d['f1'] * 100:+.2f}"
            )
    return 0


def _cmd_inspect(args):
    header, steps = read_trace_file(args.trace)
    print(f"question_id:   {header.question_id}")
    print(f"version:       {header.version}")
    print(f"vocab_size:    {header.vocab_size}")
    print(f"layers:        {list(header.layer_ids)}")
    print(f"standard:      {header.standard_layer}")
    print(f"steps:         {header.step_count}")
    print(f"noise channel: {'yes' if header.has_noise_channel else 'no'}")
    print(f"storage:       {'logits' if header.storage == 0 else 'probs'}")
    print(f"chosen tokens: {[s.chosen_token for s in steps]}")
    return 0


# --- argument wiring --------------------------------------------------------

def _add_corpus_args(p):
    p.add_argument("traces", nargs="+", help="trace files or directories of *.vlt")
    p.add_argument("--questions", required=True, help="question JSONL sidecar")
    p.add_argument("--token-map", default=None, help="JSON token id -> surface text")
    p.add_argument("-o", "--output", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="valid-decode", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="generate a synthetic distortion corpus")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--distortion", type=float, default=0.6)
    p.add_argument("--vocab-size", type=int, default=32)
    p.add_argument("--layers", default="13,15,17,19,21,23,25")
    p.add_argument("--standard-layer", type=int, default=24)
    p.add_argument("--clean-layers", type=int, default=2)
    p.add_argument("--jitter", type=float, default=0.05)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("decode", help="replay traces under a decode mode")
    p.add_argument("traces", nargs="+")
    p.add_argument("--mode", choices=MODES, default="valid")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--k", default="all", help="top-k layers to fuse, or 'all'")
    p.add_argument("--bucket", default=None, help="preset name or layer list")
    p.add_argument("--bucket-config", default=None, help="plain-text bucket presets")
    p.add_argument("--space", choices=[SPACE_PROBABILITY, SPACE_LOGIT],
                   default=SPACE_PROBABILITY)
    p.add_argument("--truncation", choices=["on", "off"], default="on")
    p.add_argument("--sampler", choices=[SAMPLER_GREEDY, SAMPLER_TEMPERATURE],
                   default=SAMPLER_GREEDY)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--alpha-vcd", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("edr", help="encoding distortion rate per bucket")
    _add_corpus_args(p)
    p.add_argument(
        "--edr-bucket",
        action="append",
        required=True,
        help="bucket as name=comma-layers; repeatable",
    )
    p.set_defaults(func=_cmd_edr)

    p = sub.add_parser("curves", help="per-layer entropy/accuracy curves")
    _add_corpus_args(p)
    p.set_defaults(func=_cmd_curves)

    p = sub.add_parser("score", help="binary metrics over decode outcomes")
    p.add_argument("--outcomes", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--token-map", default=None)
    p.add_argument(
        "--policy",
        choices=[POLICY_WRONG, POLICY_DROP, POLICY_COERCE_NO],
        default=POLICY_WRONG,
    )
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("compare", help="metric deltas against a baseline mode")
    p.add_argument("--metrics", action="append", required=True, help="mode=metrics.csv")
    p.add_argument("--baseline", default="vanilla")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("inspect-trace", help="dump a trace header")
    p.add_argument("trace")
    p.set_defaults(func=_cmd_inspect)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ValidError as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


def main():  # console_scripts entry point
    sys.exit(run())


if __name__ == "__main__":
    main()
