"""Per-step decode loop over a recorded trace, plus the synthetic generator.

The loop replays a trace teacher-forced: per-layer distributions exist only
along the recorded token path, so context always follows the recorded
chosen_token regardless of what a mode emits. Emitted tokens are what each
mode *would have* produced at every step.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .contrast import (
    ORDER_VALID_THEN_VCD,
    ORDER_VCD_THEN_VALID,
    ContrastConfig,
    apply_mask,
    compose_decode,
    contrast,
    reliability_mask,
)
from .core import entropies_for_rows
from .errors import (
    InvalidSpec,
    MissingLayer,
    MissingNoiseChannel,
    ValidError,
    ZeroMass,
)
from .fusion import CandidateBucket, fusion_weights, reference_distribution, select_top_k
from .traceio import (
    STORAGE_PROBS,
    StepRecord,
    TraceHeader,
    materialize_noise,
    materialize_step,
)

MODE_VANILLA = "vanilla"
MODE_VALID = "valid"
MODE_VCD = "vcd"
MODE_VCD_THEN_VALID = "vcd_then_valid"
MODE_VALID_THEN_VCD = "valid_then_vcd"
MODES = (MODE_VANILLA, MODE_VALID, MODE_VCD, MODE_VCD_THEN_VALID, MODE_VALID_THEN_VCD)

SAMPLER_GREEDY = "greedy"
SAMPLER_TEMPERATURE = "temperature"

K_ALL = 0  # sentinel: fuse every bucket layer


@dataclass(frozen=True)
class ValidConfig:
    contrast: ContrastConfig = field(default_factory=ContrastConfig)
    bucket: Optional[CandidateBucket] = None
    k: int = K_ALL
    mode: str = MODE_VALID
    sampler: str = SAMPLER_GREEDY
    temperature: float = 1.0
    alpha_vcd: float = 1.0  # noise-contrast coefficient for vcd/composed modes
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidError(f"unknown mode {self.mode!r}")
        if self.k < 0:
            raise ValidError("k must be positive (or K_ALL)")
        if self.sampler not in (SAMPLER_GREEDY, SAMPLER_TEMPERATURE):
            raise ValidError(f"unknown sampler {self.sampler!r}")
        if self.sampler == SAMPLER_TEMPERATURE and self.temperature <= 0:
            raise ValidError("temperature must be > 0")

    def snapshot(self) -> dict:
        """JSON-serializable snapshot of every decode-relevant knob."""
        return {
            "mode": self.mode,
            "alpha": self.contrast.alpha,
            "beta": self.contrast.beta,
            "space": self.contrast.space,
            "truncation": self.contrast.truncation,
            "k": self.k,
            "bucket": list(self.bucket.layers) if self.bucket else None,
            "bucket_name": self.bucket.name if self.bucket else None,
            "sampler": self.sampler,
            "temperature": self.temperature,
            "alpha_vcd": self.alpha_vcd,
            "seed": self.seed,
        }


@dataclass
class StepDiagnostics:
    selected_layers: List[int]
    entropies: List[float]
    weights: List[float]
    kept_support_size: int
    fallback: bool


@dataclass
class DecodeOutcome:
    question_id: str
    emitted_tokens: List[int]
    diagnostics: List[StepDiagnostics]
    mode: str
    config: dict

    def to_json_obj(self) -> dict:
        return {
            "question_id": self.question_id,
            "mode": self.mode,
            "emitted_tokens": self.emitted_tokens,
            "diagnostics": [
                {
                    "selected_layers": d.selected_layers,
                    "entropies": d.entropies,
                    "weights": d.weights,
                    "kept_support_size": d.kept_support_size,
                    "fallback": d.fallback,
                }
                for d in self.diagnostics
            ],
            "config": self.config,
        }


def _pick_token(p: np.ndarray, cfg: ValidConfig, rng: np.random.Generator) -> int:
    if cfg.sampler == SAMPLER_GREEDY:
        return int(np.argmax(p))  # argmax ties break toward the lowest id
    logp = np.full_like(p, -np.inf)
    pos = p > 0
    logp[pos] = np.log(p[pos]) / cfg.temperature
    shifted = np.exp(logp - logp.max())
    return int(rng.choice(p.size, p=shifted / shifted.sum()))


def decode_question(
    header: TraceHeader, steps: Sequence[StepRecord], cfg: ValidConfig
) -> DecodeOutcome:
    """Run one decode mode over a recorded trace."""
    if cfg.mode in (MODE_VALID, MODE_VCD_THEN_VALID, MODE_VALID_THEN_VCD):
        if cfg.bucket is None:
            raise ValidError(f"mode {cfg.mode} requires a candidate bucket")
        missing = [l for l in cfg.bucket.layers if l not in header.layer_ids]
        if missing:
            raise MissingLayer(f"bucket layers {missing} not recorded in trace")
        if cfg.bucket.standard_layer != header.standard_layer:
            raise ValidError(
                f"bucket standard layer {cfg.bucket.standard_layer} differs from "
                f"trace standard layer {header.standard_layer}"
            )
    if cfg.mode in (MODE_VCD, MODE_VCD_THEN_VALID, MODE_VALID_THEN_VCD):
        if not header.has_noise_channel:
            raise MissingNoiseChannel(
                f"mode {cfg.mode} needs a noise channel, trace has none"
            )
    if header.standard_layer not in header.layer_ids:
        raise MissingLayer("standard layer missing from trace")

    rng = np.random.default_rng(cfg.seed)
    emitted: List[int] = []
    diags: List[StepDiagnostics] = []

    for step in steps:
        per_layer = materialize_step(header, step)
        p_ori = per_layer[header.standard_layer]
        diag = StepDiagnostics([], [], [], p_ori.size, False)

        if cfg.mode == MODE_VANILLA:
            p_final = p_ori
        elif cfg.mode == MODE_VCD:
            p_noi = materialize_noise(header, step)
            res = contrast(p_ori, p_noi, replace(cfg.contrast, alpha=cfg.alpha_vcd))
            p_final = res.p_valid
            diag.kept_support_size = res.kept_support.size
            diag.fallback = res.fallback
        else:
            p_ref, diag_sel = _fuse_reference(per_layer, step, header, cfg)
            diag.selected_layers, diag.entropies, diag.weights = diag_sel
            if cfg.mode == MODE_VALID:
                res = contrast(p_ori, p_ref, cfg.contrast)
                p_final = res.p_valid
                diag.kept_support_size = res.kept_support.size
                diag.fallback = res.fallback
            else:
                p_noi = materialize_noise(header, step)
                order = (
                    ORDER_VCD_THEN_VALID
                    if cfg.mode == MODE_VCD_THEN_VALID
                    else ORDER_VALID_THEN_VCD
                )
                raw = compose_decode(
                    p_ori, p_ref, p_noi, order, cfg.alpha_vcd, cfg.contrast.alpha
                )
                mask = (
                    reliability_mask(p_ori, cfg.contrast.beta)
                    if cfg.contrast.truncation
                    else np.ones(p_ori.size, bool)
                )
                try:
                    p_final = apply_mask(raw, mask)
                except ZeroMass:
                    p_final = apply_mask(p_ori, mask)
                    diag.fallback = True
                diag.kept_support_size = int(mask.sum())

        emitted.append(_pick_token(p_final, cfg, rng))
        diags.append(diag)

    return DecodeOutcome(
        question_id=header.question_id,
        emitted_tokens=emitted,
        diagnostics=diags,
        mode=cfg.mode,
        config=cfg.snapshot(),
    )


def _fuse_reference(per_layer, step, header, cfg):
    """Entropy-select bucket layers and fuse them; returns (p_ref, diag triple)."""
    bucket = cfg.bucket
    idx = {layer: i for i, layer in enumerate(header.layer_ids)}
    rows = np.asarray(
        [per_layer[l] for l in bucket.layers], dtype=np.float64
    )
    hs = entropies_for_rows(rows)
    ent_map = {l: float(h) for l, h in zip(bucket.layers, hs)}
    k = len(bucket.layers) if cfg.k == K_ALL else cfg.k
    selected = select_top_k(per_layer, bucket, k, entropies=ent_map)
    weights = fusion_weights(selected)
    p_ref = reference_distribution(per_layer, weights)
    layers = [l for l, _ in selected]
    return p_ref, (layers, [ent_map[l] for l in layers], [weights[l] for l in layers])


# --- synthetic trace generation -------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one synthetic distortion trace.

    Clean early layers concentrate mass on correct_token with moderate
    entropy. Distorting layers are high-entropy and skewed toward
    wrong_token. The standard layer blends the clean signal toward
    wrong_token by distortion strength d. With these masses the standard
    argmax flips to wrong_token for d > ~0.50 while the contrastive
    correction (alpha=1, beta=0.1, full-bucket fusion) still recovers
    correct_token up to d ~ 0.64; the band is verified by brute force in
    the tests, not assumed.
    """

    vocab_size: int = 32
    layers: Tuple[int, ...] = (13, 15, 17, 19, 21, 23, 25)
    standard_layer: int = 24
    correct_token: int = 0
    wrong_token: int = 1
    distortion: float = 0.6
    n_clean_layers: int = 2
    question_id: str = "synth-0"
    jitter: float = 0.05  # relative mass jitter, keeps questions distinct

    def __post_init__(self):
        if not (0 <= self.distortion <= 1):
            raise InvalidSpec("distortion must be in [0, 1]")
        for tok in (self.correct_token, self.wrong_token):
            if not (0 <= tok < self.vocab_size):
                raise InvalidSpec(f"token {tok} outside vocabulary")
        if self.correct_token == self.wrong_token:
            raise InvalidSpec("correct and wrong token must differ")
        if self.standard_layer in self.layers:
            raise InvalidSpec("standard layer must not be a candidate layer")
        if not (0 <= self.n_clean_layers <= len(self.layers)):
            raise InvalidSpec("n_clean_layers out of range")
        if self.vocab_size < 3:
            raise InvalidSpec("vocab_size must be >= 3")


def _mass_vector(v, main_token, main_mass, side_token, side_mass, rng, jitter):
    """Distribution with fixed mass on two tokens, the rest spread uniformly."""
    p = np.full(v, (1.0 - main_mass - side_mass) / (v - 2), dtype=np.float64)
    p[main_token] = main_mass
    p[side_token] = side_mass
    if jitter > 0:
        p *= 1.0 + rng.uniform(-jitter, jitter, size=v)
    return p / p.sum()


def synth_trace(spec: SynthSpec, seed: int) -> Tuple[TraceHeader, List[StepRecord]]:
    """Deterministic one-step trace realizing the distortion phenomenon."""
    rng = np.random.default_rng(seed)
    v = spec.vocab_size
    c, w = spec.correct_token, spec.wrong_token

    # clean signal: confident in the correct token, moderate entropy
    p_clean = _mass_vector(v, c, 0.70, w, 0.08, rng, spec.jitter)
    # fully distorted signal: confident in the wrong token
    p_wrong = _mass_vector(v, w, 0.70, c, 0.08, rng, spec.jitter)

    rows = []
    for i, layer in enumerate(spec.layers):
        if i < spec.n_clean_layers:
            # low-entropy clean layer
            rows.append(_mass_vector(v, c, 0.80, w, 0.05, rng, spec.jitter))
        else:
            # high-entropy distorting layer: wrong token leads, long flat tail
            rows.append(_mass_vector(v, w, 0.50, c, 0.02, rng, spec.jitter))

    p_std = (1.0 - spec.distortion) * p_clean + spec.distortion * p_wrong

    layer_ids = tuple(sorted((*spec.layers, spec.standard_layer)))
    dist_by_layer = dict(zip(spec.layers, rows))
    dist_by_layer[spec.standard_layer] = p_std
    matrix = np.asarray(
        [dist_by_layer[l] for l in layer_ids], dtype=np.float32
    )
    # float32 rounding breaks exact unit sums; renormalize in float32
    matrix /= matrix.sum(axis=1, keepdims=True)

    header = TraceHeader(
        vocab_size=v,
        layer_ids=layer_ids,
        standard_layer=spec.standard_layer,
        step_count=1,
        has_noise_channel=False,
        storage=STORAGE_PROBS,
        question_id=spec.question_id,
    )
    step = StepRecord(
        per_layer=matrix,
        chosen_token=int(np.argmax(np.asarray(p_std))),
    )
    return header, [step]


# Token-surface convention used by the synthetic corpus: downstream scoring
# maps emitted token ids to answer strings through this table.
DEFAULT_TOKEN_TEXT: Dict[int, str] = {0: "Yes", 1: "No"}


def synth_corpus(count: int, seed: int, base: SynthSpec):
    """Deterministic corpus of one-step yes/no distortion traces.

    Gold labels alternate yes/no. Per-question distortion is drawn from
    [base.distortion - 0.2, base.distortion] (clipped to [0, 1]) so a
    slice of the corpus stays undistorted enough for vanilla decoding to
    get right. Yields (spec, header, steps, meta) tuples.
    """
    from .traceio import QuestionMeta

    if count < 1:
        raise InvalidSpec("count must be >= 1")
    ss = np.random.SeedSequence(seed)
    trace_seeds = ss.generate_state(count, dtype=np.uint32)
    d_rng = np.random.default_rng(ss.spawn(1)[0])

    for i in range(count):
        gold = "yes" if i % 2 == 0 else "no"
        correct = 0 if gold == "yes" else 1
        wrong = 1 - correct
        d = float(np.clip(base.distortion - 0.2 * d_rng.random(), 0.0, 1.0))
        spec = replace(
            base,
            correct_token=correct,
            wrong_token=wrong,
            distortion=d,
            question_id=f"synth-{i:04d}",
        )
        header, steps = synth_trace(spec, int(trace_seeds[i]))
        meta = QuestionMeta(
            question_id=spec.question_id,
            prompt_text=f"Is the answer to synthetic question {i} yes?",
            gold_label=gold,
            dataset_tag="synthetic-distortion",
            sampling_split="random",
        )
        yield spec, header, steps, meta
