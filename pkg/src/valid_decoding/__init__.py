"""Uncertainty-guided visual-layer fusion contrastive decoding over
recorded per-layer next-token traces, with hallucination metrics."""

__version__ = "0.1.0"

from .contrast import (
    ContrastConfig,
    ContrastResult,
    apply_mask,
    compose_decode,
    contrast,
    reliability_mask,
)
from .core import entropy, normalize, softmax
from .decode import (
    DecodeOutcome,
    SynthSpec,
    ValidConfig,
    decode_question,
    synth_corpus,
    synth_trace,
)
from .fusion import (
    BUCKET_PRESETS,
    CandidateBucket,
    fusion_weights,
    reference_distribution,
    select_top_k,
)
from .traceio import (
    QuestionMeta,
    StepRecord,
    TraceHeader,
    read_questions,
    read_trace,
    read_trace_file,
    write_trace,
    write_trace_file,
)
