"""Record per-visual-layer next-token traces from a vision-language model.

This package is intentionally independent of the decoding engine: the only
contract between them is the binary trace format (see the engine's
docs/trace-format.md). The writer here is a from-scratch implementation of
that layout, cross-checked bit-exactly in the tests.
"""
from .config import ExtractorConfig, LAYER_PRESETS, load_config
from .errors import ConfigError, ExtractionError
from .extract import extract
from .writer import write_trace_file

__all__ = [
    "ExtractorConfig",
    "LAYER_PRESETS",
    "load_config",
    "ConfigError",
    "ExtractionError",
    "extract",
    "write_trace_file",
]

__version__ = "0.1.0"
