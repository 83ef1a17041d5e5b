"""Exception hierarchy shared across the package.

Every error raised by library code derives from ValidError so callers can
catch one type at the CLI boundary and map it to an exit code.
"""


class ValidError(Exception):
    """Base class for all library errors."""


# --- distribution primitives ---

class NonFinite(ValidError):
    """Input vector contains NaN or infinity."""


class EmptyVector(ValidError):
    """Zero-dimensional vector where at least one entry is required."""


class InvalidDistribution(ValidError):
    """Vector violates the probability-distribution invariants."""


class ZeroMass(ValidError):
    """All mass was annihilated by clamping/truncation; caller must fall back."""


# --- layer fusion ---

class MissingLayer(ValidError):
    """A required layer has no recorded distribution."""


class EmptySelection(ValidError):
    """Fusion weights requested over an empty layer selection."""


class DimensionMismatch(ValidError):
    """Vectors of differing vocabulary size were combined."""


# --- trace format ---

class TraceError(ValidError):
    """Base class for trace-file format errors."""


class BadMagic(TraceError):
    """Stream does not start with the trace magic bytes."""


class UnsupportedVersion(TraceError):
    """Trace format version not understood by this reader."""


class TruncatedFile(TraceError):
    """Stream ended before the declared payload was complete."""


class NonFinitePayload(TraceError):
    """Stored rows contain NaN or infinity."""


class ShapeMismatch(TraceError):
    """Payload shapes disagree with the header."""


class ParseError(ValidError):
    """Malformed question sidecar line."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


# --- decode loop / config ---

class InvalidSpec(ValidError):
    """Synthetic trace specification out of range."""


class MissingNoiseChannel(ValidError):
    """VCD-style mode requested on a trace without a noise reference channel."""


class EmptyInput(ValidError):
    """An aggregation was asked to score zero records."""


class MissingBaseline(ValidError):
    """Comparison requested against a mode that has no metrics table."""


class EmptyDenominator(ValidError):
    """EDR undefined: the standard layer is never wrong on this corpus."""
