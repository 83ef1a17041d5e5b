class ExtractorError(Exception):
    """Base class for extractor failures."""


class ConfigError(ExtractorError):
    """The YAML config is missing fields or fails validation."""


class ExtractionError(ExtractorError):
    """A forward pass or trace write failed."""


class AdapterUnavailable(ExtractorError):
    """The requested model adapter cannot be constructed in this
    environment (missing weights or optional dependencies)."""
