"""Exception taxonomy shared across pipeline stages.

The CLI maps these onto exit codes: ConfigError -> 2, gateway errors -> 3,
everything else derived from SynthcutError -> 4.
"""


class SynthcutError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(SynthcutError):
    """Invalid or inconsistent pipeline configuration."""


class UnknownTemplate(SynthcutError):
    """Template or context index outside the loaded template set."""


class InvalidLabel(SynthcutError):
    """Class label violates naming/id rules."""


class GatewayUnavailable(SynthcutError):
    """Model endpoint unreachable after exhausting retries."""


class BadResponse(SynthcutError):
    """Model endpoint answered with a schema-violating payload (never retried)."""


class EmptyBatch(SynthcutError):
    """Selection invoked on an empty candidate batch."""


class ExtractionError(SynthcutError):
    """Base for foreground mask extraction failures."""


class NoForeground(ExtractionError):
    """Extracted region missing or below the minimum area fraction."""


class BackgroundNotUniform(ExtractionError):
    """Border ring too noisy to estimate a background color."""


class OversizedForeground(ExtractionError):
    """Extracted region exceeds the maximum area fraction."""


class EmptyMask(SynthcutError):
    """Operation requires a mask with at least one set pixel."""


class DegenerateTransform(SynthcutError):
    """Augmentation collapsed a mask below the usable size."""


class OutOfBounds(SynthcutError):
    """Paste target does not fit inside the canvas."""


class NoBackground(SynthcutError):
    """Composition invoked without a usable background image."""


class EmptyPool(SynthcutError):
    """Dataset build invoked with an empty asset pool."""


class IoFailure(SynthcutError):
    """Filesystem write/read failed while emitting a dataset."""


class SchemaInvariantViolation(SynthcutError):
    """Internal consistency check on emitted annotations failed."""


class CategoryMismatch(SynthcutError):
    """Datasets to be mixed do not share the same category names."""


class PipelineInvariantViolation(SynthcutError):
    """A stage produced output violating a pipeline-level invariant."""
