"""Exception types shared across the package.

Contract violations raise dedicated classes so callers (and tests) can
distinguish a shape bug from, say, a degenerate input.
"""


class PolyAvsrError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(PolyAvsrError, ValueError):
    """Array extents incompatible with the requested operation."""


class AlignmentError(PolyAvsrError, ValueError):
    """Paired sequences whose lengths do not line up (audio/video/targets)."""


class ContractError(PolyAvsrError, ValueError):
    """An operation precondition was violated (e.g. non-scalar backward seed)."""


class DeterminismError(PolyAvsrError, RuntimeError):
    """A function expected to be deterministic returned differing values."""


class IncompleteGradientError(PolyAvsrError, RuntimeError):
    """An optimizer step found a registered parameter without a gradient."""


class DegenerateBatchError(PolyAvsrError, ValueError):
    """Batch statistics requested over fewer than two elements."""


class DegenerateSignalError(PolyAvsrError, ValueError):
    """A zero-power signal cannot be scaled to a finite SNR."""


class GradientError(PolyAvsrError, RuntimeError):
    """Gradient requested where none exists (e.g. infinite CTC loss)."""


class LabelError(PolyAvsrError, ValueError):
    """A class label outside the configured label set."""


class ConfigurationError(PolyAvsrError, ValueError):
    """Inconsistent or unresolvable configuration values."""


class CapacityError(PolyAvsrError, ValueError):
    """A requested allocation exceeds a configured ceiling (e.g. vocabulary)."""


class ConditioningError(PolyAvsrError, ValueError):
    """Decoder prefix missing its mandatory start/language conditioning tokens."""


class CompatibilityError(PolyAvsrError, ValueError):
    """Checkpoint and corpus/model configuration disagree."""


class UndefinedMetricError(PolyAvsrError, ValueError):
    """A metric evaluated on inputs for which it is undefined (empty reference)."""
