"""Exception types shared across the package."""


class LabelForgeError(Exception):
    """Base class for all package errors."""


class TaxonomyError(LabelForgeError):
    """Invalid taxonomy definition or cross-reference."""


class IngestError(LabelForgeError):
    """Corpus ingestion failed (bad file, duplicate ids, unknown labels)."""


class SplitError(LabelForgeError):
    """Invalid train/test split request."""


class TemplateError(LabelForgeError):
    """Prompt template could not be rendered."""


class ConfigurationError(LabelForgeError):
    """Bad backend/auth/CLI configuration."""


class BackendUnavailableError(LabelForgeError):
    """All retry attempts against a backend failed.

    Carries the per-attempt trace so the operator can see what happened.
    """

    def __init__(self, message: str, attempts: list | None = None):
        super().__init__(message)
        self.attempts = attempts or []


class StrategyError(LabelForgeError):
    """A classification strategy could not produce a usable label."""


class AssignmentError(LabelForgeError):
    """Coder assignment is infeasible or malformed."""


class ReviewError(LabelForgeError):
    """Review submission failed validation."""


class ReviewConflictError(ReviewError):
    """A review already exists for this assignment (supersede required)."""


class NotReadyError(LabelForgeError):
    """Operation requires submitted reviews that are still pending."""


class ExportError(LabelForgeError):
    """Fine-tuning export blocked (conflicts, missing survivors)."""


class MetricsModeError(LabelForgeError):
    """Metric invoked on the wrong taxonomy mode (exclusive vs multi-label)."""


class StoreError(LabelForgeError):
    """Persistence layer failure or refused migration."""


class ReliabilityError(LabelForgeError):
    """Agreement statistic requested on unusable input (e.g. unequal raters)."""
