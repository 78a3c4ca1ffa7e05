"""labelforge: LLM-assisted labeling with human verification.

The workflow: normalize a corpus, let several model/prompt configurations
propose labels (the crowd), have humans reject what does not apply, resolve
survivors, export an instruction-tuning dataset, and scale the tuned model
over the full corpus with resumable batch inference. Evaluation and
agreement statistics are built in.
"""

from .corpus import (
    ColumnMapping,
    Corpus,
    Document,
    Label,
    Subtopic,
    Taxonomy,
    ingest_csv,
    ingest_jsonl,
    load_fixture_taxonomy,
    load_taxonomy,
    split_train_test,
    write_jsonl,
)
from .errors import (
    AssignmentError,
    BackendUnavailableError,
    ConfigurationError,
    ExportError,
    IngestError,
    LabelForgeError,
    MetricsModeError,
    NotReadyError,
    ReliabilityError,
    ReviewConflictError,
    ReviewError,
    SplitError,
    StoreError,
    StrategyError,
    TaxonomyError,
    TemplateError,
)
from .gateway import (
    AuthRef,
    BackendConfig,
    CompletionJournal,
    CompletionRecord,
    ParsedLabels,
    Pricing,
    PromptTemplate,
    RetryPolicy,
    TransportFailure,
    WireResponse,
    complete,
    parse_labels,
    render,
)
from .metrics import (
    ConfusionMatrix,
    CrossTab,
    LabelVector,
    MetricsReport,
    PredictionSet,
    accuracy,
    at_least_one_correct,
    balanced_accuracy,
    compute_metrics,
    confusion_matrix,
    exact_count_crosstab,
    f1,
    hamming_loss,
    jaccard,
    macro_balanced_accuracy,
    macro_f1,
    precision,
    recall,
    sensitivity,
    specificity,
    weighted_f1,
)
from .pipeline import (
    ScaleJob,
    ScaleSummary,
    evaluate_run,
    export_finetune,
    load_predictions,
    run_scale,
)
from .strategies import (
    BackendPool,
    CandidateLabel,
    CrowdResult,
    StrategyConfig,
    StrategyResult,
    classify,
    classify_direct,
    classify_iterative,
    classify_zero_shot,
    run_crowd,
)
from .verification import (
    Assignment,
    Coder,
    KappaResult,
    ResolvedDocument,
    ReviewLog,
    VerificationRecord,
    assign,
    cohen_kappa,
    cohen_kappa_from_table,
    fleiss_kappa,
)

__version__ = "0.1.0"
