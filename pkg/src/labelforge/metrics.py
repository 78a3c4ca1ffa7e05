"""Evaluation metrics over prediction/truth pairs.

Two families, selected by the taxonomy's exclusivity: exclusive taxonomies
get a confusion matrix with per-class ratio metrics; multi-label taxonomies
get set metrics (Hamming loss, Jaccard in two variants, at-least-one-correct,
and a label-count cross-tab). All accumulation is integer; division happens
once at the end, so concurrent or reordered accumulation cannot change
results. Zero denominators yield None, which aggregate averages exclude
(and count) rather than silently zero-filling.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np

from .corpus import Taxonomy
from .errors import MetricsModeError

__all__ = [
    "UNPARSED",
    "LabelVector",
    "PredictionSet",
    "ConfusionMatrix",
    "CrossTab",
    "PerClassMetrics",
    "MetricsReport",
    "confusion_matrix",
    "accuracy",
    "precision",
    "recall",
    "sensitivity",
    "specificity",
    "balanced_accuracy",
    "macro_balanced_accuracy",
    "f1",
    "macro_f1",
    "weighted_f1",
    "hamming_loss",
    "per_document_hamming",
    "jaccard",
    "at_least_one_correct",
    "exact_count_crosstab",
    "compute_metrics",
]

# Synthetic confusion-matrix column for predictions that produced no label.
# Kept separate so parse failures count as wrong instead of vanishing.
UNPARSED = "UNPARSED"


@dataclass(frozen=True)
class LabelVector:
    """Length-M binary membership vector over a taxonomy's labels."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise MetricsModeError(f"label vector bits must be 0/1, got {self.bits!r}")

    @classmethod
    def from_labels(cls, labels: Iterable[str], taxonomy: Taxonomy) -> "LabelVector":
        bits = [0] * taxonomy.m
        for label_id in labels:
            bits[taxonomy.index_of(label_id)] = 1
        return cls(bits=tuple(bits))

    @property
    def count(self) -> int:
        return sum(self.bits)

    def to_ids(self, taxonomy: Taxonomy) -> tuple[str, ...]:
        return tuple(
            lab.id for lab, bit in zip(taxonomy.labels, self.bits) if bit
        )


@dataclass(frozen=True)
class PredictionSet:
    """Immutable (doc_id, truth, prediction) rows over one taxonomy."""

    taxonomy: Taxonomy
    rows: tuple[tuple[str, LabelVector, LabelVector], ...]

    def __post_init__(self):
        m = self.taxonomy.m
        for doc_id, truth, pred in self.rows:
            if len(truth.bits) != m or len(pred.bits) != m:
                raise MetricsModeError(
                    f"doc {doc_id!r}: vector length mismatch (taxonomy M={m})"
                )
            if self.taxonomy.exclusive:
                if truth.count != 1:
                    raise MetricsModeError(
                        f"doc {doc_id!r}: exclusive taxonomy needs exactly one "
                        f"true label, got {truth.count}"
                    )
                if pred.count > 1:
                    raise MetricsModeError(
                        f"doc {doc_id!r}: exclusive taxonomy allows at most one "
                        f"predicted label, got {pred.count}"
                    )

    @classmethod
    def from_label_sets(
        cls,
        taxonomy: Taxonomy,
        rows: Iterable[tuple[str, Iterable[str], Iterable[str]]],
    ) -> "PredictionSet":
        built = tuple(
            (
                doc_id,
                LabelVector.from_labels(truth, taxonomy),
                LabelVector.from_labels(pred, taxonomy),
            )
            for doc_id, truth, pred in rows
        )
        return cls(taxonomy=taxonomy, rows=built)

    @property
    def n(self) -> int:
        return len(self.rows)

    @cached_property
    def _arrays(self) -> tuple[np.ndarray, np.ndarray]:
        m = self.taxonomy.m
        truth = np.zeros((self.n, m), dtype=np.int64)
        pred = np.zeros((self.n, m), dtype=np.int64)
        for i, (_, t, p) in enumerate(self.rows):
            truth[i] = t.bits
            pred[i] = p.bits
        return truth, pred


@dataclass(frozen=True)
class ConfusionMatrix:
    """M x (M+1) counts: true class j (row) vs predicted class k (column).

    The extra final column collects rows whose prediction parsed to nothing.
    """

    taxonomy: Taxonomy
    counts: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def square(self) -> np.ndarray:
        return self.counts[:, : self.taxonomy.m]

    @property
    def unparsed_counts(self) -> np.ndarray:
        return self.counts[:, self.taxonomy.m]

    def _index(self, j: int | str) -> int:
        if isinstance(j, str):
            return self.taxonomy.index_of(j)
        return j

    def tp(self, j: int | str) -> int:
        i = self._index(j)
        return int(self.counts[i, i])

    def fp(self, j: int | str) -> int:
        i = self._index(j)
        return int(self.counts[:, i].sum() - self.counts[i, i])

    def fn(self, j: int | str) -> int:
        i = self._index(j)
        return int(self.counts[i, :].sum() - self.counts[i, i])

    def tn(self, j: int | str) -> int:
        i = self._index(j)
        return self.n - self.tp(i) - self.fp(i) - self.fn(i)


@dataclass(frozen=True)
class CrossTab:
    """Label-count cross-tab: rows true-set size, columns predicted-set size.

    size_fraction[r][c] is the fraction of documents whose sizes are (r, c)
    regardless of which labels they carry; diagonal_exact[r] is the fraction
    with size r on both sides AND identical label sets. exact_match_accuracy
    is the sum of diagonal_exact.
    """

    sizes: tuple[int, ...]
    size_fraction: tuple[tuple[float, ...], ...]
    diagonal_exact: tuple[float, ...]
    exact_match_accuracy: float


@dataclass(frozen=True)
class PerClassMetrics:
    precision: float | None
    recall: float | None
    specificity: float | None
    balanced_accuracy: float | None
    f1: float | None
    support: int


@dataclass(frozen=True)
class MetricsReport:
    mode: str  # exclusive | multilabel
    n: int
    m: int
    accuracy: float | None = None
    per_class: dict[str, PerClassMetrics] | None = None
    macro_balanced_accuracy: float | None = None
    macro_f1: float | None = None
    weighted_f1: float | None = None
    excluded: dict[str, int] | None = None
    hamming_loss: float | None = None
    jaccard_standard: float | None = None
    jaccard_paper: float | None = None
    at_least_one_correct: float | None = None
    crosstab: CrossTab | None = None
    confusion: ConfusionMatrix | None = None


def _require_exclusive(pred_set: PredictionSet, op: str) -> None:
    if not pred_set.taxonomy.exclusive:
        raise MetricsModeError(f"{op} requires an exclusive taxonomy")


def _require_multilabel(pred_set: PredictionSet, op: str) -> None:
    if pred_set.taxonomy.exclusive:
        raise MetricsModeError(f"{op} requires a multi-label taxonomy")


def confusion_matrix(pred_set: PredictionSet) -> ConfusionMatrix:
    _require_exclusive(pred_set, "confusion_matrix")
    m = pred_set.taxonomy.m
    counts = np.zeros((m, m + 1), dtype=np.int64)
    for _, truth, pred in pred_set.rows:
        j = truth.bits.index(1)
        k = pred.bits.index(1) if pred.count else m
        counts[j, k] += 1
    return ConfusionMatrix(taxonomy=pred_set.taxonomy, counts=counts)


def accuracy(source: PredictionSet | ConfusionMatrix) -> float | None:
    """Fraction of documents whose single predicted class equals the true one."""
    if isinstance(source, PredictionSet):
        source = confusion_matrix(source)
    n = source.n
    if n == 0:
        return None
    return int(np.trace(source.square)) / n


def precision(c: ConfusionMatrix, j: int | str) -> float | None:
    tp, fp = c.tp(j), c.fp(j)
    return None if tp + fp == 0 else tp / (tp + fp)


def recall(c: ConfusionMatrix, j: int | str) -> float | None:
    tp, fn = c.tp(j), c.fn(j)
    return None if tp + fn == 0 else tp / (tp + fn)


# The clinical literature calls per-class recall sensitivity.
sensitivity = recall


def specificity(c: ConfusionMatrix, j: int | str) -> float | None:
    tn, fp = c.tn(j), c.fp(j)
    return None if tn + fp == 0 else tn / (tn + fp)


def balanced_accuracy(c: ConfusionMatrix, j: int | str) -> float | None:
    r = recall(c, j)
    s = specificity(c, j)
    if r is None or s is None:
        return None
    return (r + s) / 2


def f1(c: ConfusionMatrix, j: int | str) -> float | None:
    # 2TP/(2TP+FP+FN): defined whenever the class appears anywhere, and 0
    # when precision+recall is 0, so no separate zero-division branch.
    tp, fp, fn = c.tp(j), c.fp(j), c.fn(j)
    denom = 2 * tp + fp + fn
    return None if denom == 0 else 2 * tp / denom


def _macro(values: list[float | None]) -> tuple[float | None, int]:
    defined = [v for v in values if v is not None]
    excluded = len(values) - len(defined)
    if not defined:
        return None, excluded
    return sum(defined) / len(defined), excluded


def macro_balanced_accuracy(c: ConfusionMatrix) -> float | None:
    value, _ = _macro([balanced_accuracy(c, j) for j in range(c.taxonomy.m)])
    return value


def macro_f1(c: ConfusionMatrix) -> float | None:
    value, _ = _macro([f1(c, j) for j in range(c.taxonomy.m)])
    return value


def weighted_f1(c: ConfusionMatrix) -> float | None:
    """Support-weighted mean F1 over classes where F1 is defined."""
    total = 0.0
    weight = 0
    for j in range(c.taxonomy.m):
        v = f1(c, j)
        if v is None:
            continue
        support = c.tp(j) + c.fn(j)
        total += support * v
        weight += support
    return None if weight == 0 else total / weight


def hamming_loss(pred_set: PredictionSet) -> float | None:
    """Mean fraction of label bits that disagree, over all docs and labels."""
    if pred_set.n == 0:
        return None
    truth, pred = pred_set._arrays
    mismatches = int((truth != pred).sum())
    return mismatches / (pred_set.n * pred_set.taxonomy.m)


def per_document_hamming(pred_set: PredictionSet) -> list[float]:
    truth, pred = pred_set._arrays
    m = pred_set.taxonomy.m
    return [int(row) / m for row in (truth != pred).sum(axis=1)]


def jaccard(pred_set: PredictionSet, variant: str = "standard") -> float | None:
    """Mean per-document Jaccard similarity.

    standard: |truth ∩ pred| / |truth ∪ pred|, with empty/empty counted as 1.
    paper: |truth ∩ pred| / M. The two differ whenever the union is not the
    full label set; both are kept because published numbers may use either.
    """
    if variant not in ("standard", "paper"):
        raise MetricsModeError(f"unknown jaccard variant {variant!r}")
    _require_multilabel(pred_set, "jaccard")
    if pred_set.n == 0:
        return None
    truth, pred = pred_set._arrays
    inter = (truth & pred).sum(axis=1)
    if variant == "paper":
        return int(inter.sum()) / (pred_set.n * pred_set.taxonomy.m)
    union = (truth | pred).sum(axis=1)
    total = 0.0
    for i, u in zip(inter, union):
        total += 1.0 if u == 0 else int(i) / int(u)
    return total / pred_set.n


def at_least_one_correct(pred_set: PredictionSet) -> float | None:
    """Fraction of docs where prediction and truth share a label.

    A doc with empty truth counts as a hit only when the prediction is also
    empty.
    """
    _require_multilabel(pred_set, "at_least_one_correct")
    if pred_set.n == 0:
        return None
    truth, pred = pred_set._arrays
    inter = (truth & pred).sum(axis=1)
    truth_sizes = truth.sum(axis=1)
    pred_sizes = pred.sum(axis=1)
    hits = int(((inter > 0) | ((truth_sizes == 0) & (pred_sizes == 0))).sum())
    return hits / pred_set.n


def exact_count_crosstab(pred_set: PredictionSet) -> CrossTab:
    _require_multilabel(pred_set, "exact_count_crosstab")
    n = pred_set.n
    if n == 0:
        return CrossTab(sizes=(), size_fraction=(), diagonal_exact=(), exact_match_accuracy=0.0)
    truth, pred = pred_set._arrays
    truth_sizes = truth.sum(axis=1)
    pred_sizes = pred.sum(axis=1)
    smax = int(max(truth_sizes.max(), pred_sizes.max()))
    size_counts = np.zeros((smax + 1, smax + 1), dtype=np.int64)
    exact_counts = np.zeros(smax + 1, dtype=np.int64)
    for i in range(n):
        r, c = int(truth_sizes[i]), int(pred_sizes[i])
        size_counts[r, c] += 1
        if r == c and bool((truth[i] == pred[i]).all()):
            exact_counts[r] += 1
    return CrossTab(
        sizes=tuple(range(smax + 1)),
        size_fraction=tuple(
            tuple(int(v) / n for v in row) for row in size_counts
        ),
        diagonal_exact=tuple(int(v) / n for v in exact_counts),
        exact_match_accuracy=int(exact_counts.sum()) / n,
    )


def compute_metrics(pred_set: PredictionSet) -> MetricsReport:
    """Full report for the taxonomy's mode; inapplicable fields stay None."""
    taxonomy = pred_set.taxonomy
    if taxonomy.exclusive:
        c = confusion_matrix(pred_set)
        per_class = {}
        ba_values: list[float | None] = []
        f1_values: list[float | None] = []
        for j, lab in enumerate(taxonomy.labels):
            ba = balanced_accuracy(c, j)
            f1_j = f1(c, j)
            ba_values.append(ba)
            f1_values.append(f1_j)
            per_class[lab.id] = PerClassMetrics(
                precision=precision(c, j),
                recall=recall(c, j),
                specificity=specificity(c, j),
                balanced_accuracy=ba,
                f1=f1_j,
                support=c.tp(j) + c.fn(j),
            )
        macro_ba, ba_excluded = _macro(ba_values)
        macro_f1_value, f1_excluded = _macro(f1_values)
        return MetricsReport(
            mode="exclusive",
            n=pred_set.n,
            m=taxonomy.m,
            accuracy=accuracy(c),
            per_class=per_class,
            macro_balanced_accuracy=macro_ba,
            macro_f1=macro_f1_value,
            weighted_f1=weighted_f1(c),
            excluded={
                "macro_balanced_accuracy": ba_excluded,
                "macro_f1": f1_excluded,
            },
            hamming_loss=hamming_loss(pred_set),
            confusion=c,
        )
    return MetricsReport(
        mode="multilabel",
        n=pred_set.n,
        m=taxonomy.m,
        hamming_loss=hamming_loss(pred_set),
        jaccard_standard=jaccard(pred_set, "standard"),
        jaccard_paper=jaccard(pred_set, "paper"),
        at_least_one_correct=at_least_one_correct(pred_set),
        crosstab=exact_count_crosstab(pred_set),
        excluded={},
    )
