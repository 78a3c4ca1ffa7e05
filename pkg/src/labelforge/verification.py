"""Human verification: assignment, rejection-based review, resolution, kappa.

Coders never pick labels from scratch; they keep or reject the candidates the
crowd proposed. Overlapping assignments feed the agreement statistics.
"""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

from .corpus import Corpus, Taxonomy
from .errors import (
    AssignmentError,
    NotReadyError,
    ReliabilityError,
    ReviewConflictError,
    ReviewError,
)

__all__ = [
    "ROLES",
    "POLICIES",
    "Coder",
    "Assignment",
    "VerificationRecord",
    "ResolvedDocument",
    "KappaResult",
    "ReviewLog",
    "assign",
    "cohen_kappa",
    "cohen_kappa_from_table",
    "fleiss_kappa",
    "fleiss_counts",
]

ROLES = ("expert", "trained", "crowd")
POLICIES = ("any_reject_drops", "majority_reject_drops", "unanimous_keep")

# Reduced per-document categories used for agreement on exclusive taxonomies.
EMPTY_CATEGORY = "__empty__"
CONFLICT_CATEGORY = "__conflict__"


@dataclass(frozen=True)
class Coder:
    id: str
    display_name: str
    role: str = "trained"

    def __post_init__(self):
        if self.role not in ROLES:
            raise AssignmentError(f"unknown coder role {self.role!r}; expected one of {ROLES}")


@dataclass
class Assignment:
    coder_id: str
    doc_id: str
    status: str = "pending"  # pending | submitted
    assigned_at: float = 0.0


@dataclass(frozen=True)
class VerificationRecord:
    """One coder's keep/reject verdicts over a document's candidate set.

    Immutable once created; corrections create a new record whose
    `supersedes` points at the old one.
    """

    record_id: int
    coder_id: str
    doc_id: str
    decisions: tuple[tuple[str, str], ...]  # (label, keep|reject), candidate order
    submitted_at: float
    supersedes: int | None = None

    @property
    def decision_map(self) -> dict[str, str]:
        return dict(self.decisions)


@dataclass(frozen=True)
class ResolvedDocument:
    doc_id: str
    surviving_labels: tuple[str, ...]
    policy_used: str
    records: tuple[int, ...]  # contributing record ids
    conflict: bool = False


@dataclass(frozen=True)
class KappaResult:
    """Chance-corrected agreement; value None signals an undefined statistic."""

    value: float | None
    observed: float
    expected: float
    n_items: int

    @property
    def undefined(self) -> bool:
        return self.value is None

    @property
    def percent(self) -> float | None:
        return None if self.value is None else 100 * self.value


def assign(
    corpus: Corpus,
    coders: Sequence[Coder],
    overlap_fraction: float,
    per_coder_cap: int | None = None,
    seed: int = 0,
    clock: Callable[[], float] = time.time,
) -> list[Assignment]:
    """Deterministically spread documents over coders with deliberate overlap.

    ceil(overlap_fraction * n) randomly chosen documents go to two coders so
    agreement can be measured; the rest go to exactly one. Load stays
    balanced and no coder exceeds the cap.
    """
    if not coders:
        raise AssignmentError("need at least one coder")
    if len({c.id for c in coders}) != len(coders):
        raise AssignmentError("coder ids must be unique")
    if not 0 <= overlap_fraction <= 1:
        raise AssignmentError(f"overlap_fraction must be in [0, 1], got {overlap_fraction}")
    n = corpus.n
    # Fraction of the typed decimal keeps ceil(0.1 * 100) at 10, not 11.
    k = math.ceil(Fraction(str(overlap_fraction)) * n)
    if k > 0 and len(coders) < 2:
        raise AssignmentError("overlap requires at least two coders")
    slots = n + k
    cap = per_coder_cap if per_coder_cap is not None else slots
    capacity = cap * len(coders)
    if capacity < slots:
        raise AssignmentError(
            f"infeasible: {n} docs + {k} overlap copies = {slots} review slots, "
            f"but {len(coders)} coders x cap {cap} = {capacity}"
        )
    rng = random.Random(seed)
    doc_ids = [d.id for d in corpus.documents]
    overlap_ids = set(rng.sample(doc_ids, k))
    loads = {c.id: 0 for c in coders}
    order = {c.id: i for i, c in enumerate(coders)}
    now = clock()
    assignments: list[Assignment] = []
    for doc_id in doc_ids:
        need = 2 if doc_id in overlap_ids else 1
        eligible = [cid for cid in loads if loads[cid] < cap]
        if len(eligible) < need:
            raise AssignmentError(
                f"infeasible: doc {doc_id!r} needs {need} distinct coders under "
                f"cap {cap}, only {len(eligible)} available"
            )
        eligible.sort(key=lambda cid: (loads[cid], order[cid]))
        for cid in eligible[:need]:
            loads[cid] += 1
            assignments.append(
                Assignment(coder_id=cid, doc_id=doc_id, status="pending", assigned_at=now)
            )
    return assignments


class ReviewLog:
    """In-memory verification state: candidates, assignments, records.

    The persistent store mirrors this structure; resolution and reliability
    logic lives here so both paths share one implementation.
    """

    def __init__(
        self,
        candidates: Mapping[str, Sequence[str]],
        exclusive: bool = False,
        clock: Callable[[], float] = time.time,
    ):
        self.candidates = {doc_id: tuple(labels) for doc_id, labels in candidates.items()}
        self.exclusive = exclusive
        self._clock = clock
        self.assignments: dict[tuple[str, str], Assignment] = {}
        self.records: list[VerificationRecord] = []

    def add_assignments(self, assignments: Iterable[Assignment]) -> None:
        for a in assignments:
            key = (a.coder_id, a.doc_id)
            if key in self.assignments:
                raise AssignmentError(f"duplicate assignment {key!r}")
            if a.doc_id not in self.candidates:
                raise AssignmentError(f"assignment for unknown doc {a.doc_id!r}")
            self.assignments[key] = a

    def pending_for(self, coder_id: str) -> list[Assignment]:
        return [
            a
            for (cid, _), a in self.assignments.items()
            if cid == coder_id and a.status == "pending"
        ]

    def submit(
        self,
        coder_id: str,
        doc_id: str,
        decisions: Mapping[str, str],
        supersede: bool = False,
    ) -> VerificationRecord:
        """Persist one review; decisions must cover the shown candidates exactly."""
        key = (coder_id, doc_id)
        assignment = self.assignments.get(key)
        if assignment is None:
            raise ReviewError(f"no assignment for coder {coder_id!r} on doc {doc_id!r}")
        shown = self.candidates[doc_id]
        missing = [lab for lab in shown if lab not in decisions]
        extra = [lab for lab in decisions if lab not in shown]
        if missing or extra:
            raise ReviewError(
                f"decisions must cover the candidate set exactly; "
                f"missing={missing!r} extra={extra!r}"
            )
        bad = {lab: v for lab, v in decisions.items() if v not in ("keep", "reject")}
        if bad:
            raise ReviewError(f"decisions must be keep/reject, got {bad!r}")
        previous = self._latest_record(coder_id, doc_id)
        if assignment.status == "submitted" and not supersede:
            raise ReviewConflictError(
                f"coder {coder_id!r} already reviewed doc {doc_id!r}; "
                "resubmission requires supersede"
            )
        record = VerificationRecord(
            record_id=len(self.records),
            coder_id=coder_id,
            doc_id=doc_id,
            decisions=tuple((lab, decisions[lab]) for lab in shown),
            submitted_at=self._clock(),
            supersedes=previous.record_id if (previous and supersede) else None,
        )
        self.records.append(record)
        assignment.status = "submitted"
        return record

    def _latest_record(self, coder_id: str, doc_id: str) -> VerificationRecord | None:
        latest = None
        for rec in self.records:
            if rec.coder_id == coder_id and rec.doc_id == doc_id:
                latest = rec
        return latest

    def effective_records(self, doc_id: str) -> list[VerificationRecord]:
        """Latest record per coder for this doc (supersede chains collapsed)."""
        by_coder: dict[str, VerificationRecord] = {}
        for rec in self.records:
            if rec.doc_id == doc_id:
                by_coder[rec.coder_id] = rec
        return [by_coder[cid] for cid in sorted(by_coder)]

    def resolve(self, doc_id: str, policy: str = "any_reject_drops") -> ResolvedDocument:
        """Apply the survival policy over all effective records for a doc."""
        if policy not in POLICIES:
            raise ReviewError(f"unknown policy {policy!r}; expected one of {POLICIES}")
        if doc_id not in self.candidates:
            raise ReviewError(f"unknown doc {doc_id!r}")
        pending = [
            a
            for (_, did), a in self.assignments.items()
            if did == doc_id and a.status == "pending"
        ]
        if pending:
            raise NotReadyError(
                f"doc {doc_id!r} has {len(pending)} pending assignment(s); "
                "resolution needs all reviews in"
            )
        records = self.effective_records(doc_id)
        survivors = []
        for label in self.candidates[doc_id]:
            verdicts = [rec.decision_map[label] for rec in records]
            rejects = sum(1 for v in verdicts if v == "reject")
            if policy == "any_reject_drops":
                keep = rejects == 0
            elif policy == "majority_reject_drops":
                keep = 2 * rejects <= len(verdicts)
            else:  # unanimous_keep
                keep = all(v == "keep" for v in verdicts)
            if keep and verdicts:
                survivors.append(label)
        conflict = self.exclusive and len(survivors) > 1
        return ResolvedDocument(
            doc_id=doc_id,
            surviving_labels=tuple(survivors),
            policy_used=policy,
            records=tuple(rec.record_id for rec in records),
            conflict=conflict,
        )

    def resolve_all(self, policy: str = "any_reject_drops") -> list[ResolvedDocument]:
        return [self.resolve(doc_id, policy) for doc_id in self.candidates]

    # ------------------------------------------------------- reliability

    def overlap_docs(self, coder_a: str, coder_b: str) -> list[str]:
        docs_a = {did for (cid, did), a in self.assignments.items() if cid == coder_a}
        docs_b = {did for (cid, did), a in self.assignments.items() if cid == coder_b}
        return [did for did in self.candidates if did in docs_a and did in docs_b]

    def reduced_category(self, coder_id: str, doc_id: str) -> str:
        """Collapse a coder's kept set to one category for exclusive kappa."""
        rec = self._latest_record(coder_id, doc_id)
        if rec is None:
            raise NotReadyError(f"coder {coder_id!r} has not reviewed doc {doc_id!r}")
        kept = [lab for lab, v in rec.decisions if v == "keep"]
        if len(kept) == 1:
            return kept[0]
        return EMPTY_CATEGORY if not kept else CONFLICT_CATEGORY

    def cohen_kappa_for(
        self, coder_a: str, coder_b: str, taxonomy: Taxonomy
    ) -> KappaResult:
        docs = self.overlap_docs(coder_a, coder_b)
        if not docs:
            raise ReliabilityError(
                f"coders {coder_a!r} and {coder_b!r} share no documents"
            )
        pairs = [
            (self.reduced_category(coder_a, d), self.reduced_category(coder_b, d))
            for d in docs
        ]
        return cohen_kappa(pairs)

    def per_label_kappa(
        self, coder_a: str, coder_b: str, taxonomy: Taxonomy
    ) -> tuple[dict[str, KappaResult], float | None]:
        """Binary keep/reject agreement per label, plus the macro average."""
        docs = self.overlap_docs(coder_a, coder_b)
        if not docs:
            raise ReliabilityError(
                f"coders {coder_a!r} and {coder_b!r} share no documents"
            )
        per_label: dict[str, KappaResult] = {}
        for label in taxonomy.label_ids:
            pairs = []
            for d in docs:
                if label not in self.candidates[d]:
                    continue
                rec_a = self._latest_record(coder_a, d)
                rec_b = self._latest_record(coder_b, d)
                if rec_a is None or rec_b is None:
                    continue
                pairs.append((rec_a.decision_map[label], rec_b.decision_map[label]))
            if pairs:
                per_label[label] = cohen_kappa(pairs)
        defined = [k.value for k in per_label.values() if k.value is not None]
        macro = sum(defined) / len(defined) if defined else None
        return per_label, macro


def cohen_kappa(pairs: Sequence[tuple[str, str]]) -> KappaResult:
    """Unweighted Cohen's kappa over paired categorical ratings.

    kappa = (p_o - p_e) / (1 - p_e), with p_e the chance agreement implied
    by the two raters' marginal distributions. Degenerate marginals
    (p_e = 1) make the statistic undefined; that is signalled, not faked.
    """
    if not pairs:
        raise ReliabilityError("kappa needs at least one rating pair")
    n = len(pairs)
    categories = sorted({a for a, _ in pairs} | {b for _, b in pairs})
    p_o = sum(1 for a, b in pairs if a == b) / n
    marg_a = {c: sum(1 for a, _ in pairs if a == c) for c in categories}
    marg_b = {c: sum(1 for _, b in pairs if b == c) for c in categories}
    p_e = sum(marg_a[c] * marg_b[c] for c in categories) / (n * n)
    if p_e == 1:
        return KappaResult(value=None, observed=p_o, expected=p_e, n_items=n)
    return KappaResult(
        value=(p_o - p_e) / (1 - p_e), observed=p_o, expected=p_e, n_items=n
    )


def cohen_kappa_from_table(table: Sequence[Sequence[int]]) -> KappaResult:
    """Cohen's kappa from a square agreement table (rows: rater A, cols: B)."""
    size = len(table)
    if any(len(row) != size for row in table):
        raise ReliabilityError("agreement table must be square")
    pairs = []
    for i, row in enumerate(table):
        for j, count in enumerate(row):
            pairs.extend([(f"c{i}", f"c{j}")] * count)
    return cohen_kappa(pairs)


def fleiss_counts(
    ratings: Mapping[str, Sequence[str]], categories: Sequence[str]
) -> list[list[int]]:
    """Item x category count matrix from per-item rating lists."""
    counts = []
    for item in ratings:
        row = [0] * len(categories)
        index = {c: i for i, c in enumerate(categories)}
        for rating in ratings[item]:
            if rating not in index:
                raise ReliabilityError(f"rating {rating!r} not in category list")
            row[index[rating]] += 1
        counts.append(row)
    return counts


def fleiss_kappa(counts: Sequence[Sequence[int]]) -> KappaResult:
    """Fleiss' kappa over an item x category count matrix.

    Every item must have the same number of ratings r >= 2; offenders are
    listed rather than imputed away.
    """
    if not counts:
        raise ReliabilityError("kappa needs at least one rated item")
    r = sum(counts[0])
    offenders = [i for i, row in enumerate(counts) if sum(row) != r]
    if offenders:
        raise ReliabilityError(
            f"items must have equal rater counts (expected {r}); "
            f"offending item indices: {offenders}"
        )
    if r < 2:
        raise ReliabilityError(f"kappa needs >= 2 ratings per item, got {r}")
    n_items = len(counts)
    total = n_items * r
    p_bar = sum(
        (sum(c * c for c in row) - r) / (r * (r - 1)) for row in counts
    ) / n_items
    n_categories = len(counts[0])
    p_e = sum(
        (sum(row[j] for row in counts) / total) ** 2 for j in range(n_categories)
    )
    if p_e == 1:
        return KappaResult(value=None, observed=p_bar, expected=p_e, n_items=n_items)
    return KappaResult(
        value=(p_bar - p_e) / (1 - p_e), observed=p_bar, expected=p_e, n_items=n_items
    )
