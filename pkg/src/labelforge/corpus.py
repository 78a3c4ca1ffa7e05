"""Data normalization: documents, taxonomies, corpora, and train/test splits.

Every downstream stage works on the canonical tabular form built here: a
corpus is a list of (id, text, optional true labels) bound to one taxonomy.
The canonical on-disk format is JSONL (one document per line); CSV is a
lossy convenience importer.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import IngestError, SplitError, TaxonomyError

__all__ = [
    "Label",
    "Subtopic",
    "Taxonomy",
    "Document",
    "Corpus",
    "ColumnMapping",
    "ingest_csv",
    "ingest_jsonl",
    "write_jsonl",
    "load_taxonomy",
    "fixture_path",
    "load_fixture_taxonomy",
    "split_train_test",
]


@dataclass(frozen=True)
class Label:
    """One member of a taxonomy's label universe."""

    id: str
    display_name: str
    description: str = ""
    group: str | None = None  # optional UI grouping, ignored by the pipeline


@dataclass(frozen=True)
class Subtopic:
    """A fine-grained child of a macro-area label in a two-level taxonomy."""

    id: str
    display_name: str
    description: str = ""


@dataclass
class Taxonomy:
    """A label universe: flat or two-level (macro area -> subtopics).

    Invariants enforced at construction: label ids unique, at least two
    labels, exclusive taxonomies cap predictions at one label, hierarchy
    keys are label ids, and subtopic ids are unique across the whole
    hierarchy.
    """

    name: str
    labels: list[Label]
    exclusive: bool = False
    max_labels: int | None = None
    hierarchy: dict[str, list[Subtopic]] = field(default_factory=dict)

    def __post_init__(self):
        ids = [lab.id for lab in self.labels]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise TaxonomyError(f"duplicate label ids: {dupes}")
        if len(ids) < 2:
            raise TaxonomyError(f"taxonomy needs at least 2 labels, got {len(ids)}")
        if self.exclusive:
            if self.max_labels is None:
                self.max_labels = 1
            elif self.max_labels != 1:
                raise TaxonomyError(
                    f"exclusive taxonomy must have max_labels=1, got {self.max_labels}"
                )
        if self.max_labels is not None and self.max_labels < 1:
            raise TaxonomyError(f"max_labels must be positive, got {self.max_labels}")
        id_set = set(ids)
        for key in self.hierarchy:
            if key not in id_set:
                raise TaxonomyError(f"hierarchy key {key!r} is not a label id")
        sub_ids = [s.id for subs in self.hierarchy.values() for s in subs]
        if len(set(sub_ids)) != len(sub_ids):
            dupes = sorted({i for i in sub_ids if sub_ids.count(i) > 1})
            raise TaxonomyError(f"duplicate subtopic ids across hierarchy: {dupes}")

    @property
    def m(self) -> int:
        return len(self.labels)

    @property
    def is_hierarchical(self) -> bool:
        return bool(self.hierarchy)

    @property
    def label_ids(self) -> list[str]:
        return [lab.id for lab in self.labels]

    def label_by_id(self, label_id: str) -> Label:
        for lab in self.labels:
            if lab.id == label_id:
                return lab
        raise TaxonomyError(f"unknown label id {label_id!r} in taxonomy {self.name!r}")

    def index_of(self, label_id: str) -> int:
        for i, lab in enumerate(self.labels):
            if lab.id == label_id:
                return i
        raise TaxonomyError(f"unknown label id {label_id!r} in taxonomy {self.name!r}")

    def macro_areas(self) -> list[str]:
        """Hierarchy keys in taxonomy label order."""
        keys = set(self.hierarchy)
        return [lab.id for lab in self.labels if lab.id in keys]

    def subtopic_to_macro(self) -> dict[str, str]:
        return {
            sub.id: macro for macro, subs in self.hierarchy.items() for sub in subs
        }

    def content_hash(self) -> str:
        """Stable digest pinning M, exclusivity, and every label/subtopic."""
        payload = {
            "name": self.name,
            "exclusive": self.exclusive,
            "max_labels": self.max_labels,
            "labels": [
                [lab.id, lab.display_name, lab.description, lab.group]
                for lab in self.labels
            ],
            "hierarchy": {
                k: [[s.id, s.display_name] for s in v]
                for k, v in sorted(self.hierarchy.items())
            },
        }
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Document:
    """One unit of text to classify, with optional gold labels."""

    id: str
    text: str
    true_labels: frozenset[str] | None = None
    source: str | None = None


@dataclass
class Corpus:
    """Documents bound to one taxonomy. Ids unique, texts non-empty."""

    documents: list[Document]
    taxonomy: Taxonomy
    dropped_rows: int = 0  # rows skipped at ingest for empty text

    def __post_init__(self):
        seen: set[str] = set()
        for doc in self.documents:
            if doc.id in seen:
                raise IngestError(f"duplicate document id {doc.id!r}")
            seen.add(doc.id)
            if not doc.text.strip():
                raise IngestError(f"document {doc.id!r} has empty text")
            if doc.true_labels is not None:
                unknown = doc.true_labels - set(self.taxonomy.label_ids)
                if unknown:
                    raise IngestError(
                        f"document {doc.id!r} has labels not in taxonomy "
                        f"{self.taxonomy.name!r}: {sorted(unknown)}"
                    )

    @property
    def n(self) -> int:
        return len(self.documents)

    @cached_property
    def by_id(self) -> dict[str, Document]:
        """Documents keyed by id. Contents never change after construction."""
        return {doc.id: doc for doc in self.documents}


@dataclass(frozen=True)
class ColumnMapping:
    """Column names for the CSV importer."""

    id_col: str
    text_col: str
    label_col: str | None = None
    label_delim: str = ";"


def _resolve_label_token(token: str, taxonomy: Taxonomy, row_ref: str) -> str:
    """Map a raw label cell token onto a taxonomy label id, or fail loudly."""
    token = token.strip()
    for lab in taxonomy.labels:
        if token == lab.id or token == lab.display_name:
            return lab.id
    raise IngestError(
        f"unknown label token {token!r} at {row_ref} "
        f"(taxonomy {taxonomy.name!r}; no silent coercion)"
    )


def ingest_csv(
    path: str | Path, mapping: ColumnMapping, taxonomy: Taxonomy
) -> Corpus:
    """Ingest a CSV file into a Corpus.

    Rows whose text is empty after trimming are dropped and counted in
    ``Corpus.dropped_rows``. True-label cells split on ``mapping.label_delim``
    and every token must resolve to a taxonomy label id or display name.
    """
    import csv as _csv

    path = Path(path)
    if not path.exists():
        raise IngestError(f"no such file: {path}")
    documents: list[Document] = []
    dropped = 0
    seen_ids: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in (mapping.id_col, mapping.text_col):
            if col not in header:
                raise IngestError(f"missing column {col!r} in {path} (header: {header})")
        if mapping.label_col is not None and mapping.label_col not in header:
            raise IngestError(
                f"missing label column {mapping.label_col!r} in {path} (header: {header})"
            )
        for lineno, row in enumerate(reader, start=2):
            doc_id = (row.get(mapping.id_col) or "").strip()
            if not doc_id:
                raise IngestError(f"missing id value at {path}:{lineno}")
            if doc_id in seen_ids:
                raise IngestError(
                    f"duplicate id {doc_id!r} at {path}:{lineno} "
                    f"(first seen at line {seen_ids[doc_id]})"
                )
            seen_ids[doc_id] = lineno
            text = (row.get(mapping.text_col) or "").strip()
            if not text:
                dropped += 1
                continue
            true_labels = None
            if mapping.label_col is not None:
                cell = (row.get(mapping.label_col) or "").strip()
                if cell:
                    tokens = [t for t in cell.split(mapping.label_delim) if t.strip()]
                    true_labels = frozenset(
                        _resolve_label_token(t, taxonomy, f"{path}:{lineno}")
                        for t in tokens
                    )
            documents.append(
                Document(id=doc_id, text=text, true_labels=true_labels, source=str(path))
            )
    return Corpus(documents=documents, taxonomy=taxonomy, dropped_rows=dropped)


def ingest_jsonl(path: str | Path, taxonomy: Taxonomy) -> Corpus:
    """Ingest the canonical JSONL corpus format.

    One JSON object per line: {"id", "text", "true_labels"?, "source"?}.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"no such file: {path}")
    documents: list[Document] = []
    dropped = 0
    seen_ids: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"malformed JSON at {path}:{lineno}: {exc}") from exc
            if "id" not in obj or "text" not in obj:
                raise IngestError(f"missing id/text field at {path}:{lineno}")
            doc_id = str(obj["id"]).strip()
            if not doc_id:
                raise IngestError(f"missing id value at {path}:{lineno}")
            if doc_id in seen_ids:
                raise IngestError(
                    f"duplicate id {doc_id!r} at {path}:{lineno} "
                    f"(first seen at line {seen_ids[doc_id]})"
                )
            seen_ids[doc_id] = lineno
            text = str(obj["text"]).strip()
            if not text:
                dropped += 1
                continue
            true_labels = None
            if obj.get("true_labels") is not None:
                true_labels = frozenset(
                    _resolve_label_token(str(t), taxonomy, f"{path}:{lineno}")
                    for t in obj["true_labels"]
                )
            documents.append(
                Document(
                    id=doc_id,
                    text=text,
                    true_labels=true_labels,
                    source=obj.get("source"),
                )
            )
    return Corpus(documents=documents, taxonomy=taxonomy, dropped_rows=dropped)


def write_jsonl(corpus: Corpus, path: str | Path) -> None:
    """Write the canonical JSONL form. Round-trips exactly through ingest_jsonl."""
    order = {lab: i for i, lab in enumerate(corpus.taxonomy.label_ids)}
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus.documents:
            obj: dict = {"id": doc.id, "text": doc.text}
            if doc.true_labels is not None:
                obj["true_labels"] = sorted(doc.true_labels, key=order.__getitem__)
            if doc.source is not None:
                obj["source"] = doc.source
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def _taxonomy_from_mapping(data: dict, origin: str) -> Taxonomy:
    try:
        raw_labels = data["labels"]
    except KeyError:
        raise TaxonomyError(f"{origin}: missing 'labels'") from None
    labels = [
        Label(
            id=str(lab["id"]),
            display_name=str(lab.get("name", lab["id"])),
            description=str(lab.get("description", "")),
            group=lab.get("group"),
        )
        for lab in raw_labels
    ]
    hierarchy = {
        str(key): [Subtopic(id=str(s["id"]), display_name=str(s.get("name", s["id"]))) for s in subs]
        for key, subs in data.get("hierarchy", {}).items()
    }
    return Taxonomy(
        name=str(data.get("name", origin)),
        labels=labels,
        exclusive=bool(data.get("exclusive", False)),
        max_labels=data.get("max_labels"),
        hierarchy=hierarchy,
    )


def load_taxonomy(path: str | Path) -> Taxonomy:
    """Load and validate a declarative taxonomy file (.toml or .json)."""
    path = Path(path)
    if not path.exists():
        raise TaxonomyError(f"no such file: {path}")
    if path.suffix == ".toml":
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    elif path.suffix == ".json":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    else:
        raise TaxonomyError(f"unsupported taxonomy format: {path.suffix!r}")
    return _taxonomy_from_mapping(data, origin=str(path))


def fixture_path(name: str) -> Path:
    """Path of a shipped taxonomy fixture ('cap', 'dataverse', 'flourishing')."""
    from importlib.resources import files

    return Path(str(files("labelforge") / "fixtures" / f"{name}.toml"))


def load_fixture_taxonomy(name: str) -> Taxonomy:
    return load_taxonomy(fixture_path(name))


def _exact_train_size(ratio: float, n: int) -> int:
    # Fraction(str(ratio)) recovers the decimal the caller typed, so
    # floor(0.7 * 108729) is 76110 and never one off from float noise.
    return int(math.floor(Fraction(str(ratio)) * n))


def split_train_test(
    corpus: Corpus,
    ratio: float,
    seed: int,
    stratify_by_label: bool = False,
) -> tuple[Corpus, Corpus]:
    """Deterministic train/test partition.

    Train size is floor(ratio * n), remainder goes to test. Stratified mode
    (exclusive taxonomies with full gold labels only) preserves per-class
    proportions to within one document per class.
    """
    if not (0.0 < ratio < 1.0):
        raise SplitError(f"ratio must be in (0,1), got {ratio}")
    if corpus.n < 2:
        raise SplitError(f"corpus needs at least 2 documents, got {corpus.n}")

    train_size = _exact_train_size(ratio, corpus.n)

    if not stratify_by_label:
        indices = list(range(corpus.n))
        random.Random(seed).shuffle(indices)
        train_idx = set(indices[:train_size])
        train = [d for i, d in enumerate(corpus.documents) if i in train_idx]
        test = [d for i, d in enumerate(corpus.documents) if i not in train_idx]
        return (
            Corpus(documents=train, taxonomy=corpus.taxonomy),
            Corpus(documents=test, taxonomy=corpus.taxonomy),
        )

    if not corpus.taxonomy.exclusive:
        raise SplitError("stratified split requires an exclusive taxonomy")
    for doc in corpus.documents:
        if not doc.true_labels or len(doc.true_labels) != 1:
            raise SplitError(
                f"stratified split requires exactly one true label per document "
                f"(document {doc.id!r})"
            )

    frac = Fraction(str(ratio))
    by_class: dict[str, list[int]] = {lab: [] for lab in corpus.taxonomy.label_ids}
    for i, doc in enumerate(corpus.documents):
        (label,) = doc.true_labels
        by_class[label].append(i)

    rng = random.Random(seed)
    takes: dict[str, int] = {}
    fractional: list[tuple[Fraction, int, str]] = []
    for order, (label, members) in enumerate(by_class.items()):
        exact = frac * len(members)
        takes[label] = int(math.floor(exact))
        fractional.append((exact - takes[label], order, label))
    shortfall = train_size - sum(takes.values())
    # Largest fractional remainder first; taxonomy order breaks ties.
    for _, _, label in sorted(fractional, key=lambda t: (-t[0], t[1])):
        if shortfall <= 0:
            break
        if takes[label] < len(by_class[label]):
            takes[label] += 1
            shortfall -= 1
    if shortfall > 0:
        raise SplitError("could not satisfy train size under stratification")

    train_idx: set[int] = set()
    for label, members in by_class.items():
        members = list(members)
        rng.shuffle(members)
        train_idx.update(members[: takes[label]])
    train = [d for i, d in enumerate(corpus.documents) if i in train_idx]
    test = [d for i, d in enumerate(corpus.documents) if i not in train_idx]
    return (
        Corpus(documents=train, taxonomy=corpus.taxonomy),
        Corpus(documents=test, taxonomy=corpus.taxonomy),
    )
