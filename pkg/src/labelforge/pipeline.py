"""Fine-tuning export and checkpointed large-scale inference.

The exporter turns human-filtered label sets into instruction/input/output
JSONL for an external trainer. The scale runner applies a (typically tuned)
backend to a whole corpus with an append-only, idempotent output stream:
killing the process at any point and re-running loses nothing and repeats no
finished document.
"""

from __future__ import annotations

import hashlib
import importlib.metadata
import json
import math
import random
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

from .corpus import Corpus, Taxonomy
from .errors import BackendUnavailableError, ExportError, IngestError
from .gateway import PromptTemplate, render_instruction
from .metrics import MetricsReport, PredictionSet, compute_metrics
from .strategies import BackendPool, StrategyConfig, classify
from .verification import ResolvedDocument

__all__ = [
    "FinetuneExample",
    "ExportResult",
    "ScaleJob",
    "ScaleSummary",
    "export_finetune",
    "read_finetune_labels",
    "run_scale",
    "load_predictions",
    "evaluate_run",
]

try:
    _TOOL_VERSION = importlib.metadata.version("labelforge")
except importlib.metadata.PackageNotFoundError:  # running from a checkout
    _TOOL_VERSION = "0"

LABEL_JOIN = "; "


@dataclass(frozen=True)
class FinetuneExample:
    instruction: str
    input: str
    output: str
    meta: dict

    def to_json(self) -> dict:
        return {
            "instruction": self.instruction,
            "input": self.input,
            "output": self.output,
            "meta": self.meta,
        }


@dataclass(frozen=True)
class ExportResult:
    train_path: Path
    test_path: Path
    manifest_path: Path
    manifest: dict


def _template_digest(template: PromptTemplate) -> str:
    payload = json.dumps(
        {
            "id": template.id,
            "system": template.system,
            "user": template.user,
            "render_labels_as": template.render_labels_as,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _canonical_output(labels: tuple[str, ...], taxonomy: Taxonomy) -> str:
    ordered = sorted(labels, key=taxonomy.index_of)
    return LABEL_JOIN.join(taxonomy.label_by_id(lab).display_name for lab in ordered)


def export_finetune(
    resolved: list[ResolvedDocument],
    corpus: Corpus,
    template: PromptTemplate,
    ratio: float,
    seed: int,
    out_dir: str | Path,
    include_empty: bool = False,
    per_label_replication: bool = False,
    tool_version: str = _TOOL_VERSION,
) -> ExportResult:
    """Write train/test instruction-tuning JSONL plus a reproducibility manifest.

    The split is over documents (never splitting one document's examples
    across sides) and depends only on (doc ids, ratio, seed), so changing
    the template changes instructions but not membership. Documents whose
    survivor set is empty are excluded unless include_empty is set;
    conflict-flagged documents always abort.
    """
    taxonomy = corpus.taxonomy
    conflicts = [r.doc_id for r in resolved if r.conflict]
    if conflicts:
        raise ExportError(
            f"cannot export with unresolved conflicts on docs: {sorted(conflicts)}"
        )
    display_names = [lab.display_name for lab in taxonomy.labels]
    if len(set(display_names)) != len(display_names):
        raise ExportError(
            "taxonomy display names must be unique for a round-trippable export"
        )
    missing = [r.doc_id for r in resolved if r.doc_id not in corpus.by_id]
    if missing:
        raise ExportError(f"resolved docs missing from corpus: {sorted(missing)}")

    included: list[ResolvedDocument] = []
    excluded_empty = 0
    for r in resolved:
        if not r.surviving_labels and not include_empty:
            excluded_empty += 1
            continue
        included.append(r)
    if not 0 <= ratio <= 1:
        raise ExportError(f"ratio must be in [0, 1], got {ratio}")

    rng = random.Random(seed)
    order = list(range(len(included)))
    rng.shuffle(order)
    n_train = int(math.floor(Fraction(str(ratio)) * len(included)))
    train_idx = set(order[:n_train])

    instruction = render_instruction(template, taxonomy.labels)

    def examples_for(r: ResolvedDocument) -> list[FinetuneExample]:
        doc = corpus.by_id[r.doc_id]
        meta = {"doc_id": r.doc_id, "taxonomy": taxonomy.name, "template": template.id}
        if per_label_replication and r.surviving_labels:
            return [
                FinetuneExample(
                    instruction=instruction,
                    input=doc.text,
                    output=_canonical_output((lab,), taxonomy),
                    meta=meta,
                )
                for lab in sorted(r.surviving_labels, key=taxonomy.index_of)
            ]
        return [
            FinetuneExample(
                instruction=instruction,
                input=doc.text,
                output=_canonical_output(r.surviving_labels, taxonomy),
                meta=meta,
            )
        ]

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_path = out_dir / "train.jsonl"
    test_path = out_dir / "test.jsonl"
    counts = {"train": 0, "test": 0, "train_docs": 0, "test_docs": 0}
    with open(train_path, "w", encoding="utf-8") as train_fh, open(
        test_path, "w", encoding="utf-8"
    ) as test_fh:
        for i, r in enumerate(included):
            is_train = i in train_idx
            fh = train_fh if is_train else test_fh
            side = "train" if is_train else "test"
            counts[f"{side}_docs"] += 1
            for ex in examples_for(r):
                fh.write(json.dumps(ex.to_json(), ensure_ascii=False) + "\n")
                counts[side] += 1

    manifest = {
        "counts": {
            **counts,
            "total_docs": len(included),
            "excluded_empty": excluded_empty,
        },
        "seed": seed,
        "ratio": ratio,
        "per_label_replication": per_label_replication,
        "include_empty": include_empty,
        "taxonomy_sha": taxonomy.content_hash(),
        "template_sha": _template_digest(template),
        "train_sha": _file_digest(train_path),
        "test_sha": _file_digest(test_path),
        "created_at": datetime.now(timezone.utc).isoformat(),
        "tool_version": tool_version,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return ExportResult(
        train_path=train_path,
        test_path=test_path,
        manifest_path=manifest_path,
        manifest=manifest,
    )


def read_finetune_labels(path: str | Path, taxonomy: Taxonomy) -> dict[str, tuple[str, ...]]:
    """Invert an export: doc_id -> label-id tuple, merging replicated rows."""
    by_display = {lab.display_name: lab.id for lab in taxonomy.labels}
    out: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            doc_id = obj["meta"]["doc_id"]
            labels = out.setdefault(doc_id, [])
            if not obj["output"]:
                continue
            for name in obj["output"].split(LABEL_JOIN):
                if name not in by_display:
                    raise ExportError(f"output label {name!r} not in taxonomy")
                if by_display[name] not in labels:
                    labels.append(by_display[name])
    return {
        doc_id: tuple(sorted(labels, key=taxonomy.index_of))
        for doc_id, labels in out.items()
    }


# --------------------------------------------------------------- scaling


@dataclass
class ScaleJob:
    """Checkpointed batch-inference job over one corpus and one strategy."""

    job_id: str
    corpus: Corpus
    config: StrategyConfig
    pool: BackendPool
    out_path: Path
    checkpoint_path: Path | None = None
    checkpoint_every: int = 100
    max_concurrency: int = 1
    probe: bool = True

    def __post_init__(self):
        self.out_path = Path(self.out_path)
        if self.checkpoint_path is None:
            self.checkpoint_path = self.out_path.with_suffix(
                self.out_path.suffix + ".checkpoint.json"
            )


@dataclass(frozen=True)
class ScaleSummary:
    job_id: str
    total: int
    done: int
    failed: int
    retried: int
    duration: float
    docs_per_sec: float
    input_tokens: int
    output_tokens: int
    cost: float
    parse_failure_rate: float


def _scan_output(path: Path) -> dict[str, dict]:
    rows: dict[str, dict] = {}
    if not path.exists():
        return rows
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            rows[obj["id"]] = obj
    return rows


def _write_checkpoint(job: ScaleJob, done: int, failed: int) -> None:
    state = {
        "job_id": job.job_id,
        "cursor": done + failed,
        "done": done,
        "failed": failed,
        "timestamp": time.time(),
    }
    job.checkpoint_path.write_text(json.dumps(state) + "\n", encoding="utf-8")


def run_scale(job: ScaleJob) -> ScaleSummary:
    """Classify every corpus document, resumably.

    Output is append-only JSONL keyed by document id; a restart scans it and
    processes only missing documents, so any interrupt schedule converges to
    exactly one line per document. A checkpoint file tracks progress for
    status reporting; correctness never depends on it.
    """
    taxonomy = job.corpus.taxonomy
    existing = _scan_output(job.out_path)
    remaining = [d for d in job.corpus.documents if d.id not in existing]

    backend = job.pool.backend(job.config.backend)
    if job.probe and remaining:
        # Health probe outside the journal so cost accounting stays exact.
        from .gateway import complete

        complete(
            backend,
            [{"role": "user", "content": "ping"}],
            transport=job.pool.transport,
            journal=None,
            sleep=job.pool.sleep,
        )

    workers = max(1, min(job.max_concurrency, backend.max_concurrency))
    t0 = time.monotonic()

    def work(doc):
        try:
            result = classify(doc, taxonomy, job.config, job.pool)
        except BackendUnavailableError as exc:
            return doc, None, str(exc)
        return doc, result, None

    done = sum(1 for row in existing.values() if row.get("status") == "ok")
    failed = len(existing) - done
    since_checkpoint = 0
    with open(job.out_path, "a", encoding="utf-8") as out_fh:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(work, doc) for doc in remaining]
            for fut in as_completed(futures):
                doc, result, error = fut.result()
                if result is not None:
                    line = {
                        "id": doc.id,
                        "labels": list(result.labels),
                        "status": result.status,
                        "fragments": list(result.fragments),
                        "input_tokens": sum(r.input_tokens for r in result.records),
                        "output_tokens": sum(r.output_tokens for r in result.records),
                        "cost": sum(r.cost or 0.0 for r in result.records),
                        "attempts": sum(r.attempts for r in result.records),
                        "calls": result.calls,
                    }
                    if result.status == "ok":
                        done += 1
                    else:
                        failed += 1
                else:
                    line = {
                        "id": doc.id,
                        "labels": [],
                        "status": "backend_error",
                        "error": error,
                        "input_tokens": 0,
                        "output_tokens": 0,
                        "cost": 0.0,
                        "attempts": 0,
                        "calls": 0,
                    }
                    failed += 1
                out_fh.write(json.dumps(line, ensure_ascii=False) + "\n")
                out_fh.flush()
                since_checkpoint += 1
                if since_checkpoint >= job.checkpoint_every:
                    _write_checkpoint(job, done, failed)
                    since_checkpoint = 0
    _write_checkpoint(job, done, failed)

    duration = time.monotonic() - t0
    rows = _scan_output(job.out_path)
    input_tokens = sum(r.get("input_tokens", 0) for r in rows.values())
    output_tokens = sum(r.get("output_tokens", 0) for r in rows.values())
    cost = sum(r.get("cost", 0.0) for r in rows.values())
    retried = sum(
        max(0, r.get("attempts", 0) - r.get("calls", 0)) for r in rows.values()
    )
    parse_failures = sum(1 for r in rows.values() if r.get("status") == "failed")
    n = len(rows)
    return ScaleSummary(
        job_id=job.job_id,
        total=n,
        done=done,
        failed=failed,
        retried=retried,
        duration=duration,
        docs_per_sec=(len(remaining) / duration) if duration > 0 else 0.0,
        input_tokens=input_tokens,
        output_tokens=output_tokens,
        cost=cost,
        parse_failure_rate=(parse_failures / n) if n else 0.0,
    )


# ------------------------------------------------------------ evaluation


def load_predictions(path: str | Path) -> list[dict]:
    """Read a predictions JSONL stream ({"id": str, "labels": [str]})."""
    preds = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            if "id" not in obj or "labels" not in obj:
                raise IngestError(f"{path}:{lineno}: prediction needs id and labels")
            preds.append(obj)
    return preds


def evaluate_run(predictions: list[dict], corpus: Corpus) -> MetricsReport:
    """Join predictions to gold labels by document id and compute metrics."""
    unknown = sorted({p["id"] for p in predictions} - set(corpus.by_id))
    if unknown:
        raise IngestError(f"prediction ids not in corpus: {unknown}")
    missing_gold = sorted(
        {
            p["id"]
            for p in predictions
            if corpus.by_id[p["id"]].true_labels is None
        }
    )
    if missing_gold:
        raise IngestError(f"corpus docs lack gold labels: {missing_gold}")
    rows = []
    for p in predictions:
        doc = corpus.by_id[p["id"]]
        rows.append((p["id"], sorted(doc.true_labels), p["labels"]))
    pred_set = PredictionSet.from_label_sets(corpus.taxonomy, rows)
    return compute_metrics(pred_set)
