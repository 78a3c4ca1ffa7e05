"""Classification strategies and the multi-model crowd runner.

Three per-document strategies (zero_shot, direct, iterative) plus run_crowd,
which executes many (document, strategy-config) pairs, deduplicates the
proposed labels per document, and journals every pair so interrupted runs
resume without repeating completion calls.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .corpus import Corpus, Document, Taxonomy
from .errors import BackendUnavailableError, StrategyError
from .gateway import (
    BackendConfig,
    CompletionJournal,
    CompletionRecord,
    ParsedLabels,
    PromptTemplate,
    Transport,
    complete,
    match_tokens,
    render,
)
from . import prompts

__all__ = [
    "KINDS",
    "NONE_OPTION",
    "StrategyConfig",
    "StrategyResult",
    "ProvenanceEntry",
    "CandidateLabel",
    "CrowdResult",
    "BackendPool",
    "classify_zero_shot",
    "classify_direct",
    "classify_iterative",
    "classify",
    "run_crowd",
    "write_crowd_jsonl",
    "read_crowd_jsonl",
]

KINDS = ("zero_shot", "direct", "iterative")

# Reserved Stage-A answer meaning "no subtopic of this area applies".
NONE_OPTION = "None"
_NONE_ID = "__none__"

_DEFAULT_TEMPLATES: dict[str, PromptTemplate] = {
    t.id: t
    for t in (
        prompts.ZERO_SHOT_EXCLUSIVE,
        prompts.ZERO_SHOT_MULTILABEL,
        prompts.DIRECT_SUBTOPIC,
        prompts.ITERATIVE_STAGE_A,
        prompts.ITERATIVE_STAGE_B,
    )
}


@dataclass(frozen=True)
class StrategyConfig:
    """One way of asking one backend to label documents."""

    kind: str
    backend: str
    template_ids: tuple[tuple[str, str], ...] = ()  # (stage, template id) overrides
    force_final_choice: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise StrategyError(f"unknown strategy kind {self.kind!r}; expected one of {KINDS}")

    @property
    def config_id(self) -> str:
        payload = json.dumps(
            {
                "kind": self.kind,
                "backend": self.backend,
                "template_ids": sorted(self.template_ids),
                "force_final_choice": self.force_final_choice,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:12]

    def template_for(self, stage: str, default_id: str) -> str:
        for s, tid in self.template_ids:
            if s == stage:
                return tid
        return default_id


@dataclass(frozen=True)
class StrategyResult:
    """Outcome of one strategy on one document.

    Parse failures are results, not exceptions: status is "failed", labels
    empty, and the raw model text survives in fragments/raw_text.
    """

    labels: tuple[str, ...]
    calls: int
    status: str  # ok | failed
    fragments: tuple[str, ...] = ()
    records: tuple[CompletionRecord, ...] = ()
    fallback: bool = False
    survivors: tuple[str, ...] = ()
    raw_text: str = ""


@dataclass(frozen=True)
class ProvenanceEntry:
    backend: str
    strategy: str
    completion: str  # prompt hash of the deciding completion
    config_id: str = ""
    fallback: bool = False


@dataclass(frozen=True)
class CandidateLabel:
    doc_id: str
    label: str
    provenance: frozenset[ProvenanceEntry]
    first_seen: float

    def __post_init__(self):
        if not self.provenance:
            raise StrategyError(f"candidate {self.label!r} on {self.doc_id!r} lacks provenance")


@dataclass(frozen=True)
class CrowdResult:
    doc_id: str
    candidates: tuple[CandidateLabel, ...]
    failures: tuple[tuple[str, str, str], ...] = ()  # (backend, strategy, error)


@dataclass
class BackendPool:
    """Named backends plus the injectable plumbing strategies call through."""

    backends: dict[str, BackendConfig]
    transport: Transport | None = None
    journal: CompletionJournal | None = None
    sleep: Callable[[float], None] = time.sleep
    templates: dict[str, PromptTemplate] = field(default_factory=dict)

    def backend(self, name: str) -> BackendConfig:
        if name not in self.backends:
            raise StrategyError(
                f"unknown backend {name!r}; configured: {sorted(self.backends)}"
            )
        return self.backends[name]

    def template(self, template_id: str) -> PromptTemplate:
        if template_id in self.templates:
            return self.templates[template_id]
        if template_id in _DEFAULT_TEMPLATES:
            return _DEFAULT_TEMPLATES[template_id]
        raise StrategyError(f"unknown template id {template_id!r}")

    def complete(self, backend_name: str, messages: list[dict]) -> CompletionRecord:
        return complete(
            self.backend(backend_name),
            messages,
            transport=self.transport,
            journal=self.journal,
            sleep=self.sleep,
        )


def _require_hierarchy(taxonomy: Taxonomy, kind: str) -> None:
    if not taxonomy.is_hierarchical:
        raise StrategyError(f"{kind} strategy requires a hierarchical taxonomy")


def classify_zero_shot(
    doc: Document, taxonomy: Taxonomy, config: StrategyConfig, pool: BackendPool
) -> StrategyResult:
    """One call listing every label; parse up to max_labels from the answer."""
    default = prompts.default_zero_shot(taxonomy.exclusive).id
    template = pool.template(config.template_for("main", default))
    messages = render(template, doc, taxonomy.labels)
    record = pool.complete(config.backend, messages)
    cap = 1 if taxonomy.exclusive else taxonomy.max_labels
    parsed = match_tokens(
        record.raw_text, [(lab.id, lab.display_name) for lab in taxonomy.labels], cap=cap
    )
    return StrategyResult(
        labels=parsed.labels,
        calls=1,
        status="failed" if parsed.parse_status == "failed" else "ok",
        fragments=parsed.unparsed_fragments,
        records=(record,),
        raw_text=record.raw_text,
    )


def classify_direct(
    doc: Document, taxonomy: Taxonomy, config: StrategyConfig, pool: BackendPool
) -> StrategyResult:
    """One call over the full subtopic list; answer maps to its macro area."""
    _require_hierarchy(taxonomy, "direct")
    template = pool.template(config.template_for("main", prompts.DIRECT_SUBTOPIC.id))
    subtopics = [sub for subs in taxonomy.hierarchy.values() for sub in subs]
    messages = render(template, doc, subtopics)
    record = pool.complete(config.backend, messages)
    parsed = match_tokens(
        record.raw_text, [(sub.id, sub.display_name) for sub in subtopics], cap=1
    )
    if parsed.parse_status == "failed":
        return StrategyResult(
            labels=(),
            calls=1,
            status="failed",
            fragments=parsed.unparsed_fragments,
            records=(record,),
            raw_text=record.raw_text,
        )
    macro = taxonomy.subtopic_to_macro()[parsed.labels[0]]
    return StrategyResult(
        labels=(macro,),
        calls=1,
        status="ok",
        fragments=parsed.unparsed_fragments,
        records=(record,),
        raw_text=record.raw_text,
    )


def classify_iterative(
    doc: Document, taxonomy: Taxonomy, config: StrategyConfig, pool: BackendPool
) -> StrategyResult:
    """Per-area subtopic-or-None probing, then one forced choice.

    Stage A asks once per macro area whether any of its subtopics fits,
    offering the literal option None. Areas answering with a subtopic
    survive. Stage B forces one choice among the survivors. With K areas and
    at least one survivor that is K+1 calls; zero survivors fall back to one
    zero-shot call over the areas (still K+1, flagged); a single survivor
    skips Stage B only when force_final_choice is off.
    """
    _require_hierarchy(taxonomy, "iterative")
    reserved = [lab.display_name for lab in taxonomy.labels if lab.display_name == NONE_OPTION]
    reserved += [
        sub.display_name
        for subs in taxonomy.hierarchy.values()
        for sub in subs
        if sub.display_name == NONE_OPTION
    ]
    if reserved:
        raise StrategyError(
            f"taxonomy {taxonomy.name!r} has a label displayed as {NONE_OPTION!r}, "
            "which iterative Stage A reserves"
        )
    stage_a = pool.template(config.template_for("stage_a", prompts.ITERATIVE_STAGE_A.id))
    stage_b = pool.template(config.template_for("stage_b", prompts.ITERATIVE_STAGE_B.id))
    fallback_tmpl = pool.template(
        config.template_for("fallback", prompts.ZERO_SHOT_EXCLUSIVE.id)
    )

    @dataclass(frozen=True)
    class _Option:
        id: str
        display_name: str
        description: str = ""

    records: list[CompletionRecord] = []
    fragments: list[str] = []
    survivors: list[str] = []
    for macro_id in taxonomy.macro_areas():
        options = list(taxonomy.hierarchy[macro_id]) + [_Option(_NONE_ID, NONE_OPTION)]
        messages = render(stage_a, doc, options)
        record = pool.complete(config.backend, messages)
        records.append(record)
        parsed = match_tokens(
            record.raw_text, [(o.id, o.display_name) for o in options], cap=1
        )
        fragments.extend(parsed.unparsed_fragments)
        # Unparseable Stage-A answers count as non-survivors, same as None.
        if parsed.parse_status != "failed" and parsed.labels[0] != _NONE_ID:
            survivors.append(macro_id)

    if not survivors:
        macro_labels = [taxonomy.label_by_id(mid) for mid in taxonomy.macro_areas()]
        messages = render(fallback_tmpl, doc, macro_labels)
        record = pool.complete(config.backend, messages)
        records.append(record)
        parsed = match_tokens(
            record.raw_text, [(lab.id, lab.display_name) for lab in macro_labels], cap=1
        )
        fragments.extend(parsed.unparsed_fragments)
        return StrategyResult(
            labels=parsed.labels,
            calls=len(records),
            status="failed" if parsed.parse_status == "failed" else "ok",
            fragments=tuple(fragments),
            records=tuple(records),
            fallback=True,
            raw_text=record.raw_text,
        )

    if len(survivors) == 1 and not config.force_final_choice:
        return StrategyResult(
            labels=(survivors[0],),
            calls=len(records),
            status="ok",
            fragments=tuple(fragments),
            records=tuple(records),
            survivors=tuple(survivors),
        )

    survivor_labels = [taxonomy.label_by_id(mid) for mid in survivors]
    messages = render(stage_b, doc, survivor_labels)
    record = pool.complete(config.backend, messages)
    records.append(record)
    parsed = match_tokens(
        record.raw_text, [(lab.id, lab.display_name) for lab in survivor_labels], cap=1
    )
    fragments.extend(parsed.unparsed_fragments)
    return StrategyResult(
        labels=parsed.labels,
        calls=len(records),
        status="failed" if parsed.parse_status == "failed" else "ok",
        fragments=tuple(fragments),
        records=tuple(records),
        survivors=tuple(survivors),
        raw_text=record.raw_text,
    )


_CLASSIFIERS = {
    "zero_shot": classify_zero_shot,
    "direct": classify_direct,
    "iterative": classify_iterative,
}


def classify(
    doc: Document, taxonomy: Taxonomy, config: StrategyConfig, pool: BackendPool
) -> StrategyResult:
    return _CLASSIFIERS[config.kind](doc, taxonomy, config, pool)


# ------------------------------------------------------------- crowd run


def _load_journal(path: Path) -> dict[tuple[str, str], dict]:
    done: dict[tuple[str, str], dict] = {}
    if not path.exists():
        return done
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            entry = json.loads(line)
            done[(entry["doc_id"], entry["config_id"])] = entry
    return done


def run_crowd(
    corpus: Corpus,
    configs: list[StrategyConfig],
    pool: BackendPool,
    journal_path: str | Path | None = None,
    outage_stop_after: int = 3,
) -> list[CrowdResult]:
    """Run every (document, config) pair and merge candidates per document.

    Completed pairs (including parse failures) are journaled and skipped on
    re-run; backend-unavailable pairs are not journaled, so a resumed run
    retries them. After outage_stop_after consecutive backend failures the
    run stops; the journal already holds all finished work.
    """
    if not configs:
        raise StrategyError("run_crowd needs at least one strategy config")
    ids = [cfg.config_id for cfg in configs]
    if len(set(ids)) != len(ids):
        raise StrategyError("duplicate strategy configs in crowd")
    journal_path = Path(journal_path) if journal_path else None
    done = _load_journal(journal_path) if journal_path else {}

    entries: dict[tuple[str, str], dict] = dict(done)
    consecutive_failures = 0
    for doc in corpus.documents:
        for cfg in configs:
            key = (doc.id, cfg.config_id)
            if key in entries:
                continue
            try:
                result = classify(doc, corpus.taxonomy, cfg, pool)
            except BackendUnavailableError as exc:
                consecutive_failures += 1
                entry = {
                    "doc_id": doc.id,
                    "config_id": cfg.config_id,
                    "backend": cfg.backend,
                    "strategy": cfg.kind,
                    "status": "backend_error",
                    "error": str(exc),
                    "labels": [],
                    "fragments": [],
                    "fallback": False,
                    "completion": "",
                    "timestamp": time.time(),
                }
                entries[key] = entry  # in-memory only: resumed runs retry it
                if consecutive_failures >= outage_stop_after:
                    raise BackendUnavailableError(
                        f"stopping after {consecutive_failures} consecutive backend "
                        "failures; journaled work is preserved",
                        attempts=exc.attempts,
                    ) from exc
                continue
            consecutive_failures = 0
            entry = {
                "doc_id": doc.id,
                "config_id": cfg.config_id,
                "backend": cfg.backend,
                "strategy": cfg.kind,
                "status": result.status,
                "labels": list(result.labels),
                "fragments": list(result.fragments),
                "fallback": result.fallback,
                "completion": result.records[-1].prompt_hash if result.records else "",
                "timestamp": time.time(),
            }
            entries[key] = entry
            if journal_path:
                with open(journal_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, ensure_ascii=False) + "\n")

    results = []
    order = {lab.id: i for i, lab in enumerate(corpus.taxonomy.labels)}
    for doc in corpus.documents:
        merged: dict[str, set[ProvenanceEntry]] = {}
        first_seen: dict[str, float] = {}
        failures: list[tuple[str, str, str]] = []
        for cfg in configs:
            entry = entries.get((doc.id, cfg.config_id))
            if entry is None:
                continue
            if entry["status"] == "backend_error":
                failures.append((entry["backend"], entry["strategy"], entry["error"]))
                continue
            if entry["status"] == "failed":
                failures.append(
                    (entry["backend"], entry["strategy"], "parse failure")
                )
                continue
            prov = ProvenanceEntry(
                backend=entry["backend"],
                strategy=entry["strategy"],
                completion=entry["completion"],
                config_id=entry["config_id"],
                fallback=entry["fallback"],
            )
            for label in entry["labels"]:
                merged.setdefault(label, set()).add(prov)
                first_seen[label] = min(
                    first_seen.get(label, entry["timestamp"]), entry["timestamp"]
                )
        candidates = tuple(
            CandidateLabel(
                doc_id=doc.id,
                label=label,
                provenance=frozenset(merged[label]),
                first_seen=first_seen[label],
            )
            for label in sorted(merged, key=lambda lab: order[lab])
        )
        results.append(
            CrowdResult(doc_id=doc.id, candidates=candidates, failures=tuple(failures))
        )
    return results


def write_crowd_jsonl(results: list[CrowdResult], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for res in results:
            fh.write(
                json.dumps(
                    {
                        "doc_id": res.doc_id,
                        "candidates": [
                            {
                                "label": cand.label,
                                "first_seen": cand.first_seen,
                                "provenance": [
                                    {
                                        "backend": p.backend,
                                        "strategy": p.strategy,
                                        "completion": p.completion,
                                        "config_id": p.config_id,
                                        "fallback": p.fallback,
                                    }
                                    for p in sorted(
                                        cand.provenance, key=lambda p: p.config_id
                                    )
                                ],
                            }
                            for cand in res.candidates
                        ],
                        "failures": [list(f) for f in res.failures],
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_crowd_jsonl(path: str | Path) -> list[CrowdResult]:
    results = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            candidates = tuple(
                CandidateLabel(
                    doc_id=obj["doc_id"],
                    label=c["label"],
                    provenance=frozenset(
                        ProvenanceEntry(
                            backend=p["backend"],
                            strategy=p["strategy"],
                            completion=p["completion"],
                            config_id=p.get("config_id", ""),
                            fallback=p.get("fallback", False),
                        )
                        for p in c["provenance"]
                    ),
                    first_seen=c["first_seen"],
                )
                for c in obj["candidates"]
            )
            results.append(
                CrowdResult(
                    doc_id=obj["doc_id"],
                    candidates=candidates,
                    failures=tuple(tuple(f) for f in obj.get("failures", [])),
                )
            )
    return results
