"""Operator command line. Each subcommand maps onto one module operation.

Exit codes: 0 success, 1 domain error (message on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
import uuid
from pathlib import Path

from ..corpus import (
    ColumnMapping,
    ingest_csv,
    ingest_jsonl,
    load_taxonomy,
    write_jsonl,
)
from ..errors import ConfigurationError, LabelForgeError
from ..gateway import CompletionJournal
from ..pipeline import (
    ScaleJob,
    evaluate_run,
    export_finetune,
    load_predictions,
    run_scale,
)
from ..prompts import default_zero_shot
from ..reports import report_to_json, report_to_markdown
from ..strategies import BackendPool, StrategyConfig, run_crowd, write_crowd_jsonl
from ..verification import Coder, ResolvedDocument, assign, fleiss_counts, fleiss_kappa
from .config import ServerConfig, load_config
from .store import Store

__all__ = ["main", "build_parser"]


def _emit(args, payload: dict, human: str) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload, ensure_ascii=False))
    else:
        print(human)


def _pool_from_config(args) -> BackendPool:
    config = load_config(args.config) if args.config else ServerConfig()
    journal = CompletionJournal(args.journal) if getattr(args, "journal", None) else None
    return BackendPool(backends=config.backends, journal=journal)


# ----------------------------------------------------------- subcommands


def _cmd_ingest(args) -> int:
    taxonomy = load_taxonomy(args.taxonomy)
    if args.csv:
        mapping = ColumnMapping(
            id_col=args.id_col,
            text_col=args.text_col,
            label_col=args.label_col,
            label_delim=args.label_delim,
        )
        corpus = ingest_csv(args.csv, mapping, taxonomy)
    else:
        corpus = ingest_jsonl(args.jsonl, taxonomy)
    write_jsonl(corpus, args.out)
    if args.store and args.project:
        store = Store(args.store)
        project_id = store.create_project(args.project, taxonomy)
        store.add_documents(project_id, corpus)
        store.close()
    _emit(
        args,
        {"documents": corpus.n, "dropped_rows": corpus.dropped_rows, "out": str(args.out)},
        f"ingested {corpus.n} documents ({corpus.dropped_rows} empty rows dropped)"
        f" -> {args.out}",
    )
    return 0


def _parse_strategies(args) -> list[StrategyConfig]:
    strategies = args.strategy or ["zero_shot"]
    backends = args.backend
    if len(backends) == 1 and len(strategies) > 1:
        backends = backends * len(strategies)
    if len(strategies) == 1 and len(backends) > 1:
        strategies = strategies * len(backends)
    if len(strategies) != len(backends):
        raise ConfigurationError(
            f"{len(strategies)} strategies vs {len(backends)} backends: "
            "counts must match (or either side be a single value)"
        )
    return [
        StrategyConfig(
            kind=kind, backend=backend, force_final_choice=not args.no_final_choice
        )
        for kind, backend in zip(strategies, backends)
    ]


def _cmd_classify(args) -> int:
    taxonomy = load_taxonomy(args.taxonomy)
    corpus = ingest_jsonl(args.corpus, taxonomy)
    configs = _parse_strategies(args)
    pool = _pool_from_config(args)
    journal_path = args.crowd_journal or f"{args.out}.journal.jsonl"
    results = run_crowd(corpus, configs, pool, journal_path=journal_path)
    write_crowd_jsonl(results, args.out)
    candidates = sum(len(r.candidates) for r in results)
    failures = sum(len(r.failures) for r in results)
    _emit(
        args,
        {
            "documents": len(results),
            "candidates": candidates,
            "failures": failures,
            "out": str(args.out),
        },
        f"classified {len(results)} docs: {candidates} candidate labels, "
        f"{failures} failures -> {args.out}",
    )
    return 0


def _parse_coders(spec: str) -> list[Coder]:
    coders = []
    for chunk in spec.split(","):
        parts = chunk.strip().split(":")
        if not parts[0]:
            raise ConfigurationError(f"bad coder spec {chunk!r}")
        coders.append(
            Coder(
                id=parts[0],
                display_name=parts[1] if len(parts) > 1 and parts[1] else parts[0],
                role=parts[2] if len(parts) > 2 else "trained",
            )
        )
    return coders


def _cmd_assign(args) -> int:
    from ..strategies import read_crowd_jsonl

    taxonomy = load_taxonomy(args.taxonomy)
    corpus = ingest_jsonl(args.corpus, taxonomy)
    coders = _parse_coders(args.coders)
    assignments = assign(
        corpus,
        coders,
        overlap_fraction=args.overlap,
        per_coder_cap=args.cap,
        seed=args.seed,
    )
    store = Store(args.store)
    project_id = store.create_project(args.project, taxonomy)
    store.add_documents(project_id, corpus)
    results = read_crowd_jsonl(args.candidates)
    store.add_candidates(project_id, results)
    tokens = {c.id: uuid.uuid4().hex for c in coders}
    store.add_coders(project_id, coders, tokens)
    store.add_assignments(project_id, assignments)
    store.advance_stage(project_id, "verifying")
    store.close()
    per_coder: dict[str, int] = {}
    for a in assignments:
        per_coder[a.coder_id] = per_coder.get(a.coder_id, 0) + 1
    token_lines = "\n".join(
        f"  {cid}: token {tokens[cid]} ({per_coder.get(cid, 0)} docs)" for cid in tokens
    )
    _emit(
        args,
        {
            "project_id": project_id,
            "assignments": len(assignments),
            "coders": [
                {"id": cid, "token": tokens[cid], "assigned": per_coder.get(cid, 0)}
                for cid in tokens
            ],
        },
        f"project {args.project!r} (id {project_id}): {len(assignments)} assignments\n"
        + token_lines,
    )
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .api import create_app

    config = load_config(args.config)
    store = Store(config.store_path)
    app = create_app(store, config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
    return 0


def _cmd_resolve(args) -> int:
    store = Store(args.store)
    project = store.project_by_name(args.project)
    project_id = project["id"]
    log = store.build_review_log(project_id)
    resolutions = log.resolve_all(policy=args.policy)
    store.save_resolutions(project_id, resolutions)
    store.advance_stage(project_id, "resolved")
    corpus = store.load_corpus(project_id)
    with open(args.out, "w", encoding="utf-8") as fh:
        for res in resolutions:
            fh.write(
                json.dumps(
                    {
                        "doc_id": res.doc_id,
                        "text": corpus.by_id[res.doc_id].text,
                        "surviving_labels": list(res.surviving_labels),
                        "policy": res.policy_used,
                        "conflict": res.conflict,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    store.close()
    conflicts = sum(1 for r in resolutions if r.conflict)
    _emit(
        args,
        {"resolved": len(resolutions), "conflicts": conflicts, "out": str(args.out)},
        f"resolved {len(resolutions)} docs ({conflicts} conflicts) -> {args.out}",
    )
    return 0


def _read_resolved(path: str | Path) -> list[ResolvedDocument]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            out.append(
                ResolvedDocument(
                    doc_id=obj["doc_id"],
                    surviving_labels=tuple(obj["surviving_labels"]),
                    policy_used=obj.get("policy", "any_reject_drops"),
                    records=(),
                    conflict=bool(obj.get("conflict", False)),
                )
            )
    return out


def _cmd_export_finetune(args) -> int:
    taxonomy = load_taxonomy(args.taxonomy)
    corpus = ingest_jsonl(args.corpus, taxonomy)
    resolved = _read_resolved(args.resolved)
    template = default_zero_shot(taxonomy.exclusive)
    result = export_finetune(
        resolved,
        corpus,
        template,
        ratio=args.ratio,
        seed=args.seed,
        out_dir=args.out_dir,
        include_empty=args.include_empty,
        per_label_replication=args.per_label_replication,
    )
    counts = result.manifest["counts"]
    _emit(
        args,
        {"manifest": result.manifest, "out_dir": str(args.out_dir)},
        f"exported {counts['train']} train / {counts['test']} test examples "
        f"-> {args.out_dir}",
    )
    return 0


def _cmd_scale(args) -> int:
    taxonomy = load_taxonomy(args.taxonomy)
    corpus = ingest_jsonl(args.corpus, taxonomy)
    pool = _pool_from_config(args)
    config = StrategyConfig(kind=args.strategy, backend=args.backend)
    job = ScaleJob(
        job_id=args.resume or args.job_id or f"scale-{uuid.uuid4().hex[:8]}",
        corpus=corpus,
        config=config,
        pool=pool,
        out_path=Path(args.out),
        checkpoint_every=args.checkpoint_every,
        max_concurrency=args.concurrency,
        probe=not args.no_probe,
    )
    summary = run_scale(job)
    _emit(
        args,
        dict(summary.__dict__),
        f"job {summary.job_id}: {summary.done} ok, {summary.failed} failed "
        f"of {summary.total} ({summary.docs_per_sec:.1f} docs/s, "
        f"cost {summary.cost:.4f})",
    )
    return 0


def _evaluate_to_report(args, metadata: dict | None = None) -> int:
    taxonomy = load_taxonomy(args.taxonomy)
    corpus = ingest_jsonl(args.truth, taxonomy)
    predictions = load_predictions(args.pred)
    if args.mode:
        actual = "exclusive" if taxonomy.exclusive else "multilabel"
        if args.mode != actual:
            raise ConfigurationError(
                f"--mode {args.mode} but taxonomy {taxonomy.name!r} is {actual}"
            )
    report = evaluate_run(predictions, corpus)
    if args.report:
        path = Path(args.report)
        if path.suffix == ".json":
            path.write_text(
                json.dumps(report_to_json(report, metadata), indent=2) + "\n",
                encoding="utf-8",
            )
        elif path.suffix == ".md":
            path.write_text(report_to_markdown(report), encoding="utf-8")
        else:
            raise ConfigurationError(f"--report must end in .json or .md, got {path.name}")
        _emit(
            args,
            {"report": str(path), "n": report.n, "mode": report.mode},
            f"wrote {report.mode} report over {report.n} docs -> {path}",
        )
    else:
        if getattr(args, "json", False):
            print(json.dumps(report_to_json(report, metadata), ensure_ascii=False))
        else:
            print(report_to_markdown(report), end="")
    return 0


def _cmd_metrics(args) -> int:
    return _evaluate_to_report(args)


def _cmd_evaluate(args) -> int:
    args.pred = args.run
    args.truth = args.gold
    args.mode = None
    predictions = load_predictions(args.run)
    failures = sum(1 for p in predictions if p.get("status") not in (None, "ok"))
    metadata = {
        "run": str(args.run),
        "gold": str(args.gold),
        "predictions": len(predictions),
        "prediction_failures": failures,
    }
    return _evaluate_to_report(args, metadata)


def _cmd_reliability(args) -> int:
    store = Store(args.store)
    project = store.project_by_name(args.project)
    project_id = project["id"]
    taxonomy = store.taxonomy(project_id)
    log = store.build_review_log(project_id)
    payload: dict = {"project": args.project}
    if args.fleiss:
        docs = [
            d
            for d in log.candidates
            if len(log.effective_records(d)) >= 2
        ]
        rater_counts = {len(log.effective_records(d)) for d in docs}
        if len(rater_counts) > 1:
            raise ConfigurationError(
                f"unequal rater counts across docs: {sorted(rater_counts)}"
            )
        ratings = {
            d: [log.reduced_category(rec.coder_id, d) for rec in log.effective_records(d)]
            for d in docs
        }
        categories = sorted({cat for rates in ratings.values() for cat in rates})
        result = fleiss_kappa(fleiss_counts(ratings, categories))
        payload["fleiss"] = {
            "value": result.value,
            "percent": result.percent,
            "n_items": result.n_items,
            "undefined": result.undefined,
        }
        human = (
            f"Fleiss kappa over {result.n_items} docs: "
            + ("not computable" if result.undefined else f"{result.percent:.1f}%")
        )
    else:
        result = log.cohen_kappa_for(args.coder_a, args.coder_b, taxonomy)
        payload["cohen"] = {
            "value": result.value,
            "percent": result.percent,
            "observed": result.observed,
            "expected": result.expected,
            "n_items": result.n_items,
            "undefined": result.undefined,
        }
        human = (
            f"Cohen kappa ({args.coder_a} vs {args.coder_b}, {result.n_items} docs): "
            + ("not computable" if result.undefined else f"{result.percent:.1f}%")
        )
    store.close()
    _emit(args, payload, human)
    return 0


# ----------------------------------------------------------------- wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="labelforge",
        description="Crowd labeling with LLM ensembles, human verification, "
        "fine-tune export, and scaled inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_json(p):
        p.add_argument("--json", action="store_true", help="machine-readable output")

    p = sub.add_parser("ingest", help="normalize a CSV/JSONL corpus")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--csv")
    src.add_argument("--jsonl")
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--out", default="corpus.jsonl")
    p.add_argument("--id-col", default="id")
    p.add_argument("--text-col", default="text")
    p.add_argument("--label-col")
    p.add_argument("--label-delim", default=";")
    p.add_argument("--store")
    p.add_argument("--project")
    add_json(p)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("classify", help="run crowd classification strategies")
    p.add_argument("--corpus", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument(
        "--strategy",
        action="append",
        choices=["zero_shot", "direct", "iterative"],
        help="repeatable; pairs up with --backend",
    )
    p.add_argument("--backend", action="append", required=True, help="repeatable")
    p.add_argument("--config", help="server TOML with backend definitions")
    p.add_argument("--out", default="crowd.jsonl")
    p.add_argument("--crowd-journal", help="resume journal (default <out>.journal.jsonl)")
    p.add_argument("--journal", help="completion journal JSONL")
    p.add_argument("--no-final-choice", action="store_true")
    add_json(p)
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("assign", help="create a project and assign docs to coders")
    p.add_argument("--corpus", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--candidates", required=True, help="crowd.jsonl from classify")
    p.add_argument("--store", required=True)
    p.add_argument("--project", required=True)
    p.add_argument("--coders", required=True, help="id[:display[:role]],...")
    p.add_argument("--overlap", type=float, default=0.0)
    p.add_argument("--cap", type=int)
    p.add_argument("--seed", type=int, default=0)
    add_json(p)
    p.set_defaults(func=_cmd_assign)

    p = sub.add_parser("serve", help="run the verification API + web UI")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("resolve", help="apply a survival policy over reviews")
    p.add_argument("--store", required=True)
    p.add_argument("--project", required=True)
    p.add_argument(
        "--policy",
        default="any_reject_drops",
        choices=["any_reject_drops", "majority_reject_drops", "unanimous_keep"],
    )
    p.add_argument("--out", default="resolved.jsonl")
    add_json(p)
    p.set_defaults(func=_cmd_resolve)

    p = sub.add_parser("export-finetune", help="write train/test instruction JSONL")
    p.add_argument("--resolved", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--ratio", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="finetune")
    p.add_argument("--include-empty", action="store_true")
    p.add_argument("--per-label-replication", action="store_true")
    add_json(p)
    p.set_defaults(func=_cmd_export_finetune)

    p = sub.add_parser("scale", help="checkpointed inference over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--backend", required=True)
    p.add_argument("--strategy", default="zero_shot",
                   choices=["zero_shot", "direct", "iterative"])
    p.add_argument("--config", help="server TOML with backend definitions")
    p.add_argument("--out", default="predictions.jsonl")
    p.add_argument("--job-id")
    p.add_argument("--resume", metavar="JOB_ID", help="continue an interrupted job")
    p.add_argument("--checkpoint-every", type=int, default=100)
    p.add_argument("--concurrency", type=int, default=1)
    p.add_argument("--journal", help="completion journal JSONL")
    p.add_argument("--no-probe", action="store_true")
    add_json(p)
    p.set_defaults(func=_cmd_scale)

    p = sub.add_parser("metrics", help="evaluate predictions against gold labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--mode", choices=["exclusive", "multilabel"])
    p.add_argument("--report", help="output path (.json or .md); default stdout")
    add_json(p)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("evaluate", help="evaluate a scale run against a gold corpus")
    p.add_argument("--run", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--report")
    add_json(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("reliability", help="inter-coder agreement statistics")
    p.add_argument("--store", required=True)
    p.add_argument("--project", required=True)
    p.add_argument("--coder-a")
    p.add_argument("--coder-b")
    p.add_argument("--fleiss", action="store_true")
    add_json(p)
    p.set_defaults(func=_cmd_reliability)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "reliability" and not args.fleiss:
            if not (args.coder_a and args.coder_b):
                parser.error("reliability needs --coder-a and --coder-b (or --fleiss)")
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except LabelForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
