"""HTTP JSON API under /api/v1, plus static hosting for the web client.

Coders authenticate with per-coder capability tokens (carried in review
links); an optional operator token unlocks project-wide views. Suitable for
trusted research teams, not the open internet.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from pathlib import Path

from fastapi import Body, FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from ..corpus import ingest_jsonl, load_taxonomy, _taxonomy_from_mapping
from ..errors import (
    LabelForgeError,
    NotReadyError,
    ReliabilityError,
    ReviewConflictError,
    ReviewError,
    StoreError,
)
from ..pipeline import ScaleJob, run_scale
from ..strategies import BackendPool, StrategyConfig, run_crowd, write_crowd_jsonl
from .config import ServerConfig
from .store import Store

__all__ = ["create_app"]

API = "/api/v1"


def _kappa_json(result) -> dict:
    return {
        "value": result.value,
        "percent": result.percent,
        "observed": result.observed,
        "expected": result.expected,
        "n_items": result.n_items,
        "undefined": result.undefined,
    }


def create_app(store: Store, config: ServerConfig | None = None) -> FastAPI:
    config = config or ServerConfig()
    app = FastAPI(title="labelforge", version="1")

    def _token(request: Request) -> str | None:
        auth = request.headers.get("Authorization", "")
        if auth.startswith("Bearer "):
            return auth[len("Bearer ") :]
        return request.query_params.get("token")

    def _is_operator(request: Request) -> bool:
        if config.operator_token is None:
            return True  # open mode for trusted setups
        return _token(request) == config.operator_token

    def _require_operator(request: Request) -> None:
        if not _is_operator(request):
            raise HTTPException(status_code=403, detail="operator token required")

    def _require_coder(request: Request, project_id: int, coder_id: str | None = None) -> dict:
        """Resolve the token to a coder row scoped to this project."""
        if config.operator_token is not None and _token(request) == config.operator_token:
            if coder_id is None:
                raise HTTPException(status_code=400, detail="coder id required")
            rows = [c for c in store.coders_for(project_id) if c["id"] == coder_id]
            if not rows:
                raise HTTPException(status_code=404, detail=f"no coder {coder_id!r}")
            return rows[0]
        token = _token(request)
        if not token:
            raise HTTPException(status_code=401, detail="missing token")
        coder = store.coder_by_token(token)
        if coder is None:
            raise HTTPException(status_code=401, detail="unknown token")
        if coder["project_id"] != project_id:
            raise HTTPException(status_code=403, detail="token is for another project")
        if coder_id is not None and coder["id"] != coder_id:
            raise HTTPException(status_code=403, detail="token is for another coder")
        return coder

    @app.exception_handler(LabelForgeError)
    async def _domain_error(request: Request, exc: LabelForgeError):
        status = 400
        if isinstance(exc, ReviewConflictError) or isinstance(exc, NotReadyError):
            status = 409
        elif isinstance(exc, StoreError) and str(exc).startswith("no "):
            status = 404
        elif isinstance(exc, ReliabilityError):
            status = 422
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    # -------------------------------------------------------- projects

    @app.get(f"{API}/projects")
    def list_projects(request: Request):
        _require_operator(request)
        return [
            {k: p[k] for k in ("id", "name", "stage", "created_at")}
            for p in store.list_projects()
        ]

    @app.post(f"{API}/projects", status_code=201)
    def create_project(request: Request, payload: dict = Body(...)):
        _require_operator(request)
        name = payload.get("name")
        taxonomy = payload.get("taxonomy")
        if not name or not isinstance(taxonomy, dict):
            raise HTTPException(
                status_code=400, detail="payload needs name and taxonomy object"
            )
        tax = _taxonomy_from_mapping(taxonomy, origin=f"project {name!r}")
        project_id = store.create_project(name, tax, payload.get("config"))
        return store.project(project_id)

    @app.get(f"{API}/projects/{{project_id}}")
    def get_project(request: Request, project_id: int):
        _require_operator(request)
        return store.project(project_id)

    @app.delete(f"{API}/projects/{{project_id}}", status_code=204)
    def delete_project(request: Request, project_id: int):
        _require_operator(request)
        store.project(project_id)  # 404 if absent
        store.delete_project(project_id)

    @app.get(f"{API}/projects/{{project_id}}/taxonomy")
    def get_taxonomy(request: Request, project_id: int):
        tax = store.taxonomy(project_id)
        return {
            "name": tax.name,
            "exclusive": tax.exclusive,
            "max_labels": tax.max_labels,
            "labels": [
                {
                    "id": lab.id,
                    "name": lab.display_name,
                    "description": lab.description,
                    "group": lab.group,
                }
                for lab in tax.labels
            ],
        }

    # ----------------------------------------------------- assignments

    @app.get(f"{API}/assignments")
    def list_assignments(request: Request, project: int, coder: str):
        _require_coder(request, project, coder)
        rows = store.assignments_for(project, coder)
        return [
            {"doc_id": r["doc_id"], "status": r["status"], "assigned_at": r["assigned_at"]}
            for r in rows
        ]

    @app.get(f"{API}/docs/{{doc_id}}")
    def get_doc(request: Request, doc_id: str, project: int, provenance: bool = False):
        _require_coder(request, project)
        doc = store.document(project, doc_id)
        tax = store.taxonomy(project)
        by_id = {lab.id: lab for lab in tax.labels}
        candidates = []
        for cand in store.candidates_for(project).get(doc_id, []):
            lab = by_id.get(cand["label"])
            entry = {
                "label": cand["label"],
                "display_name": lab.display_name if lab else cand["label"],
                "description": lab.description if lab else "",
                "provenance_count": len(cand["provenance"]),
            }
            if provenance:
                entry["provenance"] = cand["provenance"]
            candidates.append(entry)
        return {"id": doc["id"], "text": doc["text"], "candidates": candidates}

    @app.post(f"{API}/reviews", status_code=201)
    def post_review(request: Request, payload: dict = Body(...)):
        for key in ("project", "coder_id", "doc_id", "decisions"):
            if key not in payload:
                raise HTTPException(status_code=400, detail=f"payload needs {key!r}")
        project_id = int(payload["project"])
        _require_coder(request, project_id, payload["coder_id"])
        if not isinstance(payload["decisions"], dict):
            raise HTTPException(status_code=400, detail="decisions must be an object")
        row = store.submit_review(
            project_id,
            payload["coder_id"],
            payload["doc_id"],
            payload["decisions"],
            idempotency_key=payload.get("idempotency_key"),
            supersede=bool(payload.get("supersede", False)),
        )
        return {
            "record_id": row["id"],
            "coder_id": row["coder_id"],
            "doc_id": row["doc_id"],
            "decisions": dict(json.loads(row["decisions_json"])),
            "submitted_at": row["submitted_at"],
            "supersedes": row["supersedes"],
        }

    # -------------------------------------------------------- insights

    @app.get(f"{API}/progress")
    def progress(request: Request, project: int):
        _require_operator(request)
        assignments = store.assignments_for(project)
        per_coder: dict[str, dict] = {}
        for a in assignments:
            slot = per_coder.setdefault(
                a["coder_id"], {"coder_id": a["coder_id"], "assigned": 0, "submitted": 0}
            )
            slot["assigned"] += 1
            if a["status"] == "submitted":
                slot["submitted"] += 1
        for slot in per_coder.values():
            slot["pct"] = (
                100.0 * slot["submitted"] / slot["assigned"] if slot["assigned"] else 0.0
            )
        label_stats: dict[str, dict] = {}
        for r in store.reviews_for(project):
            for label, verdict in json.loads(r["decisions_json"]):
                slot = label_stats.setdefault(
                    label, {"label": label, "keep": 0, "reject": 0}
                )
                slot[verdict] += 1
        for slot in label_stats.values():
            total = slot["keep"] + slot["reject"]
            slot["rejection_rate"] = slot["reject"] / total if total else 0.0
        submitted = sum(1 for a in assignments if a["status"] == "submitted")
        return {
            "per_coder": sorted(per_coder.values(), key=lambda s: s["coder_id"]),
            "per_label": sorted(label_stats.values(), key=lambda s: s["label"]),
            "totals": {
                "assignments": len(assignments),
                "submitted": submitted,
                "pct": 100.0 * submitted / len(assignments) if assignments else 0.0,
            },
        }

    @app.get(f"{API}/reliability")
    def reliability(request: Request, project: int, coder_a: str, coder_b: str):
        _require_operator(request)
        log = store.build_review_log(project)
        tax = store.taxonomy(project)
        overlap = log.overlap_docs(coder_a, coder_b)
        reviewed = [
            d
            for d in overlap
            if log._latest_record(coder_a, d) and log._latest_record(coder_b, d)
        ]
        if not reviewed:
            return {
                "mode": "exclusive" if tax.exclusive else "multilabel",
                "overlap_docs": len(overlap),
                "reviewed_overlap": 0,
                "kappa": None,
                "per_label": None,
                "macro_kappa": None,
            }
        body: dict = {
            "mode": "exclusive" if tax.exclusive else "multilabel",
            "overlap_docs": len(overlap),
            "reviewed_overlap": len(reviewed),
        }
        if tax.exclusive:
            pairs = [
                (log.reduced_category(coder_a, d), log.reduced_category(coder_b, d))
                for d in reviewed
            ]
            from ..verification import cohen_kappa

            body["kappa"] = _kappa_json(cohen_kappa(pairs))
            body["per_label"] = None
            body["macro_kappa"] = None
        else:
            per_label, macro = log.per_label_kappa(coder_a, coder_b, tax)
            body["kappa"] = None
            body["per_label"] = {lab: _kappa_json(k) for lab, k in per_label.items()}
            body["macro_kappa"] = macro
        return body

    # ------------------------------------------------------------ jobs

    @app.get(f"{API}/jobs")
    def list_jobs(request: Request):
        _require_operator(request)
        return store.list_jobs()

    @app.get(f"{API}/jobs/{{job_id}}")
    def get_job(request: Request, job_id: str):
        _require_operator(request)
        job = store.job(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no job {job_id!r}")
        return job

    @app.post(f"{API}/jobs", status_code=202)
    def launch_job(request: Request, payload: dict = Body(...)):
        """Start a crowd or scale run as a server-owned background task."""
        _require_operator(request)
        kind = payload.get("kind")
        if kind not in ("crowd", "scale"):
            raise HTTPException(status_code=400, detail="kind must be crowd or scale")
        for key in ("corpus", "taxonomy", "out"):
            if key not in payload:
                raise HTTPException(status_code=400, detail=f"payload needs {key!r}")
        job_id = payload.get("job_id") or f"{kind}-{uuid.uuid4().hex[:8]}"
        if store.job(job_id) is not None:
            raise HTTPException(status_code=409, detail=f"job {job_id!r} exists")
        taxonomy = load_taxonomy(payload["taxonomy"])
        corpus = ingest_jsonl(payload["corpus"], taxonomy)
        pool = BackendPool(backends=config.backends)
        store.upsert_job(job_id, kind, "running", {"out": payload["out"]})

        def _run():
            try:
                if kind == "scale":
                    cfg = StrategyConfig(
                        kind=payload.get("strategy", "zero_shot"),
                        backend=payload["backend"],
                    )
                    job = ScaleJob(
                        job_id=job_id,
                        corpus=corpus,
                        config=cfg,
                        pool=pool,
                        out_path=Path(payload["out"]),
                        checkpoint_every=int(payload.get("checkpoint_every", 100)),
                        max_concurrency=int(payload.get("max_concurrency", 1)),
                    )
                    summary = run_scale(job)
                    store.upsert_job(job_id, kind, "done", summary.__dict__)
                else:
                    configs = [
                        StrategyConfig(kind=c["strategy"], backend=c["backend"])
                        for c in payload.get("configs", [])
                    ]
                    results = run_crowd(
                        corpus,
                        configs,
                        pool,
                        journal_path=str(payload["out"]) + ".journal.jsonl",
                    )
                    write_crowd_jsonl(results, payload["out"])
                    store.upsert_job(
                        job_id, kind, "done", {"docs": len(results), "out": payload["out"]}
                    )
            except Exception as exc:  # background task: report, never crash the server
                store.upsert_job(job_id, kind, "failed", {"error": str(exc)})

        threading.Thread(target=_run, name=f"labelforge-{job_id}", daemon=True).start()
        return {"job_id": job_id, "status": "running", "started_at": time.time()}

    # ---------------------------------------------------------- static

    if config.static_dir and Path(config.static_dir).is_dir():
        app.mount("/", StaticFiles(directory=config.static_dir, html=True), name="ui")

    return app
