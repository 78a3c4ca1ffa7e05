from __future__ import annotations

import json
import sqlite3
import time

import pytest
from fastapi.testclient import TestClient

from labelforge.corpus import Corpus, Document
from labelforge.errors import ReviewConflictError, ReviewError, StoreError
from labelforge.gateway import RetryPolicy
from labelforge.server.api import create_app
from labelforge.server.cli import main
from labelforge.server.config import ServerConfig
from labelforge.server.store import SCHEMA_VERSION, STAGES, Store
from labelforge.strategies import CandidateLabel, CrowdResult, ProvenanceEntry
from labelforge.verification import Assignment, Coder

from helpers import make_backend, make_corpus, tiny3_taxonomy, multi5_taxonomy


def crowd_results(doc_ids, labels=("health", "economy")) -> list[CrowdResult]:
    prov = ProvenanceEntry(
        backend="mock", strategy="zero_shot", completion="hash0", config_id="cfg0"
    )
    return [
        CrowdResult(
            doc_id=doc_id,
            candidates=tuple(
                CandidateLabel(
                    doc_id=doc_id,
                    label=lab,
                    provenance=frozenset({prov}),
                    first_seen=1.0,
                )
                for lab in labels
            ),
            failures=(),
        )
        for doc_id in doc_ids
    ]


def seed_project(
    store: Store,
    taxonomy,
    n_docs: int = 3,
    coders: tuple[str, ...] = ("alice", "bob"),
    candidate_labels: tuple[str, ...] = ("health", "economy"),
    name: str = "study",
) -> dict:
    """Project with docs, candidates on every doc, coders, full-overlap assignments."""
    corpus = make_corpus(taxonomy, n_docs)
    project_id = store.create_project(name, taxonomy)
    store.add_documents(project_id, corpus)
    doc_ids = [d.id for d in corpus.documents]
    store.add_candidates(project_id, crowd_results(doc_ids, candidate_labels))
    tokens = {cid: f"tok-{cid}" for cid in coders}
    store.add_coders(
        project_id,
        [Coder(id=cid, display_name=cid.title()) for cid in coders],
        tokens,
    )
    store.add_assignments(
        project_id,
        [
            Assignment(coder_id=cid, doc_id=doc_id, assigned_at=1.0)
            for cid in coders
            for doc_id in doc_ids
        ],
    )
    return {"project_id": project_id, "doc_ids": doc_ids, "tokens": tokens}


def keep_only(label: str, shown=("health", "economy")) -> dict[str, str]:
    return {lab: ("keep" if lab == label else "reject") for lab in shown}


# --------------------------------------------------------------- store


def test_store_schema_survives_reopen(tmp_path) -> None:
    path = tmp_path / "s.db"
    store = Store(path)
    pid = store.create_project("p", tiny3_taxonomy())
    store.close()
    again = Store(path)
    assert again.project(pid)["name"] == "p"
    row = again._conn.execute("SELECT version FROM schema_version").fetchone()
    assert row[0] == SCHEMA_VERSION
    again.close()


def test_store_refuses_newer_schema(tmp_path) -> None:
    path = tmp_path / "s.db"
    Store(path).close()
    conn = sqlite3.connect(path)
    with conn:
        conn.execute("UPDATE schema_version SET version = 99")
    conn.close()
    with pytest.raises(StoreError, match="refusing to downgrade"):
        Store(path)


def test_project_crud(tmp_path) -> None:
    store = Store(tmp_path / "s.db")
    tax = tiny3_taxonomy()
    pid = store.create_project("alpha", tax)
    assert store.project(pid)["stage"] == STAGES[0]
    assert store.project_by_name("alpha")["id"] == pid
    assert [p["name"] for p in store.list_projects()] == ["alpha"]
    loaded = store.taxonomy(pid)
    assert loaded.content_hash() == tax.content_hash()
    store.delete_project(pid)
    assert store.list_projects() == []
    with pytest.raises(StoreError, match="no project with id"):
        store.project(pid)
    with pytest.raises(StoreError, match="no project named"):
        store.project_by_name("alpha")


def test_stage_transitions_are_forward_only(tmp_path) -> None:
    store = Store(tmp_path / "s.db")
    pid = store.create_project("p", tiny3_taxonomy())
    store.advance_stage(pid, "verifying")
    store.advance_stage(pid, "verifying")  # same stage is fine
    store.advance_stage(pid, "resolved")
    with pytest.raises(StoreError, match="forward-only"):
        store.advance_stage(pid, "ingested")
    with pytest.raises(StoreError, match="unknown stage"):
        store.advance_stage(pid, "shipped")


def test_documents_round_trip_gold_labels(tmp_path, tiny3) -> None:
    store = Store(tmp_path / "s.db")
    pid = store.create_project("p", tiny3)
    docs = [
        Document(id="g1", text="with gold", true_labels=frozenset({"health"})),
        Document(id="g2", text="without gold"),
    ]
    store.add_documents(pid, Corpus(documents=docs, taxonomy=tiny3))
    corpus = store.load_corpus(pid)
    assert corpus.by_id["g1"].true_labels == frozenset({"health"})
    assert corpus.by_id["g2"].true_labels is None
    assert store.document(pid, "g1")["text"] == "with gold"
    with pytest.raises(StoreError, match="no document"):
        store.document(pid, "nope")


def test_candidates_round_trip_with_provenance(tmp_path, tiny3) -> None:
    store = Store(tmp_path / "s.db")
    seeded = seed_project(store, tiny3, n_docs=2)
    cands = store.candidates_for(seeded["project_id"])
    assert set(cands) == set(seeded["doc_ids"])
    first = cands[seeded["doc_ids"][0]]
    assert [c["label"] for c in first] == ["health", "economy"]
    assert first[0]["provenance"][0]["backend"] == "mock"
    assert first[0]["provenance"][0]["config_id"] == "cfg0"


def test_submit_review_flips_assignment(tmp_path, tiny3) -> None:
    store = Store(tmp_path / "s.db")
    seeded = seed_project(store, tiny3)
    pid, doc = seeded["project_id"], seeded["doc_ids"][0]
    row = store.submit_review(pid, "alice", doc, keep_only("health"))
    assert row["doc_id"] == doc
    assert json.loads(row["decisions_json"]) == [["health", "keep"], ["economy", "reject"]]
    statuses = {
        (a["coder_id"], a["doc_id"]): a["status"] for a in store.assignments_for(pid)
    }
    assert statuses[("alice", doc)] == "submitted"
    assert statuses[("bob", doc)] == "pending"


def test_submit_review_idempotency_key_returns_same_row(tmp_path, tiny3) -> None:
    store = Store(tmp_path / "s.db")
    seeded = seed_project(store, tiny3)
    pid, doc = seeded["project_id"], seeded["doc_ids"][0]
    first = store.submit_review(
        pid, "alice", doc, keep_only("health"), idempotency_key="req-1"
    )
    replay = store.submit_review(
        pid, "alice", doc, keep_only("economy"), idempotency_key="req-1"
    )
    assert replay["id"] == first["id"]
    assert replay["decisions_json"] == first["decisions_json"]
    assert len(store.reviews_for(pid)) == 1


def test_submit_review_validates_cover_and_verdicts(tmp_path, tiny3) -> None:
    store = Store(tmp_path / "s.db")
    seeded = seed_project(store, tiny3)
    pid, doc = seeded["project_id"], seeded["doc_ids"][0]
    with pytest.raises(ReviewError, match="missing=\\['economy'\\]"):
        store.submit_review(pid, "alice", doc, {"health": "keep"})
    with pytest.raises(ReviewError, match="extra=\\['defense'\\]"):
        store.submit_review(
            pid, "alice", doc,
            {"health": "keep", "economy": "keep", "defense": "keep"},
        )
    with pytest.raises(ReviewError, match="keep/reject"):
        store.submit_review(pid, "alice", doc, {"health": "maybe", "economy": "keep"})
    with pytest.raises(ReviewError, match="no assignment"):
        store.submit_review(pid, "carol", doc, keep_only("health"))


def test_submit_review_conflict_then_supersede(tmp_path, tiny3) -> None:
    store = Store(tmp_path / "s.db")
    seeded = seed_project(store, tiny3)
    pid, doc = seeded["project_id"], seeded["doc_ids"][0]
    first = store.submit_review(pid, "alice", doc, keep_only("health"))
    with pytest.raises(ReviewConflictError, match="requires supersede"):
        store.submit_review(pid, "alice", doc, keep_only("economy"))
    second = store.submit_review(
        pid, "alice", doc, keep_only("economy"), supersede=True
    )
    assert second["supersedes"] == first["id"]


def test_build_review_log_resolves_from_rows(tmp_path, tiny3) -> None:
    store = Store(tmp_path / "s.db")
    seeded = seed_project(store, tiny3, n_docs=2)
    pid = seeded["project_id"]
    for doc in seeded["doc_ids"]:
        store.submit_review(pid, "alice", doc, keep_only("health"))
        store.submit_review(pid, "bob", doc, keep_only("health"))
    log = store.build_review_log(pid)
    resolutions = log.resolve_all(policy="any_reject_drops")
    assert all(r.surviving_labels == ("health",) for r in resolutions)
    store.save_resolutions(pid, resolutions)
    saved = store.resolutions_for(pid)
    assert len(saved) == 2
    assert json.loads(saved[0]["survivors_json"]) == ["health"]


def test_jobs_upsert_and_status_update(tmp_path) -> None:
    store = Store(tmp_path / "s.db")
    store.upsert_job("j1", "scale", "running", {"out": "x.jsonl"})
    assert store.job("j1")["status"] == "running"
    store.upsert_job("j1", "scale", "done", {"done": 5})
    job = store.job("j1")
    assert job["status"] == "done"
    assert json.loads(job["detail_json"]) == {"done": 5}
    assert [j["id"] for j in store.list_jobs()] == ["j1"]
    assert store.job("missing") is None


# ----------------------------------------------------------------- api


@pytest.fixture()
def open_client(tmp_path):
    """App with no operator token: operator endpoints are open."""
    store = Store(tmp_path / "api.db")
    client = TestClient(create_app(store, ServerConfig()))
    yield client, store
    store.close()


def taxonomy_payload() -> dict:
    return {
        "name": "tiny3",
        "exclusive": True,
        "labels": [
            {"id": "health", "name": "Health"},
            {"id": "economy", "name": "Economy"},
            {"id": "defense", "name": "Defense"},
        ],
    }


def test_api_project_lifecycle(open_client) -> None:
    client, _ = open_client
    created = client.post(
        "/api/v1/projects", json={"name": "demo", "taxonomy": taxonomy_payload()}
    )
    assert created.status_code == 201
    pid = created.json()["id"]
    assert client.get(f"/api/v1/projects/{pid}").json()["name"] == "demo"
    listed = client.get("/api/v1/projects").json()
    assert [p["name"] for p in listed] == ["demo"]
    assert set(listed[0]) == {"id", "name", "stage", "created_at"}
    tax = client.get(f"/api/v1/projects/{pid}/taxonomy").json()
    assert tax["exclusive"] is True
    assert [lab["id"] for lab in tax["labels"]] == ["health", "economy", "defense"]
    assert client.delete(f"/api/v1/projects/{pid}").status_code == 204
    assert client.get(f"/api/v1/projects/{pid}").status_code == 404


def test_api_create_project_rejects_bad_payload(open_client) -> None:
    client, _ = open_client
    assert client.post("/api/v1/projects", json={"name": "x"}).status_code == 400
    assert (
        client.post("/api/v1/projects", json={"taxonomy": taxonomy_payload()}).status_code
        == 400
    )


def test_api_coder_endpoints_require_coder_token(open_client, tiny3) -> None:
    client, store = open_client
    seeded = seed_project(store, tiny3)
    pid = seeded["project_id"]
    url = f"/api/v1/assignments?project={pid}&coder=alice"
    assert client.get(url).status_code == 401
    assert client.get(url + "&token=bogus").status_code == 401
    # Bob's token cannot act as alice.
    bob = {"Authorization": f"Bearer {seeded['tokens']['bob']}"}
    assert client.get(url, headers=bob).status_code == 403
    ok = client.get(url + f"&token={seeded['tokens']['alice']}")
    assert ok.status_code == 200
    rows = ok.json()
    assert len(rows) == 3
    assert all(r["status"] == "pending" for r in rows)


def test_api_token_scoped_to_project(tmp_path, tiny3) -> None:
    store = Store(tmp_path / "api.db")
    client = TestClient(create_app(store, ServerConfig()))
    first = seed_project(store, tiny3, name="one")
    second = seed_project(store, tiny3, name="two", coders=("carol",))
    url = f"/api/v1/assignments?project={second['project_id']}&coder=alice"
    drifted = client.get(
        url, headers={"Authorization": f"Bearer {first['tokens']['alice']}"}
    )
    assert drifted.status_code == 403
    assert "another project" in drifted.json()["detail"]
    store.close()


def test_api_doc_view_carries_candidates(open_client, tiny3) -> None:
    client, store = open_client
    seeded = seed_project(store, tiny3)
    pid, doc = seeded["project_id"], seeded["doc_ids"][0]
    token = seeded["tokens"]["alice"]
    plain = client.get(f"/api/v1/docs/{doc}?project={pid}&token={token}").json()
    assert plain["id"] == doc
    assert [c["label"] for c in plain["candidates"]] == ["health", "economy"]
    assert plain["candidates"][0]["display_name"] == "Health"
    assert "provenance" not in plain["candidates"][0]
    assert plain["candidates"][0]["provenance_count"] == 1
    rich = client.get(
        f"/api/v1/docs/{doc}?project={pid}&provenance=true&token={token}"
    ).json()
    assert rich["candidates"][0]["provenance"][0]["strategy"] == "zero_shot"


def review_payload(pid: int, coder: str, doc: str, kept: str, **extra) -> dict:
    return {
        "project": pid,
        "coder_id": coder,
        "doc_id": doc,
        "decisions": keep_only(kept),
        **extra,
    }


def test_api_review_submit_and_idempotent_replay(open_client, tiny3) -> None:
    client, store = open_client
    seeded = seed_project(store, tiny3)
    pid, doc = seeded["project_id"], seeded["doc_ids"][0]
    headers = {"Authorization": f"Bearer {seeded['tokens']['alice']}"}
    body = review_payload(pid, "alice", doc, "health", idempotency_key="k1")
    first = client.post("/api/v1/reviews", json=body, headers=headers)
    assert first.status_code == 201
    assert first.json()["decisions"] == {"health": "keep", "economy": "reject"}
    replay = client.post("/api/v1/reviews", json=body, headers=headers)
    assert replay.json()["record_id"] == first.json()["record_id"]
    assert len(store.reviews_for(pid)) == 1


def test_api_review_conflict_maps_to_409(open_client, tiny3) -> None:
    client, store = open_client
    seeded = seed_project(store, tiny3)
    pid, doc = seeded["project_id"], seeded["doc_ids"][0]
    headers = {"Authorization": f"Bearer {seeded['tokens']['alice']}"}
    assert (
        client.post(
            "/api/v1/reviews", json=review_payload(pid, "alice", doc, "health"),
            headers=headers,
        ).status_code
        == 201
    )
    repeat = client.post(
        "/api/v1/reviews", json=review_payload(pid, "alice", doc, "economy"),
        headers=headers,
    )
    assert repeat.status_code == 409
    assert "supersede" in repeat.json()["detail"]
    superseded = client.post(
        "/api/v1/reviews",
        json=review_payload(pid, "alice", doc, "economy", supersede=True),
        headers=headers,
    )
    assert superseded.status_code == 201
    assert superseded.json()["supersedes"] is not None


def test_api_review_validation_maps_to_400(open_client, tiny3) -> None:
    client, store = open_client
    seeded = seed_project(store, tiny3)
    pid, doc = seeded["project_id"], seeded["doc_ids"][0]
    headers = {"Authorization": f"Bearer {seeded['tokens']['alice']}"}
    bad_cover = client.post(
        "/api/v1/reviews",
        json={
            "project": pid,
            "coder_id": "alice",
            "doc_id": doc,
            "decisions": {"health": "keep"},
        },
        headers=headers,
    )
    assert bad_cover.status_code == 400
    assert "cover the candidate set" in bad_cover.json()["detail"]
    missing_key = client.post(
        "/api/v1/reviews", json={"project": pid, "coder_id": "alice"}, headers=headers
    )
    assert missing_key.status_code == 400


def test_api_progress_counts_and_rates(open_client, tiny3) -> None:
    client, store = open_client
    seeded = seed_project(store, tiny3, n_docs=2)
    pid = seeded["project_id"]
    for doc in seeded["doc_ids"]:
        store.submit_review(pid, "alice", doc, keep_only("health"))
    store.submit_review(pid, "bob", seeded["doc_ids"][0], keep_only("economy"))
    body = client.get(f"/api/v1/progress?project={pid}").json()
    per_coder = {s["coder_id"]: s for s in body["per_coder"]}
    assert per_coder["alice"]["submitted"] == 2
    assert per_coder["alice"]["pct"] == 100.0
    assert per_coder["bob"]["pct"] == 50.0
    per_label = {s["label"]: s for s in body["per_label"]}
    # health: kept twice, rejected once; economy: the mirror image.
    assert per_label["health"]["rejection_rate"] == pytest.approx(1 / 3)
    assert per_label["economy"]["rejection_rate"] == pytest.approx(2 / 3)
    assert body["totals"] == {"assignments": 4, "submitted": 3, "pct": 75.0}


def test_api_reliability_exclusive_kappa(open_client, tiny3) -> None:
    client, store = open_client
    seeded = seed_project(store, tiny3, n_docs=2)
    pid = seeded["project_id"]
    kept = ["health", "economy"]
    for doc, label in zip(seeded["doc_ids"], kept):
        store.submit_review(pid, "alice", doc, keep_only(label))
        store.submit_review(pid, "bob", doc, keep_only(label))
    body = client.get(
        f"/api/v1/reliability?project={pid}&coder_a=alice&coder_b=bob"
    ).json()
    assert body["mode"] == "exclusive"
    assert body["reviewed_overlap"] == 2
    assert body["kappa"]["value"] == pytest.approx(1.0)
    assert body["kappa"]["percent"] == pytest.approx(100.0)
    assert body["kappa"]["undefined"] is False
    assert body["per_label"] is None


def test_api_reliability_before_any_reviews(open_client, tiny3) -> None:
    client, store = open_client
    seeded = seed_project(store, tiny3, n_docs=2)
    body = client.get(
        f"/api/v1/reliability?project={seeded['project_id']}&coder_a=alice&coder_b=bob"
    ).json()
    assert body["overlap_docs"] == 2
    assert body["reviewed_overlap"] == 0
    assert body["kappa"] is None
    assert body["macro_kappa"] is None


def test_api_reliability_multilabel_per_label(open_client, multi5) -> None:
    client, store = open_client
    seeded = seed_project(store, multi5, n_docs=2, candidate_labels=("a", "b"))
    pid = seeded["project_id"]
    decisions = [
        {"a": "keep", "b": "reject"},
        {"a": "reject", "b": "keep"},
    ]
    for doc, dec in zip(seeded["doc_ids"], decisions):
        store.submit_review(pid, "alice", doc, dec)
        store.submit_review(pid, "bob", doc, dec)
    body = client.get(
        f"/api/v1/reliability?project={pid}&coder_a=alice&coder_b=bob"
    ).json()
    assert body["mode"] == "multilabel"
    assert body["kappa"] is None
    assert set(body["per_label"]) == {"a", "b"}
    assert body["per_label"]["a"]["value"] == pytest.approx(1.0)
    assert body["macro_kappa"] == pytest.approx(1.0)


def test_api_operator_token_gates_operator_endpoints(tmp_path, tiny3) -> None:
    store = Store(tmp_path / "api.db")
    config = ServerConfig(operator_token="s3cret")
    client = TestClient(create_app(store, config))
    seeded = seed_project(store, tiny3)
    assert client.get("/api/v1/projects").status_code == 403
    assert client.get("/api/v1/projects?token=s3cret").status_code == 200
    assert (
        client.get(
            "/api/v1/projects", headers={"Authorization": "Bearer s3cret"}
        ).status_code
        == 200
    )
    # The operator may act for a named coder on coder endpoints.
    url = f"/api/v1/assignments?project={seeded['project_id']}&coder=alice&token=s3cret"
    assert client.get(url).status_code == 200
    # Coder tokens still work and still cannot cross coders.
    coder_url = f"/api/v1/assignments?project={seeded['project_id']}&coder=alice"
    assert (
        client.get(
            coder_url, headers={"Authorization": f"Bearer {seeded['tokens']['alice']}"}
        ).status_code
        == 200
    )
    store.close()


def test_api_jobs_validation(open_client, tmp_path) -> None:
    client, store = open_client
    assert client.get("/api/v1/jobs/ghost").status_code == 404
    bad_kind = client.post("/api/v1/jobs", json={"kind": "nope"})
    assert bad_kind.status_code == 400
    missing = client.post("/api/v1/jobs", json={"kind": "scale"})
    assert missing.status_code == 400
    store.upsert_job("taken", "scale", "running")
    dup = client.post(
        "/api/v1/jobs",
        json={
            "kind": "scale",
            "job_id": "taken",
            "corpus": "x.jsonl",
            "taxonomy": "t.json",
            "out": "o.jsonl",
            "backend": "dead",
        },
    )
    assert dup.status_code == 409


def test_api_scale_job_reports_backend_failure(open_client, tmp_path, tiny3) -> None:
    client, store = open_client
    corpus_path = tmp_path / "corpus.jsonl"
    with open(corpus_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"id": "d1", "text": "hello"}) + "\n")
    tax_path = tmp_path / "tax.json"
    tax_path.write_text(json.dumps(taxonomy_payload()), encoding="utf-8")
    # Nothing listens on port 9; one attempt fails fast.
    dead = make_backend(
        "dead",
        base_url="http://127.0.0.1:9",
        retry=RetryPolicy(max_attempts=1, backoff_base=0.0, backoff_cap=0.0),
        timeout=2.0,
    )
    app = create_app(store, ServerConfig(backends={"dead": dead}))
    client = TestClient(app)
    launched = client.post(
        "/api/v1/jobs",
        json={
            "kind": "scale",
            "corpus": str(corpus_path),
            "taxonomy": str(tax_path),
            "out": str(tmp_path / "out.jsonl"),
            "backend": "dead",
        },
    )
    assert launched.status_code == 202
    job_id = launched.json()["job_id"]
    deadline = time.monotonic() + 30
    while time.monotonic() < deadline:
        job = store.job(job_id)
        if job and job["status"] in ("done", "failed"):
            break
        time.sleep(0.05)
    assert job["status"] == "failed"
    assert "unavailable" in json.loads(job["detail_json"])["error"]
    assert job_id in [j["id"] for j in client.get("/api/v1/jobs").json()]


def test_api_serves_static_ui(tmp_path) -> None:
    static = tmp_path / "ui"
    static.mkdir()
    (static / "index.html").write_text("<h1>review console</h1>", encoding="utf-8")
    store = Store(tmp_path / "api.db")
    client = TestClient(create_app(store, ServerConfig(static_dir=str(static))))
    page = client.get("/")
    assert page.status_code == 200
    assert "review console" in page.text
    store.close()


# ----------------------------------------------------------------- cli


def write_taxonomy_json(tmp_path) -> str:
    path = tmp_path / "tax.json"
    path.write_text(json.dumps(taxonomy_payload()), encoding="utf-8")
    return str(path)


def write_corpus_jsonl(tmp_path, rows) -> str:
    path = tmp_path / "corpus.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return str(path)


def test_cli_usage_errors_exit_2(capsys) -> None:
    assert main([]) == 2
    assert main(["ingest"]) == 2
    assert main(["reliability", "--store", "x.db", "--project", "p"]) == 2
    capsys.readouterr()


def test_cli_ingest_json_output(tmp_path, capsys) -> None:
    tax = write_taxonomy_json(tmp_path)
    corpus = write_corpus_jsonl(
        tmp_path,
        [
            {"id": "d1", "text": "one", "true_labels": ["health"]},
            {"id": "d2", "text": "two"},
            {"id": "d3", "text": ""},
        ],
    )
    out = tmp_path / "normalized.jsonl"
    code = main(
        ["ingest", "--jsonl", corpus, "--taxonomy", tax, "--out", str(out), "--json"]
    )
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload == {"documents": 2, "dropped_rows": 1, "out": str(out)}
    assert len(out.read_text().splitlines()) == 2


def test_cli_domain_errors_exit_1(tmp_path, capsys) -> None:
    tax = write_taxonomy_json(tmp_path)
    corpus = write_corpus_jsonl(tmp_path, [{"id": "d1", "text": "x", "true_labels": ["??"]}])
    code = main(["ingest", "--jsonl", corpus, "--taxonomy", tax, "--out", str(tmp_path / "o")])
    assert code == 1
    captured = capsys.readouterr()
    assert captured.err.startswith("error:")
    assert "unknown label token" in captured.err


def test_cli_metrics_json_report(tmp_path, capsys) -> None:
    tax = write_taxonomy_json(tmp_path)
    truth = write_corpus_jsonl(
        tmp_path,
        [
            {"id": "d1", "text": "a", "true_labels": ["health"]},
            {"id": "d2", "text": "b", "true_labels": ["economy"]},
        ],
    )
    pred = tmp_path / "pred.jsonl"
    pred.write_text(
        json.dumps({"id": "d1", "labels": ["health"]})
        + "\n"
        + json.dumps({"id": "d2", "labels": ["health"]})
        + "\n",
        encoding="utf-8",
    )
    code = main(
        ["metrics", "--pred", str(pred), "--truth", truth, "--taxonomy", tax, "--json"]
    )
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["schema_version"] == 1
    assert report["mode"] == "exclusive"
    assert report["accuracy"] == pytest.approx(0.5)


def test_cli_metrics_markdown_report_file(tmp_path, capsys) -> None:
    tax = write_taxonomy_json(tmp_path)
    truth = write_corpus_jsonl(tmp_path, [{"id": "d1", "text": "a", "true_labels": ["health"]}])
    pred = tmp_path / "pred.jsonl"
    pred.write_text(json.dumps({"id": "d1", "labels": ["health"]}) + "\n", encoding="utf-8")
    report_path = tmp_path / "report.md"
    code = main(
        [
            "metrics", "--pred", str(pred), "--truth", truth,
            "--taxonomy", tax, "--report", str(report_path),
        ]
    )
    assert code == 0
    assert "| Accuracy | 100.0 |" in report_path.read_text()
    assert "wrote exclusive report" in capsys.readouterr().out
    # Wrong mode flag is a usage-level domain error.
    assert (
        main(
            [
                "metrics", "--pred", str(pred), "--truth", truth,
                "--taxonomy", tax, "--mode", "multilabel",
            ]
        )
        == 1
    )


def test_cli_evaluate_carries_run_metadata(tmp_path, capsys) -> None:
    tax = write_taxonomy_json(tmp_path)
    gold = write_corpus_jsonl(
        tmp_path,
        [
            {"id": "d1", "text": "a", "true_labels": ["health"]},
            {"id": "d2", "text": "b", "true_labels": ["economy"]},
        ],
    )
    run = tmp_path / "run.jsonl"
    run.write_text(
        json.dumps({"id": "d1", "labels": ["health"], "status": "ok"})
        + "\n"
        + json.dumps({"id": "d2", "labels": [], "status": "failed"})
        + "\n",
        encoding="utf-8",
    )
    code = main(["evaluate", "--run", str(run), "--gold", gold, "--taxonomy", tax, "--json"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["metadata"]["prediction_failures"] == 1
    assert report["metadata"]["predictions"] == 2
    assert report["accuracy"] == pytest.approx(0.5)


def test_cli_export_finetune_writes_manifest(tmp_path, capsys) -> None:
    tax = write_taxonomy_json(tmp_path)
    corpus = write_corpus_jsonl(
        tmp_path,
        [{"id": f"d{i}", "text": f"doc {i}"} for i in range(5)],
    )
    resolved = tmp_path / "resolved.jsonl"
    with open(resolved, "w", encoding="utf-8") as fh:
        for i in range(5):
            fh.write(
                json.dumps(
                    {
                        "doc_id": f"d{i}",
                        "surviving_labels": ["health"],
                        "policy": "any_reject_drops",
                        "conflict": False,
                    }
                )
                + "\n"
            )
    out_dir = tmp_path / "ft"
    code = main(
        [
            "export-finetune", "--resolved", str(resolved), "--corpus", corpus,
            "--taxonomy", tax, "--ratio", "0.8", "--seed", "1",
            "--out-dir", str(out_dir), "--json",
        ]
    )
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["manifest"]["counts"] == {
        "train": 4, "test": 1, "train_docs": 4, "test_docs": 1,
        "total_docs": 5, "excluded_empty": 0,
    }
    assert (out_dir / "manifest.json").exists()
    assert (out_dir / "train.jsonl").exists()


def cli_reviewed_store(tmp_path) -> tuple[str, str]:
    """Store with a fully reviewed 2-coder project, built through the CLI."""
    from labelforge.strategies import write_crowd_jsonl

    tax = write_taxonomy_json(tmp_path)
    corpus = write_corpus_jsonl(
        tmp_path, [{"id": "d1", "text": "one"}, {"id": "d2", "text": "two"}]
    )
    candidates = tmp_path / "crowd.jsonl"
    write_crowd_jsonl(crowd_results(["d1", "d2"]), candidates)
    db = str(tmp_path / "study.db")
    code = main(
        [
            "assign", "--corpus", corpus, "--taxonomy", tax,
            "--candidates", str(candidates), "--store", db,
            "--project", "study", "--coders", "alice:Alice:expert,bob",
            "--overlap", "1.0", "--json",
        ]
    )
    assert code == 0
    store = Store(db)
    pid = store.project_by_name("study")["id"]
    kept = {"d1": "health", "d2": "economy"}
    for doc, label in kept.items():
        store.submit_review(pid, "alice", doc, keep_only(label))
        store.submit_review(pid, "bob", doc, keep_only(label))
    store.close()
    return db, tax


def test_cli_assign_reports_tokens(tmp_path, capsys) -> None:
    db, _ = cli_reviewed_store(tmp_path)
    payload = json.loads(capsys.readouterr().out)
    assert payload["assignments"] == 4  # 2 docs x 2 coders at full overlap
    coders = {c["id"]: c for c in payload["coders"]}
    assert set(coders) == {"alice", "bob"}
    assert all(c["token"] for c in coders.values())
    store = Store(db)
    pid = store.project_by_name("study")["id"]
    assert store.project(pid)["stage"] == "verifying"
    assert {c["role"] for c in store.coders_for(pid)} == {"expert", "trained"}
    store.close()


def test_cli_resolve_writes_survivors(tmp_path, capsys) -> None:
    db, _ = cli_reviewed_store(tmp_path)
    out = tmp_path / "resolved.jsonl"
    code = main(
        [
            "resolve", "--store", db, "--project", "study",
            "--policy", "any_reject_drops", "--out", str(out), "--json",
        ]
    )
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    payload = json.loads(lines[-1])
    assert payload == {"resolved": 2, "conflicts": 0, "out": str(out)}
    rows = {json.loads(l)["doc_id"]: json.loads(l) for l in out.read_text().splitlines()}
    assert rows["d1"]["surviving_labels"] == ["health"]
    assert rows["d1"]["text"] == "one"
    assert rows["d2"]["surviving_labels"] == ["economy"]


def test_cli_reliability_cohen_and_fleiss(tmp_path, capsys) -> None:
    db, _ = cli_reviewed_store(tmp_path)
    capsys.readouterr()
    code = main(
        [
            "reliability", "--store", db, "--project", "study",
            "--coder-a", "alice", "--coder-b", "bob", "--json",
        ]
    )
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["cohen"]["value"] == pytest.approx(1.0)
    assert payload["cohen"]["percent"] == pytest.approx(100.0)
    assert payload["cohen"]["n_items"] == 2

    code = main(["reliability", "--store", db, "--project", "study", "--fleiss"])
    assert code == 0
    human = capsys.readouterr().out
    assert "Fleiss kappa over 2 docs: 100.0%" in human
