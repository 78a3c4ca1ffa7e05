"""Embedded relational store: one SQLite file, one writing process.

Forward-only migrations; reviews are append-only; review submission is
atomic and idempotent via client-supplied keys.
"""

from __future__ import annotations

import json
import sqlite3
import threading
import time
from pathlib import Path
from typing import Iterable

from ..corpus import Corpus, Document, Taxonomy, _taxonomy_from_mapping
from ..errors import AssignmentError, ReviewConflictError, ReviewError, StoreError
from ..strategies import CrowdResult
from ..verification import Assignment, Coder, ReviewLog

__all__ = ["SCHEMA_VERSION", "STAGES", "Store", "migrate"]

SCHEMA_VERSION = 1

STAGES = ("ingested", "crowd_done", "verifying", "resolved", "exported", "scaling")

_MIGRATIONS: dict[int, list[str]] = {
    1: [
        """CREATE TABLE schema_version (version INTEGER NOT NULL)""",
        """CREATE TABLE projects (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            name TEXT NOT NULL UNIQUE,
            stage TEXT NOT NULL,
            taxonomy_json TEXT NOT NULL,
            config_json TEXT NOT NULL DEFAULT '{}',
            created_at REAL NOT NULL
        )""",
        """CREATE TABLE taxonomies (
            project_id INTEGER NOT NULL REFERENCES projects(id),
            content_hash TEXT NOT NULL,
            taxonomy_json TEXT NOT NULL,
            PRIMARY KEY (project_id)
        )""",
        """CREATE TABLE documents (
            project_id INTEGER NOT NULL REFERENCES projects(id),
            id TEXT NOT NULL,
            text TEXT NOT NULL,
            true_labels_json TEXT,
            source TEXT,
            PRIMARY KEY (project_id, id)
        )""",
        """CREATE TABLE candidates (
            project_id INTEGER NOT NULL REFERENCES projects(id),
            doc_id TEXT NOT NULL,
            label TEXT NOT NULL,
            provenance_json TEXT NOT NULL,
            first_seen REAL NOT NULL,
            PRIMARY KEY (project_id, doc_id, label)
        )""",
        """CREATE TABLE coders (
            project_id INTEGER NOT NULL REFERENCES projects(id),
            id TEXT NOT NULL,
            display_name TEXT NOT NULL,
            role TEXT NOT NULL,
            token TEXT NOT NULL UNIQUE,
            PRIMARY KEY (project_id, id)
        )""",
        """CREATE TABLE assignments (
            project_id INTEGER NOT NULL REFERENCES projects(id),
            coder_id TEXT NOT NULL,
            doc_id TEXT NOT NULL,
            status TEXT NOT NULL DEFAULT 'pending',
            assigned_at REAL NOT NULL,
            PRIMARY KEY (project_id, coder_id, doc_id)
        )""",
        """CREATE TABLE reviews (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            project_id INTEGER NOT NULL REFERENCES projects(id),
            coder_id TEXT NOT NULL,
            doc_id TEXT NOT NULL,
            decisions_json TEXT NOT NULL,
            submitted_at REAL NOT NULL,
            supersedes INTEGER,
            idempotency_key TEXT UNIQUE
        )""",
        """CREATE TABLE resolutions (
            project_id INTEGER NOT NULL REFERENCES projects(id),
            doc_id TEXT NOT NULL,
            survivors_json TEXT NOT NULL,
            policy TEXT NOT NULL,
            conflict INTEGER NOT NULL DEFAULT 0,
            records_json TEXT NOT NULL,
            resolved_at REAL NOT NULL,
            PRIMARY KEY (project_id, doc_id)
        )""",
        """CREATE TABLE completions (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            backend TEXT NOT NULL,
            prompt_hash TEXT NOT NULL,
            input_tokens INTEGER NOT NULL,
            output_tokens INTEGER NOT NULL,
            cost REAL,
            timestamp REAL NOT NULL
        )""",
        """CREATE TABLE jobs (
            id TEXT PRIMARY KEY,
            project_id INTEGER REFERENCES projects(id),
            kind TEXT NOT NULL,
            status TEXT NOT NULL,
            detail_json TEXT NOT NULL DEFAULT '{}',
            created_at REAL NOT NULL,
            updated_at REAL NOT NULL
        )""",
        """INSERT INTO schema_version (version) VALUES (1)""",
    ],
}


def migrate(conn: sqlite3.Connection) -> int:
    """Apply forward-only migrations; refuse stores from a newer tool."""
    conn.execute("PRAGMA foreign_keys = ON")
    have = conn.execute(
        "SELECT name FROM sqlite_master WHERE type='table' AND name='schema_version'"
    ).fetchone()
    current = 0
    if have:
        row = conn.execute("SELECT version FROM schema_version").fetchone()
        current = row[0] if row else 0
    if current > SCHEMA_VERSION:
        raise StoreError(
            f"store is at schema version {current}, this tool supports up to "
            f"{SCHEMA_VERSION}; refusing to downgrade"
        )
    for version in range(current + 1, SCHEMA_VERSION + 1):
        with conn:
            for stmt in _MIGRATIONS[version]:
                conn.execute(stmt)
            if version > 1:
                conn.execute("UPDATE schema_version SET version = ?", (version,))
    return SCHEMA_VERSION


class Store:
    """Threadsafe facade over the SQLite file. Writes are serialized."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._conn = sqlite3.connect(self.path, check_same_thread=False)
        self._conn.row_factory = sqlite3.Row
        self._conn.execute("PRAGMA journal_mode = WAL")
        self._conn.execute("PRAGMA foreign_keys = ON")
        migrate(self._conn)

    def close(self) -> None:
        self._conn.close()

    # -------------------------------------------------------- projects

    def create_project(self, name: str, taxonomy: Taxonomy, config: dict | None = None) -> int:
        tax_json = json.dumps(_taxonomy_to_mapping(taxonomy), ensure_ascii=False)
        with self._lock, self._conn:
            cur = self._conn.execute(
                "INSERT INTO projects (name, stage, taxonomy_json, config_json, created_at)"
                " VALUES (?, ?, ?, ?, ?)",
                (name, STAGES[0], tax_json, json.dumps(config or {}), time.time()),
            )
            project_id = cur.lastrowid
            self._conn.execute(
                "INSERT INTO taxonomies (project_id, content_hash, taxonomy_json)"
                " VALUES (?, ?, ?)",
                (project_id, taxonomy.content_hash(), tax_json),
            )
        return project_id

    def project(self, project_id: int) -> dict:
        row = self._conn.execute(
            "SELECT * FROM projects WHERE id = ?", (project_id,)
        ).fetchone()
        if row is None:
            raise StoreError(f"no project with id {project_id}")
        return dict(row)

    def project_by_name(self, name: str) -> dict:
        row = self._conn.execute(
            "SELECT * FROM projects WHERE name = ?", (name,)
        ).fetchone()
        if row is None:
            raise StoreError(f"no project named {name!r}")
        return dict(row)

    def list_projects(self) -> list[dict]:
        rows = self._conn.execute("SELECT * FROM projects ORDER BY id").fetchall()
        return [dict(r) for r in rows]

    def delete_project(self, project_id: int) -> None:
        with self._lock, self._conn:
            for table in (
                "resolutions",
                "reviews",
                "assignments",
                "coders",
                "candidates",
                "documents",
                "taxonomies",
            ):
                self._conn.execute(
                    f"DELETE FROM {table} WHERE project_id = ?", (project_id,)
                )
            self._conn.execute("DELETE FROM projects WHERE id = ?", (project_id,))

    def taxonomy(self, project_id: int) -> Taxonomy:
        row = self._conn.execute(
            "SELECT taxonomy_json FROM taxonomies WHERE project_id = ?", (project_id,)
        ).fetchone()
        if row is None:
            raise StoreError(f"no taxonomy for project {project_id}")
        return _taxonomy_from_mapping(json.loads(row[0]), origin=f"project {project_id}")

    def advance_stage(self, project_id: int, stage: str) -> None:
        if stage not in STAGES:
            raise StoreError(f"unknown stage {stage!r}")
        current = self.project(project_id)["stage"]
        if STAGES.index(stage) < STAGES.index(current):
            raise StoreError(
                f"stage transitions are forward-only ({current} -> {stage} refused)"
            )
        with self._lock, self._conn:
            self._conn.execute(
                "UPDATE projects SET stage = ? WHERE id = ?", (stage, project_id)
            )

    # ------------------------------------------------------- documents

    def add_documents(self, project_id: int, corpus: Corpus) -> None:
        with self._lock, self._conn:
            for doc in corpus.documents:
                labels = (
                    json.dumps(sorted(doc.true_labels))
                    if doc.true_labels is not None
                    else None
                )
                self._conn.execute(
                    "INSERT INTO documents (project_id, id, text, true_labels_json, source)"
                    " VALUES (?, ?, ?, ?, ?)",
                    (project_id, doc.id, doc.text, labels, doc.source),
                )

    def load_corpus(self, project_id: int) -> Corpus:
        taxonomy = self.taxonomy(project_id)
        rows = self._conn.execute(
            "SELECT * FROM documents WHERE project_id = ? ORDER BY rowid", (project_id,)
        ).fetchall()
        docs = [
            Document(
                id=r["id"],
                text=r["text"],
                true_labels=(
                    frozenset(json.loads(r["true_labels_json"]))
                    if r["true_labels_json"]
                    else None
                ),
                source=r["source"],
            )
            for r in rows
        ]
        return Corpus(documents=docs, taxonomy=taxonomy)

    def document(self, project_id: int, doc_id: str) -> dict:
        row = self._conn.execute(
            "SELECT * FROM documents WHERE project_id = ? AND id = ?",
            (project_id, doc_id),
        ).fetchone()
        if row is None:
            raise StoreError(f"no document {doc_id!r} in project {project_id}")
        return dict(row)

    # ------------------------------------------------------ candidates

    def add_candidates(self, project_id: int, results: Iterable[CrowdResult]) -> None:
        with self._lock, self._conn:
            for res in results:
                for cand in res.candidates:
                    prov = [
                        {
                            "backend": p.backend,
                            "strategy": p.strategy,
                            "completion": p.completion,
                            "config_id": p.config_id,
                            "fallback": p.fallback,
                        }
                        for p in sorted(cand.provenance, key=lambda p: p.config_id)
                    ]
                    self._conn.execute(
                        "INSERT OR REPLACE INTO candidates"
                        " (project_id, doc_id, label, provenance_json, first_seen)"
                        " VALUES (?, ?, ?, ?, ?)",
                        (
                            project_id,
                            res.doc_id,
                            cand.label,
                            json.dumps(prov),
                            cand.first_seen,
                        ),
                    )

    def candidates_for(self, project_id: int) -> dict[str, list[dict]]:
        rows = self._conn.execute(
            "SELECT * FROM candidates WHERE project_id = ? ORDER BY rowid", (project_id,)
        ).fetchall()
        out: dict[str, list[dict]] = {}
        for r in rows:
            out.setdefault(r["doc_id"], []).append(
                {
                    "label": r["label"],
                    "provenance": json.loads(r["provenance_json"]),
                    "first_seen": r["first_seen"],
                }
            )
        return out

    # ---------------------------------------------------------- coders

    def add_coders(self, project_id: int, coders: Iterable[Coder], tokens: dict[str, str]) -> None:
        with self._lock, self._conn:
            for coder in coders:
                self._conn.execute(
                    "INSERT INTO coders (project_id, id, display_name, role, token)"
                    " VALUES (?, ?, ?, ?, ?)",
                    (project_id, coder.id, coder.display_name, coder.role, tokens[coder.id]),
                )

    def coders_for(self, project_id: int) -> list[dict]:
        rows = self._conn.execute(
            "SELECT * FROM coders WHERE project_id = ? ORDER BY id", (project_id,)
        ).fetchall()
        return [dict(r) for r in rows]

    def coder_by_token(self, token: str) -> dict | None:
        row = self._conn.execute(
            "SELECT * FROM coders WHERE token = ?", (token,)
        ).fetchone()
        return dict(row) if row else None

    # ----------------------------------------------------- assignments

    def add_assignments(self, project_id: int, assignments: Iterable[Assignment]) -> None:
        with self._lock, self._conn:
            for a in assignments:
                self._conn.execute(
                    "INSERT INTO assignments (project_id, coder_id, doc_id, status, assigned_at)"
                    " VALUES (?, ?, ?, ?, ?)",
                    (project_id, a.coder_id, a.doc_id, a.status, a.assigned_at),
                )

    def assignments_for(self, project_id: int, coder_id: str | None = None) -> list[dict]:
        if coder_id is None:
            rows = self._conn.execute(
                "SELECT * FROM assignments WHERE project_id = ? ORDER BY rowid",
                (project_id,),
            ).fetchall()
        else:
            rows = self._conn.execute(
                "SELECT * FROM assignments WHERE project_id = ? AND coder_id = ?"
                " ORDER BY rowid",
                (project_id, coder_id),
            ).fetchall()
        return [dict(r) for r in rows]

    # --------------------------------------------------------- reviews

    def submit_review(
        self,
        project_id: int,
        coder_id: str,
        doc_id: str,
        decisions: dict[str, str],
        idempotency_key: str | None = None,
        supersede: bool = False,
    ) -> dict:
        """Atomic, idempotent review insert; flips the assignment to submitted."""
        with self._lock:
            if idempotency_key:
                row = self._conn.execute(
                    "SELECT * FROM reviews WHERE idempotency_key = ?", (idempotency_key,)
                ).fetchone()
                if row:
                    return dict(row)
            assignment = self._conn.execute(
                "SELECT * FROM assignments WHERE project_id = ? AND coder_id = ?"
                " AND doc_id = ?",
                (project_id, coder_id, doc_id),
            ).fetchone()
            if assignment is None:
                raise ReviewError(
                    f"no assignment for coder {coder_id!r} on doc {doc_id!r}"
                )
            shown = [
                r["label"]
                for r in self._conn.execute(
                    "SELECT label FROM candidates WHERE project_id = ? AND doc_id = ?"
                    " ORDER BY rowid",
                    (project_id, doc_id),
                ).fetchall()
            ]
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
            previous = self._conn.execute(
                "SELECT id FROM reviews WHERE project_id = ? AND coder_id = ?"
                " AND doc_id = ? ORDER BY id DESC LIMIT 1",
                (project_id, coder_id, doc_id),
            ).fetchone()
            if assignment["status"] == "submitted" and not supersede:
                raise ReviewConflictError(
                    f"coder {coder_id!r} already reviewed doc {doc_id!r}; "
                    "resubmission requires supersede"
                )
            ordered = json.dumps([[lab, decisions[lab]] for lab in shown])
            with self._conn:
                cur = self._conn.execute(
                    "INSERT INTO reviews (project_id, coder_id, doc_id, decisions_json,"
                    " submitted_at, supersedes, idempotency_key)"
                    " VALUES (?, ?, ?, ?, ?, ?, ?)",
                    (
                        project_id,
                        coder_id,
                        doc_id,
                        ordered,
                        time.time(),
                        previous["id"] if (previous and supersede) else None,
                        idempotency_key,
                    ),
                )
                self._conn.execute(
                    "UPDATE assignments SET status = 'submitted' WHERE project_id = ?"
                    " AND coder_id = ? AND doc_id = ?",
                    (project_id, coder_id, doc_id),
                )
            row = self._conn.execute(
                "SELECT * FROM reviews WHERE id = ?", (cur.lastrowid,)
            ).fetchone()
            return dict(row)

    def reviews_for(self, project_id: int) -> list[dict]:
        rows = self._conn.execute(
            "SELECT * FROM reviews WHERE project_id = ? ORDER BY id", (project_id,)
        ).fetchall()
        return [dict(r) for r in rows]

    # ------------------------------------------------- review-log view

    def build_review_log(self, project_id: int) -> ReviewLog:
        """Reconstruct the in-memory verification engine from store rows."""
        taxonomy = self.taxonomy(project_id)
        candidates = self.candidates_for(project_id)
        log = ReviewLog(
            candidates={doc_id: [c["label"] for c in cands] for doc_id, cands in candidates.items()},
            exclusive=taxonomy.exclusive,
        )
        assignments = [
            Assignment(
                coder_id=r["coder_id"],
                doc_id=r["doc_id"],
                status=r["status"],
                assigned_at=r["assigned_at"],
            )
            for r in self.assignments_for(project_id)
        ]
        try:
            log.add_assignments(assignments)
        except AssignmentError as exc:
            raise StoreError(f"store inconsistency: {exc}") from exc
        for r in self.reviews_for(project_id):
            # Replay directly: store rows already passed submission validation.
            from ..verification import VerificationRecord

            log.records.append(
                VerificationRecord(
                    record_id=r["id"],
                    coder_id=r["coder_id"],
                    doc_id=r["doc_id"],
                    decisions=tuple(
                        (lab, verdict) for lab, verdict in json.loads(r["decisions_json"])
                    ),
                    submitted_at=r["submitted_at"],
                    supersedes=r["supersedes"],
                )
            )
        return log

    # ----------------------------------------------------- resolutions

    def save_resolutions(self, project_id: int, resolutions) -> None:
        with self._lock, self._conn:
            for res in resolutions:
                self._conn.execute(
                    "INSERT OR REPLACE INTO resolutions"
                    " (project_id, doc_id, survivors_json, policy, conflict,"
                    "  records_json, resolved_at)"
                    " VALUES (?, ?, ?, ?, ?, ?, ?)",
                    (
                        project_id,
                        res.doc_id,
                        json.dumps(list(res.surviving_labels)),
                        res.policy_used,
                        int(res.conflict),
                        json.dumps(list(res.records)),
                        time.time(),
                    ),
                )

    def resolutions_for(self, project_id: int) -> list[dict]:
        rows = self._conn.execute(
            "SELECT * FROM resolutions WHERE project_id = ? ORDER BY rowid", (project_id,)
        ).fetchall()
        return [dict(r) for r in rows]

    # ------------------------------------------------------------ jobs

    def upsert_job(self, job_id: str, kind: str, status: str, detail: dict | None = None,
                   project_id: int | None = None) -> None:
        now = time.time()
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO jobs (id, project_id, kind, status, detail_json,"
                " created_at, updated_at) VALUES (?, ?, ?, ?, ?, ?, ?)"
                " ON CONFLICT(id) DO UPDATE SET status = excluded.status,"
                " detail_json = excluded.detail_json, updated_at = excluded.updated_at",
                (job_id, project_id, kind, status, json.dumps(detail or {}), now, now),
            )

    def job(self, job_id: str) -> dict | None:
        row = self._conn.execute("SELECT * FROM jobs WHERE id = ?", (job_id,)).fetchone()
        return dict(row) if row else None

    def list_jobs(self) -> list[dict]:
        rows = self._conn.execute("SELECT * FROM jobs ORDER BY created_at").fetchall()
        return [dict(r) for r in rows]


def _taxonomy_to_mapping(taxonomy: Taxonomy) -> dict:
    return {
        "name": taxonomy.name,
        "exclusive": taxonomy.exclusive,
        "max_labels": taxonomy.max_labels,
        "labels": [
            {
                "id": lab.id,
                "name": lab.display_name,
                "description": lab.description,
                **({"group": lab.group} if lab.group else {}),
            }
            for lab in taxonomy.labels
        ],
        "hierarchy": {
            macro: [{"id": s.id, "name": s.display_name} for s in subs]
            for macro, subs in taxonomy.hierarchy.items()
        },
    }
