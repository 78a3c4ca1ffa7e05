// In-memory stand-in for the review server, faithful to the bits of the API
// the client touches: assignment listing, doc views, review submission with
// idempotency keys and supersede, progress, reliability, jobs.

import type {
  AssignmentRow,
  DocView,
  FetchLike,
  HttpResponse,
  KappaJson,
  ProgressView,
  ReliabilityView,
  Verdict,
} from "../src/api.js";

export interface ReviewRow {
  record_id: number;
  coder_id: string;
  doc_id: string;
  decisions: Record<string, Verdict>;
  idempotency_key: string | null;
  supersedes: number | null;
}

function json(status: number, body: unknown): HttpResponse {
  return {
    ok: status >= 200 && status < 300,
    status,
    json: async () => body,
  };
}

export class FakeServer {
  docs = new Map<string, DocView>();
  assignments: AssignmentRow[] = [];
  rows: ReviewRow[] = [];
  validTokens = new Set<string>(["tok-ana"]);
  progressBody: ProgressView = {
    per_coder: [],
    per_label: [],
    totals: { assignments: 0, submitted: 0, pct: 0 },
  };
  reliabilityBody: ReliabilityView | null = null;
  jobsBody: { job_id: string; kind: string; status: string; detail: object }[] = [];

  taxonomyGroups: Record<string, string> = {};

  // Failure dials for offline scenarios.
  online = true; // when false, nothing reaches the server
  failPosts = false; // POST never reaches the server
  losePostResponses = false; // POST lands, response is lost on the way back

  get fetch(): FetchLike {
    return async (url, init) => {
      if (!this.online) throw new TypeError("failed to fetch");
      const method = init?.method ?? "GET";
      const auth = init?.headers?.["Authorization"] ?? "";
      const token = auth.startsWith("Bearer ") ? auth.slice(7) : null;
      if (!token || !this.validTokens.has(token)) {
        return json(401, { detail: "unknown token" });
      }

      if (method === "POST" && url.startsWith("/api/v1/reviews")) {
        if (this.failPosts) throw new TypeError("failed to fetch");
        const body = JSON.parse(init?.body ?? "{}");
        const out = this.submit(body);
        if (this.losePostResponses) throw new TypeError("connection reset");
        return out;
      }
      if (url.startsWith("/api/v1/assignments")) {
        return json(200, this.assignments);
      }
      const doc = url.match(/^\/api\/v1\/docs\/([^?]+)\?/);
      if (doc) {
        const view = this.docs.get(decodeURIComponent(doc[1]));
        return view ? json(200, view) : json(404, { detail: "no document" });
      }
      if (/\/taxonomy$/.test(url.split("?")[0])) {
        return json(200, this.taxonomyBody());
      }
      if (url.startsWith("/api/v1/progress")) {
        return json(200, this.progressBody);
      }
      if (url.startsWith("/api/v1/reliability")) {
        return this.reliabilityBody
          ? json(200, this.reliabilityBody)
          : json(400, { detail: "no reliability fixture" });
      }
      if (url.startsWith("/api/v1/jobs")) {
        return json(200, this.jobsBody);
      }
      return json(404, { detail: `no route ${url}` });
    };
  }

  private taxonomyBody() {
    const ids = new Set<string>();
    for (const d of this.docs.values()) for (const c of d.candidates) ids.add(c.label);
    return {
      name: "fake",
      exclusive: false,
      max_labels: null,
      labels: [...ids].map((id) => ({
        id,
        name: id,
        description: "",
        group: this.taxonomyGroups[id] ?? null,
      })),
    };
  }

  private submit(body: {
    coder_id: string;
    doc_id: string;
    decisions: Record<string, Verdict>;
    idempotency_key?: string;
    supersede?: boolean;
  }): HttpResponse {
    const key = body.idempotency_key ?? null;
    if (key !== null) {
      const seen = this.rows.find((r) => r.idempotency_key === key);
      if (seen) return json(201, this.receipt(seen));
    }
    const doc = this.docs.get(body.doc_id);
    if (!doc) return json(404, { detail: `no document ${body.doc_id}` });
    const shown = doc.candidates.map((c) => c.label);
    const missing = shown.filter((l) => !(l in body.decisions));
    const extra = Object.keys(body.decisions).filter((l) => !shown.includes(l));
    if (missing.length || extra.length) {
      return json(400, { detail: "decisions must cover the candidate set exactly" });
    }
    const previous = [...this.rows]
      .reverse()
      .find((r) => r.coder_id === body.coder_id && r.doc_id === body.doc_id);
    if (previous && !body.supersede) {
      return json(409, { detail: "already reviewed; resubmission requires supersede" });
    }
    const row: ReviewRow = {
      record_id: this.rows.length + 1,
      coder_id: body.coder_id,
      doc_id: body.doc_id,
      decisions: { ...body.decisions },
      idempotency_key: key,
      supersedes: previous && body.supersede ? previous.record_id : null,
    };
    this.rows.push(row);
    const assignment = this.assignments.find((a) => a.doc_id === body.doc_id);
    if (assignment) assignment.status = "submitted";
    return json(201, this.receipt(row));
  }

  private receipt(row: ReviewRow) {
    return {
      record_id: row.record_id,
      coder_id: row.coder_id,
      doc_id: row.doc_id,
      decisions: row.decisions,
      submitted_at: 0,
      supersedes: row.supersedes,
    };
  }

  rowsFor(docId: string): ReviewRow[] {
    return this.rows.filter((r) => r.doc_id === docId);
  }

  effectiveFor(docId: string): ReviewRow | undefined {
    return this.rowsFor(docId).at(-1);
  }
}

export function kappa(value: number | null, undef = false): KappaJson {
  return {
    value,
    percent: value === null ? null : 100 * value,
    observed: 0.9,
    expected: 0.7,
    n_items: 50,
    undefined: undef,
  };
}

export function twoDocServer(): FakeServer {
  const server = new FakeServer();
  server.docs.set("d1", {
    id: "d1",
    text: "Clinic funding and insurance premiums both moved this quarter.",
    candidates: [
      { label: "health", display_name: "Health", description: "", provenance_count: 2 },
      { label: "energy", display_name: "Energy", description: "", provenance_count: 1 },
    ],
  });
  server.docs.set("d2", {
    id: "d2",
    text: "Grid operators warned about winter capacity.",
    candidates: [
      { label: "health", display_name: "Health", description: "", provenance_count: 1 },
      { label: "energy", display_name: "Energy", description: "", provenance_count: 3 },
    ],
  });
  server.assignments = [
    { doc_id: "d1", status: "pending", assigned_at: 1 },
    { doc_id: "d2", status: "pending", assigned_at: 2 },
  ];
  return server;
}
