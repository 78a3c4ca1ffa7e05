// Typed client for the /api/v1 JSON API. The coder/operator token travels
// as a bearer header; nothing else leaves the page.

export interface TaxonomyLabel {
  id: string;
  name: string;
  description: string;
  group: string | null;
}

export interface TaxonomyView {
  name: string;
  exclusive: boolean;
  max_labels: number | null;
  labels: TaxonomyLabel[];
}

export interface AssignmentRow {
  doc_id: string;
  status: "pending" | "submitted";
  assigned_at: number;
}

export interface CandidateChip {
  label: string;
  display_name: string;
  description: string;
  provenance_count: number;
}

export interface DocView {
  id: string;
  text: string;
  candidates: CandidateChip[];
}

export type Verdict = "keep" | "reject";

export interface ReviewPayload {
  project: number;
  coder_id: string;
  doc_id: string;
  decisions: Record<string, Verdict>;
  idempotency_key?: string;
  supersede?: boolean;
}

export interface ReviewReceipt {
  record_id: number;
  coder_id: string;
  doc_id: string;
  decisions: Record<string, Verdict>;
  submitted_at: number;
  supersedes: number | null;
}

export interface KappaJson {
  value: number | null;
  percent: number | null;
  observed: number;
  expected: number;
  n_items: number;
  undefined: boolean;
}

export interface ReliabilityView {
  mode: "exclusive" | "multilabel";
  overlap_docs: number;
  reviewed_overlap: number;
  kappa: KappaJson | null;
  per_label: Record<string, KappaJson> | null;
  macro_kappa: number | null;
}

export interface CoderProgress {
  coder_id: string;
  assigned: number;
  submitted: number;
  pct: number;
}

export interface LabelProgress {
  label: string;
  keep: number;
  reject: number;
  rejection_rate: number;
}

export interface ProgressView {
  per_coder: CoderProgress[];
  per_label: LabelProgress[];
  totals: { assignments: number; submitted: number; pct: number };
}

export interface JobRow {
  job_id: string;
  kind: string;
  status: string;
  detail: Record<string, unknown>;
}

// Minimal response surface so tests can fake fetch without a Response shim.
export interface HttpResponse {
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string }
) => Promise<HttpResponse>;

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

// Transport-level failure (offline, DNS, aborted). Retryable.
export class NetworkError extends Error {
  constructor(cause: unknown) {
    super(String(cause));
    this.name = "NetworkError";
  }
}

const defaultFetch: FetchLike = (url, init) => fetch(url, init);

export class ApiClient {
  constructor(
    private token: string | null = null,
    private fetchFn: FetchLike = defaultFetch,
    private base = "/api/v1"
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = {};
    if (body !== undefined) headers["Content-Type"] = "application/json";
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    let res: HttpResponse;
    try {
      res = await this.fetchFn(this.base + path, {
        method,
        headers,
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new NetworkError(err);
    }
    if (!res.ok) {
      let detail = `status ${res.status}`;
      try {
        const data = (await res.json()) as { detail?: unknown };
        if (data && typeof data.detail === "string") detail = data.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  assignments(project: number, coder: string): Promise<AssignmentRow[]> {
    return this.request("GET", `/assignments?project=${project}&coder=${encodeURIComponent(coder)}`);
  }

  doc(project: number, docId: string): Promise<DocView> {
    return this.request("GET", `/docs/${encodeURIComponent(docId)}?project=${project}`);
  }

  taxonomy(project: number): Promise<TaxonomyView> {
    return this.request("GET", `/projects/${project}/taxonomy`);
  }

  submitReview(payload: ReviewPayload): Promise<ReviewReceipt> {
    return this.request("POST", "/reviews", payload);
  }

  progress(project: number): Promise<ProgressView> {
    return this.request("GET", `/progress?project=${project}`);
  }

  reliability(project: number, coderA: string, coderB: string): Promise<ReliabilityView> {
    return this.request(
      "GET",
      `/reliability?project=${project}&coder_a=${encodeURIComponent(coderA)}&coder_b=${encodeURIComponent(coderB)}`
    );
  }

  jobs(): Promise<JobRow[]> {
    return this.request("GET", "/jobs");
  }
}
