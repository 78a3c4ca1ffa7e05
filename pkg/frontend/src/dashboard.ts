import { ApiClient, NetworkError } from "./api.js";
import type { JobRow, ProgressView, ReliabilityView } from "./api.js";
import { formatClock, formatKappa, formatPercent } from "./format.js";

export interface DashboardOptions {
  project: number;
  coderA?: string;
  coderB?: string;
  pollMs?: number;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

/** Operator view: per-coder completion, per-label rejection rates, agreement
 * on the overlap set, and background job status. Polls; when the server stops
 * answering it keeps the last numbers on screen behind a stale banner. */
export class Dashboard {
  private progress: ProgressView | null = null;
  private reliability: ReliabilityView | null = null;
  private jobs: JobRow[] = [];
  private lastFetch: number | null = null;
  private stale = false;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
    private opts: DashboardOptions
  ) {}

  async start(): Promise<void> {
    await this.refresh();
    const ms = this.opts.pollMs ?? 5000;
    this.timer = setInterval(() => void this.refresh(), ms);
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }

  private coderPair(): [string, string] | null {
    if (this.opts.coderA && this.opts.coderB) return [this.opts.coderA, this.opts.coderB];
    const coders = this.progress?.per_coder ?? [];
    if (coders.length >= 2) return [coders[0].coder_id, coders[1].coder_id];
    return null;
  }

  async refresh(): Promise<void> {
    try {
      this.progress = await this.api.progress(this.opts.project);
      const pair = this.coderPair();
      this.reliability = pair
        ? await this.api.reliability(this.opts.project, pair[0], pair[1])
        : null;
      this.jobs = await this.api.jobs();
      this.lastFetch = Date.now();
      this.stale = false;
    } catch (err) {
      if (!(err instanceof NetworkError)) throw err;
      this.stale = true; // keep showing the numbers we have
    }
    this.render();
  }

  private render(): void {
    this.root.textContent = "";
    const view = el("div", "dashboard");

    const banner = el(
      "div",
      "stale-banner",
      this.lastFetch === null
        ? "Server unreachable; nothing fetched yet."
        : `Server unreachable; showing data from ${formatClock(this.lastFetch)}.`
    );
    banner.hidden = !this.stale;
    view.append(banner);

    const p = this.progress;
    if (p) {
      const totals = el("section", "totals");
      totals.append(
        el("h2", "", "Progress"),
        el(
          "p",
          "totals-line",
          `${p.totals.submitted} of ${p.totals.assignments} reviews in`
        )
      );
      const bar = el("div", "bar");
      const fill = el("div", "bar-fill");
      fill.style.width = `${p.totals.pct.toFixed(1)}%`;
      bar.append(fill);
      totals.append(bar, el("span", "totals-pct", `${p.totals.pct.toFixed(1)}%`));
      view.append(totals);

      const coders = el("table", "coders");
      for (const c of p.per_coder) {
        const tr = el("tr");
        tr.append(
          el("td", "coder-id", c.coder_id),
          el("td", "", `${c.submitted}/${c.assigned}`),
          el("td", "coder-pct", `${c.pct.toFixed(1)}%`)
        );
        coders.append(tr);
      }
      view.append(coders);

      const labels = el("table", "labels");
      for (const l of p.per_label) {
        const tr = el("tr");
        tr.append(
          el("td", "label-id", l.label),
          el("td", "", `${l.keep} keep / ${l.reject} reject`),
          el("td", "rejection-rate", formatPercent(l.rejection_rate))
        );
        labels.append(tr);
      }
      view.append(labels);
    }

    view.append(this.kappaPanel());

    if (this.jobs.length > 0) {
      const jobs = el("section", "jobs");
      jobs.append(el("h2", "", "Jobs"));
      for (const j of this.jobs) {
        jobs.append(el("div", `job job-${j.status}`, `${j.job_id} [${j.kind}] ${j.status}`));
      }
      view.append(jobs);
    }

    this.root.append(view);
  }

  private kappaPanel(): HTMLElement {
    const panel = el("section", "kappa-panel");
    panel.append(el("h2", "", "Agreement"));
    const r = this.reliability;
    if (!r) {
      panel.append(el("p", "kappa-value", "not computable"));
      return panel;
    }
    if (r.mode === "exclusive") {
      panel.append(el("p", "kappa-value", formatKappa(r.kappa)));
    } else {
      const table = el("table", "kappa-per-label");
      for (const [label, k] of Object.entries(r.per_label ?? {})) {
        const tr = el("tr");
        tr.append(el("td", "", label), el("td", "kappa-cell", formatKappa(k)));
        table.append(tr);
      }
      panel.append(table);
      const macro =
        r.macro_kappa === null ? "not computable" : formatPercent(r.macro_kappa);
      panel.append(el("p", "kappa-macro", `macro ${macro}`));
    }
    panel.append(
      el(
        "p",
        "kappa-overlap",
        `${r.reviewed_overlap} of ${r.overlap_docs} overlap docs reviewed by both`
      )
    );
    return panel;
  }
}
