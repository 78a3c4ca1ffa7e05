import { ApiClient, ApiError } from "./api.js";
import type { TaxonomyView, Verdict } from "./api.js";
import { ReviewCard } from "./card.js";
import { ReviewBuffer } from "./buffer.js";

export interface ReviewOptions {
  project: number;
  coderId: string;
  cardsPerSitting?: number; // fatigue nudge after this many submissions
}

interface QueueEntry {
  docId: string;
  restore?: Record<string, Verdict>;
  supersede?: boolean;
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

/** The coder's review loop: fetch the next pending card, reject what does
 * not apply, submit, repeat. Keyboard: number keys toggle chips, n toggles
 * "none apply", p shows provenance, Enter submits.
 *
 * Submits are optimistic: the queue advances immediately and the review is
 * flushed from a local buffer, so a dropped connection never loses work.
 */
export class ReviewScreen {
  private queue: QueueEntry[] = [];
  private card: ReviewCard | null = null;
  private currentSupersede = false;
  private taxonomy: TaxonomyView | null = null;
  private showProvenance = false;
  private submittedThisSitting = 0;
  private nudging = false;
  private lastOp: Promise<void> = Promise.resolve();
  private keyHandler = (e: KeyboardEvent) => this.onKey(e);
  private onlineHandler = () => {
    this.lastOp = this.lastOp.then(() => this.flushQueued());
  };

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
    private opts: ReviewOptions,
    private buffer: ReviewBuffer = new ReviewBuffer()
  ) {}

  async start(): Promise<void> {
    document.addEventListener("keydown", this.keyHandler);
    window.addEventListener("online", this.onlineHandler);
    try {
      const [assignments, taxonomy] = await Promise.all([
        this.api.assignments(this.opts.project, this.opts.coderId),
        this.api.taxonomy(this.opts.project),
      ]);
      this.taxonomy = taxonomy;
      this.queue = assignments
        .filter((a) => a.status === "pending")
        .map((a) => ({ docId: a.doc_id }));
    } catch (err) {
      this.renderError(err);
      return;
    }
    await this.flushQueued(); // leftovers from a previous sitting
    await this.advance();
  }

  stop(): void {
    document.removeEventListener("keydown", this.keyHandler);
    window.removeEventListener("online", this.onlineHandler);
  }

  /** Resolves when every in-flight submit/flush has settled. */
  idle(): Promise<void> {
    return this.lastOp;
  }

  private async advance(): Promise<void> {
    const entry = this.queue.shift();
    if (!entry) {
      this.card = null;
      this.renderDone();
      return;
    }
    try {
      const doc = await this.api.doc(this.opts.project, entry.docId);
      this.card = new ReviewCard(doc);
      if (entry.restore) this.card.restoreFrom(entry.restore);
      this.currentSupersede = !!entry.supersede;
      this.render(!!entry.restore);
    } catch (err) {
      this.renderError(err);
    }
  }

  async submit(): Promise<void> {
    const card = this.card;
    if (!card || this.nudging) return;
    this.buffer.enqueue({
      project: this.opts.project,
      coder_id: this.opts.coderId,
      doc_id: card.docId,
      decisions: card.decisions(),
      supersede: this.currentSupersede || undefined,
    });
    this.submittedThisSitting += 1;
    const limit = this.opts.cardsPerSitting ?? 25;
    if (this.submittedThisSitting % limit === 0) {
      this.card = null;
      this.renderNudge();
    } else {
      await this.advance();
    }
    await this.flushQueued();
  }

  private async flushQueued(): Promise<void> {
    const result = await this.buffer.flush((r) => this.api.submitReview(r));
    for (const conflict of result.conflicts) {
      // Someone (or an earlier flush) already reviewed this doc: bring the
      // card back with the coder's decisions preserved and supersede armed.
      this.queue.unshift({
        docId: conflict.doc_id,
        restore: conflict.decisions,
        supersede: true,
      });
    }
    const unauthorized = result.rejected.find((r) => r.error.status === 401);
    if (unauthorized) {
      this.renderError(unauthorized.error);
      return;
    }
    if (result.conflicts.length > 0 && this.card === null && !this.nudging) {
      await this.advance();
    } else {
      this.updateBufferNote();
    }
  }

  private onKey(e: KeyboardEvent): void {
    const target = e.target as HTMLElement | null;
    if (target && (target.tagName === "INPUT" || target.tagName === "TEXTAREA")) {
      if ((target as HTMLInputElement).type !== "checkbox") return;
    }
    if (e.key === "Enter") {
      e.preventDefault();
      if (this.nudging) this.continueSitting();
      else this.lastOp = this.lastOp.then(() => this.submit());
      return;
    }
    if (!this.card) return;
    if (e.key >= "0" && e.key <= "9") {
      const index = e.key === "0" ? 9 : Number(e.key) - 1;
      this.card.toggleByIndex(index);
      this.render();
    } else if (e.key === "n" || e.key === "N") {
      this.card.setNoneApply(!this.card.noneApply);
      this.render();
    } else if (e.key === "p" || e.key === "P") {
      this.toggleProvenance();
    }
  }

  private toggleProvenance(): void {
    this.showProvenance = !this.showProvenance;
    this.root.querySelectorAll<HTMLElement>(".prov-badge").forEach((b) => {
      b.hidden = !this.showProvenance;
    });
    const btn = this.root.querySelector<HTMLElement>(".provenance-toggle");
    if (btn) btn.textContent = this.showProvenance ? "hide sources" : "show sources";
  }

  private groupOf(label: string): string | null {
    const entry = this.taxonomy?.labels.find((l) => l.id === label);
    return entry?.group ?? null;
  }

  private render(conflictNote = false): void {
    const card = this.card;
    if (!card) return;
    this.root.textContent = "";
    const view = el("div", "review");

    const head = el("header", "review-head");
    head.append(
      el("span", "queue-pos", `${this.queue.length} more after this`),
      el("span", "doc-id", card.docId)
    );
    view.append(head);

    if (conflictNote) {
      view.append(
        el(
          "div",
          "conflict-note",
          "This document already has a review from you; submitting again will supersede it."
        )
      );
    }

    view.append(el("article", "doc-text", card.text));

    // Chips grouped by taxonomy group when one exists (wide taxonomies);
    // numbering stays global so shortcut keys match the badge on screen.
    const chipFor = (index: number) => {
      const chip = card.candidates[index];
      const rejected = card.verdict(chip.label) === "reject";
      const btn = el("button", rejected ? "chip rejected" : "chip");
      btn.dataset.label = chip.label;
      btn.setAttribute("aria-pressed", String(rejected));
      btn.title = chip.description;
      btn.append(
        el("span", "chip-key", String(index + 1)),
        el("span", "chip-name", chip.display_name)
      );
      const badge = el("span", "prov-badge", `x${chip.provenance_count}`);
      badge.hidden = !this.showProvenance;
      btn.append(badge);
      btn.addEventListener("click", () => {
        card.toggle(chip.label);
        this.render();
      });
      return btn;
    };

    const groups = new Map<string, number[]>();
    card.candidates.forEach((chip, i) => {
      const g = this.groupOf(chip.label) ?? "";
      if (!groups.has(g)) groups.set(g, []);
      groups.get(g)!.push(i);
    });
    const chips = el("section", "chips");
    if (groups.size > 1) {
      for (const [name, indices] of groups) {
        const details = el("details", "chip-group");
        details.open = true;
        details.append(el("summary", "", name || "other"));
        indices.forEach((i) => details.append(chipFor(i)));
        chips.append(details);
      }
    } else {
      card.candidates.forEach((_, i) => chips.append(chipFor(i)));
    }
    view.append(chips);

    const noneApply = el("label", "none-apply");
    const box = el("input") as HTMLInputElement;
    box.type = "checkbox";
    box.className = "none-apply-box";
    box.checked = card.noneApply;
    box.addEventListener("change", () => {
      card.setNoneApply(box.checked);
      this.render();
    });
    noneApply.append(box, document.createTextNode(" none of these apply"));
    view.append(noneApply);

    const footer = el("footer", "review-foot");
    const provBtn = el(
      "button",
      "provenance-toggle",
      this.showProvenance ? "hide sources" : "show sources"
    );
    provBtn.addEventListener("click", () => this.toggleProvenance());
    const submitBtn = el("button", "submit", "Submit (Enter)");
    submitBtn.addEventListener("click", () => {
      this.lastOp = this.lastOp.then(() => this.submit());
    });
    footer.append(provBtn, submitBtn, this.bufferNote());
    view.append(footer);

    this.root.append(view);
  }

  private bufferNote(): HTMLElement {
    const n = this.buffer.pending.length;
    const note = el("span", "buffer-note", `${n} queued offline, will sync`);
    note.hidden = n === 0;
    return note;
  }

  private updateBufferNote(): void {
    const existing = this.root.querySelector<HTMLElement>(".buffer-note");
    if (!existing) return;
    const n = this.buffer.pending.length;
    existing.textContent = `${n} queued offline, will sync`;
    existing.hidden = n === 0;
  }

  private renderDone(): void {
    this.root.textContent = "";
    const done = el("div", "done");
    done.append(el("h2", "", "All caught up"));
    done.append(el("p", "", "No pending documents in your queue."));
    done.append(this.bufferNote());
    this.root.append(done);
  }

  private renderNudge(): void {
    this.nudging = true;
    this.root.textContent = "";
    const nudge = el("div", "nudge");
    nudge.append(el("h2", "", "Good stopping point"));
    nudge.append(
      el("p", "", `${this.submittedThisSitting} cards this sitting. Stretch a little?`)
    );
    const cont = el("button", "continue", "Keep going (Enter)");
    cont.addEventListener("click", () => this.continueSitting());
    nudge.append(cont);
    this.root.append(nudge);
  }

  private continueSitting(): void {
    if (!this.nudging) return;
    this.nudging = false;
    this.lastOp = this.lastOp.then(() => this.advance());
  }

  private renderError(err: unknown): void {
    this.card = null;
    this.root.textContent = "";
    const screen = el("div", "error-screen");
    screen.append(el("h2", "", "Cannot continue"));
    const detail =
      err instanceof ApiError && err.status === 401
        ? "Your review link is not valid. Ask the operator for a fresh one."
        : String(err instanceof Error ? err.message : err);
    screen.append(el("p", "", detail));
    this.root.append(screen);
  }
}
