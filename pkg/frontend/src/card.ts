import type { CandidateChip, DocView, Verdict } from "./api.js";

/** View model for one review card.
 *
 * Every chip starts as "keep", so a card whose candidates are all correct is
 * submittable in one action. The decisions payload always covers exactly the
 * candidate set the server sent; the card cannot invent or drop labels.
 */
export class ReviewCard {
  readonly docId: string;
  readonly text: string;
  readonly candidates: CandidateChip[];
  private rejected = new Set<string>();

  constructor(doc: DocView) {
    this.docId = doc.id;
    this.text = doc.text;
    this.candidates = doc.candidates;
  }

  verdict(label: string): Verdict {
    this.requireKnown(label);
    return this.rejected.has(label) ? "reject" : "keep";
  }

  toggle(label: string): void {
    this.requireKnown(label);
    if (this.rejected.has(label)) this.rejected.delete(label);
    else this.rejected.add(label);
  }

  toggleByIndex(index: number): void {
    const chip = this.candidates[index];
    if (chip) this.toggle(chip.label);
  }

  get noneApply(): boolean {
    return this.candidates.length > 0 && this.rejected.size === this.candidates.length;
  }

  setNoneApply(on: boolean): void {
    this.rejected = on ? new Set(this.candidates.map((c) => c.label)) : new Set();
  }

  decisions(): Record<string, Verdict> {
    const out: Record<string, Verdict> = {};
    for (const c of this.candidates) out[c.label] = this.verdict(c.label);
    return out;
  }

  /** After a conflict refresh, carry earlier decisions over where labels match. */
  restoreFrom(previous: Record<string, Verdict>): void {
    for (const c of this.candidates) {
      if (previous[c.label] === "reject") this.rejected.add(c.label);
      else if (previous[c.label] === "keep") this.rejected.delete(c.label);
    }
  }

  private requireKnown(label: string): void {
    if (!this.candidates.some((c) => c.label === label)) {
      throw new Error(`label ${label} is not on this card`);
    }
  }
}
