import { ApiError, NetworkError } from "./api.js";
import type { ReviewPayload, ReviewReceipt } from "./api.js";

// Reviews are queued locally and flushed to the server. The idempotency key
// is fixed the moment a review is enqueued and never regenerated, so any
// number of flush retries (including a retry after a lost response) lands as
// one server-side record.

export interface BufferedReview extends ReviewPayload {
  idempotency_key: string;
}

export interface BufferStore {
  load(): BufferedReview[];
  save(items: BufferedReview[]): void;
}

export function memoryStore(): BufferStore {
  let items: BufferedReview[] = [];
  return {
    load: () => items.slice(),
    save: (next) => {
      items = next.slice();
    },
  };
}

export function localStorageStore(key = "labelforge.reviews"): BufferStore {
  return {
    load: () => {
      try {
        return JSON.parse(localStorage.getItem(key) ?? "[]") as BufferedReview[];
      } catch {
        return [];
      }
    },
    save: (items) => {
      try {
        localStorage.setItem(key, JSON.stringify(items));
      } catch {
        // storage full or unavailable; the in-memory queue still works
      }
    },
  };
}

export function newIdempotencyKey(): string {
  const c = globalThis.crypto as Crypto | undefined;
  if (c && "randomUUID" in c) return c.randomUUID();
  return `k-${Date.now().toString(36)}-${Math.random().toString(36).slice(2, 10)}`;
}

export interface FlushResult {
  sent: ReviewReceipt[];
  conflicts: BufferedReview[]; // 409: already reviewed, needs supersede
  rejected: { review: BufferedReview; error: ApiError }[]; // other 4xx/5xx
  offline: boolean; // stopped early on a transport failure
}

export class ReviewBuffer {
  private items: BufferedReview[];

  constructor(private store: BufferStore = memoryStore()) {
    this.items = store.load();
  }

  get pending(): readonly BufferedReview[] {
    return this.items;
  }

  /** Queue a review. A requeue for the same (coder, doc) replaces the old
   * entry but keeps its key: still one logical submission. */
  enqueue(payload: ReviewPayload): BufferedReview {
    const existing = this.items.find(
      (r) => r.coder_id === payload.coder_id && r.doc_id === payload.doc_id
    );
    const item: BufferedReview = {
      ...payload,
      idempotency_key:
        payload.idempotency_key ?? existing?.idempotency_key ?? newIdempotencyKey(),
    };
    this.items = this.items.filter((r) => r !== existing);
    this.items.push(item);
    this.store.save(this.items);
    return item;
  }

  /** Send queued reviews in order. A transport failure stops the flush and
   * keeps the remainder (keys included) for the next attempt. */
  async flush(send: (review: BufferedReview) => Promise<ReviewReceipt>): Promise<FlushResult> {
    const result: FlushResult = { sent: [], conflicts: [], rejected: [], offline: false };
    while (this.items.length > 0) {
      const head = this.items[0];
      try {
        result.sent.push(await send(head));
      } catch (err) {
        if (err instanceof NetworkError) {
          result.offline = true;
          break;
        }
        if (err instanceof ApiError && err.status === 409) {
          result.conflicts.push(head);
        } else if (err instanceof ApiError) {
          result.rejected.push({ review: head, error: err });
        } else {
          throw err;
        }
      }
      this.items = this.items.slice(1);
      this.store.save(this.items);
    }
    return result;
  }
}
