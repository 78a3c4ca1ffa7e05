import { beforeEach, describe, expect, it } from "vitest";
import { ApiError, NetworkError } from "../src/api.js";
import type { ReviewPayload, ReviewReceipt } from "../src/api.js";
import { ReviewBuffer, localStorageStore } from "../src/buffer.js";

function payload(docId: string): ReviewPayload {
  return {
    project: 1,
    coder_id: "ana",
    doc_id: docId,
    decisions: { health: "keep", energy: "reject" },
  };
}

function receipt(docId: string): ReviewReceipt {
  return {
    record_id: 1,
    coder_id: "ana",
    doc_id: docId,
    decisions: { health: "keep", energy: "reject" },
    submitted_at: 0,
    supersedes: null,
  };
}

describe("ReviewBuffer", () => {
  it("assigns an idempotency key at enqueue time", () => {
    const buffer = new ReviewBuffer();
    const item = buffer.enqueue(payload("d1"));
    expect(item.idempotency_key).toBeTruthy();
    expect(buffer.pending).toHaveLength(1);
  });

  it("requeueing the same doc replaces the entry but keeps its key", () => {
    const buffer = new ReviewBuffer();
    const first = buffer.enqueue(payload("d1"));
    const second = buffer.enqueue({
      ...payload("d1"),
      decisions: { health: "reject", energy: "reject" },
    });
    expect(buffer.pending).toHaveLength(1);
    expect(second.idempotency_key).toBe(first.idempotency_key);
    expect(buffer.pending[0].decisions).toEqual({ health: "reject", energy: "reject" });
  });

  it("flush drains in order and reports receipts", async () => {
    const buffer = new ReviewBuffer();
    buffer.enqueue(payload("d1"));
    buffer.enqueue(payload("d2"));
    const sent: string[] = [];
    const result = await buffer.flush(async (r) => {
      sent.push(r.doc_id);
      return receipt(r.doc_id);
    });
    expect(sent).toEqual(["d1", "d2"]);
    expect(result.sent).toHaveLength(2);
    expect(result.offline).toBe(false);
    expect(buffer.pending).toHaveLength(0);
  });

  it("a transport failure stops the flush and keeps the key for the retry", async () => {
    const buffer = new ReviewBuffer();
    const queued = buffer.enqueue(payload("d1"));
    buffer.enqueue(payload("d2"));

    const first = await buffer.flush(async () => {
      throw new NetworkError("offline");
    });
    expect(first.offline).toBe(true);
    expect(buffer.pending).toHaveLength(2);
    expect(buffer.pending[0].idempotency_key).toBe(queued.idempotency_key);

    const keys: (string | undefined)[] = [];
    const second = await buffer.flush(async (r) => {
      keys.push(r.idempotency_key);
      return receipt(r.doc_id);
    });
    expect(second.sent).toHaveLength(2);
    expect(keys[0]).toBe(queued.idempotency_key);
  });

  it("conflicts and rejections drain the entry instead of looping forever", async () => {
    const buffer = new ReviewBuffer();
    buffer.enqueue(payload("d1"));
    buffer.enqueue(payload("d2"));
    const result = await buffer.flush(async (r) => {
      if (r.doc_id === "d1") throw new ApiError(409, "supersede required");
      throw new ApiError(400, "bad decisions");
    });
    expect(result.conflicts.map((c) => c.doc_id)).toEqual(["d1"]);
    expect(result.rejected.map((c) => c.review.doc_id)).toEqual(["d2"]);
    expect(buffer.pending).toHaveLength(0);
  });
});

describe("localStorage persistence", () => {
  beforeEach(() => localStorage.clear());

  it("queued reviews survive a page reload", async () => {
    const before = new ReviewBuffer(localStorageStore());
    const queued = before.enqueue(payload("d1"));

    const after = new ReviewBuffer(localStorageStore());
    expect(after.pending).toHaveLength(1);
    expect(after.pending[0].idempotency_key).toBe(queued.idempotency_key);

    await after.flush(async (r) => receipt(r.doc_id));
    expect(new ReviewBuffer(localStorageStore()).pending).toHaveLength(0);
  });
});
