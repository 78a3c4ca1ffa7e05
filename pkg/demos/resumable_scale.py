"""Batch inference that survives being killed mid-run.

A scripted transport crashes the process partway through a 60-document run.
The restart scans the output file, skips everything already persisted, and
finishes the job; the output ends with exactly one line per document.

Run it directly: python demos/resumable_scale.py
"""

import json
import re
import tempfile
from pathlib import Path

from labelforge import (
    BackendConfig,
    BackendPool,
    Corpus,
    Document,
    Label,
    Pricing,
    RetryPolicy,
    ScaleJob,
    StrategyConfig,
    Taxonomy,
    WireResponse,
    evaluate_run,
    load_predictions,
    run_scale,
)
from labelforge.reports import format_percent

news = Taxonomy(
    name="newsdesk",
    labels=[
        Label(id="health", display_name="Health"),
        Label(id="economy", display_name="Economy"),
        Label(id="defense", display_name="Defense"),
    ],
    exclusive=True,
)
GOLD = ["health", "economy", "defense"]
corpus = Corpus(
    documents=[
        Document(
            id=f"d{i:03d}",
            text=f"Story {i}: overnight wire copy.",
            true_labels=frozenset({GOLD[i % 3]}),
        )
        for i in range(60)
    ],
    taxonomy=news,
)


class SimulatedCrash(Exception):
    pass


def make_transport(crash_after=None):
    """Answer the gold class per story; optionally die after N answers."""
    answered = [0]

    def transport(url, payload, headers, timeout):
        user = [m for m in payload["messages"] if m["role"] == "user"][-1]["content"]
        if "ping" in user:  # health probe, not a document
            text = "pong"
        else:
            if crash_after is not None and answered[0] >= crash_after:
                raise SimulatedCrash(f"power cut after {answered[0]} documents")
            answered[0] += 1
            i = int(re.search(r"Story (\d+)", user).group(1))
            # The tuned model is imperfect: misfires on every 10th story.
            j = (i + 1) % 3 if i % 10 == 0 else i % 3
            text = news.label_by_id(GOLD[j]).display_name
        return WireResponse(
            status=200,
            body={
                "choices": [{"message": {"content": text}}],
                "usage": {"prompt_tokens": 80, "completion_tokens": 4},
            },
        )

    return transport


def make_job(transport, out_path):
    backend = BackendConfig(
        name="tuned",
        base_url="http://tuned.test",
        model="newsdesk-ft-1",
        max_concurrency=4,
        retry=RetryPolicy(max_attempts=2, backoff_base=0.0, backoff_cap=0.0),
        price=Pricing(per_input_token=1e-5, per_output_token=3e-5),
    )
    pool = BackendPool(backends={"tuned": backend}, transport=transport, sleep=lambda s: None)
    return ScaleJob(
        job_id="demo-scale",
        corpus=corpus,
        config=StrategyConfig(kind="zero_shot", backend="tuned"),
        pool=pool,
        out_path=out_path,
        checkpoint_every=10,
        max_concurrency=4,
    )


out_path = Path(tempfile.mkdtemp(prefix="labelforge_demo_")) / "predictions.jsonl"

# First attempt: the backend dies after ~25 answers.
try:
    run_scale(make_job(make_transport(crash_after=25), out_path))
except SimulatedCrash as exc:
    print(f"first run crashed: {exc}")

persisted = {row["id"] for row in load_predictions(out_path)}
print(f"output file already holds {len(persisted)} of {corpus.n} documents")
checkpoint = json.loads(out_path.with_suffix(".jsonl.checkpoint.json").read_text())
print(f"checkpoint says: done={checkpoint['done']} failed={checkpoint['failed']}")

# Second attempt with a healthy transport: only the missing documents run.
summary = run_scale(make_job(make_transport(), out_path))
print(f"resumed run finished: total={summary.total} done={summary.done} "
      f"failed={summary.failed}")
print(f"tokens: {summary.input_tokens} in / {summary.output_tokens} out, "
      f"cost ${summary.cost:.4f}")

rows = load_predictions(out_path)
assert len(rows) == corpus.n and len({r["id"] for r in rows}) == corpus.n
print(f"output has exactly one line per document ({len(rows)} lines)")

report = evaluate_run(rows, corpus)
print(f"accuracy against gold labels: {format_percent(report.accuracy)}%")
