"""The full labeling workflow, end to end, with no network.

Two scripted "model backends" propose labels for a small news corpus, two
simulated reviewers keep or reject each proposal, survivors are resolved,
and the result is exported as an instruction-tuning dataset.

Run it directly: python demos/mock_crowd_to_finetune.py
"""

import json
import re
import tempfile
from pathlib import Path

from labelforge import (
    BackendConfig,
    BackendPool,
    Coder,
    Corpus,
    Document,
    Label,
    PromptTemplate,
    RetryPolicy,
    ReviewLog,
    StrategyConfig,
    Taxonomy,
    WireResponse,
    assign,
    export_finetune,
    run_crowd,
)

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
docs = [
    Document(
        id=f"d{i:03d}",
        text=f"Story {i}: wire copy about {news.label_by_id(GOLD[i % 3]).display_name.lower()} policy.",
        true_labels=frozenset({GOLD[i % 3]}),
    )
    for i in range(30)
]
corpus = Corpus(documents=docs, taxonomy=news)
print(f"corpus: {corpus.n} documents, taxonomy {news.name!r} (M={news.m}, exclusive)")


def completion(text):
    return WireResponse(
        status=200,
        body={
            "choices": [{"message": {"content": text}}],
            "usage": {"prompt_tokens": 90, "completion_tokens": 6},
        },
    )


def scripted(answer_for):
    """Transport that reads the story number out of the prompt and answers."""

    def transport(url, payload, headers, timeout):
        user = [m for m in payload["messages"] if m["role"] == "user"][-1]["content"]
        i = int(re.search(r"Story (\d+)", user).group(1))
        return completion(answer_for(i))

    return transport


def alpha_answer(i):
    # Reliable annotator: always names the gold class.
    return news.label_by_id(GOLD[i % 3]).display_name


def beta_answer(i):
    # Sloppier: garbage every 9th story, off by one class every 5th.
    if i % 9 == 0:
        return "no idea, sorry"
    if i % 5 == 0:
        return news.label_by_id(GOLD[(i + 1) % 3]).display_name
    return news.label_by_id(GOLD[i % 3]).display_name


def pick(transports):
    def transport(url, payload, headers, timeout):
        for marker, t in transports.items():
            if marker in url:
                return t(url, payload, headers, timeout)
        raise AssertionError(f"no scripted backend for {url}")

    return transport


fast_retry = RetryPolicy(max_attempts=2, backoff_base=0.0, backoff_cap=0.0)
pool = BackendPool(
    backends={
        "alpha": BackendConfig(
            name="alpha", base_url="http://alpha.test", model="alpha-7b", retry=fast_retry
        ),
        "beta": BackendConfig(
            name="beta", base_url="http://beta.test", model="beta-7b", retry=fast_retry
        ),
    },
    transport=pick({"alpha.test": scripted(alpha_answer), "beta.test": scripted(beta_answer)}),
    sleep=lambda s: None,
)

configs = [
    StrategyConfig(kind="zero_shot", backend="alpha"),
    StrategyConfig(kind="zero_shot", backend="beta"),
]
crowd = run_crowd(corpus, configs, pool)

n_single = sum(1 for r in crowd if len(r.candidates) == 1)
n_multi = sum(1 for r in crowd if len(r.candidates) > 1)
n_failures = sum(len(r.failures) for r in crowd)
print(f"crowd: {n_single} docs with one candidate, {n_multi} with several, "
      f"{n_failures} parse failures")

sample = next(r for r in crowd if len(r.candidates) > 1)
print(f"  e.g. {sample.doc_id}: " + ", ".join(
    f"{c.label} (x{len(c.provenance)} configs)" for c in sample.candidates
))

# Human verification: every doc goes to both reviewers. Ana keeps exactly
# the gold label; Ben is careless and rejects everything on every 8th story.
# Rejection is the unit of work, not free labeling.
candidates = {r.doc_id: tuple(c.label for c in r.candidates) for r in crowd}
log = ReviewLog(candidates, exclusive=True)
coders = [Coder(id="ana", display_name="Ana"), Coder(id="ben", display_name="Ben")]
log.add_assignments(assign(corpus, coders, overlap_fraction=1.0, seed=3))

for (coder_id, doc_id) in list(log.assignments):
    gold = next(iter(corpus.by_id[doc_id].true_labels))
    story = int(doc_id[1:])
    all_reject = coder_id == "ben" and story % 8 == 0
    log.submit(coder_id, doc_id, {
        label: ("keep" if label == gold and not all_reject else "reject")
        for label in candidates[doc_id]
    })

kappa = log.cohen_kappa_for("ana", "ben", news)
print(f"reliability: Cohen kappa {kappa.value:.3f} over {kappa.n_items} overlap docs")

resolved = log.resolve_all(policy="any_reject_drops")
conflicts = [r.doc_id for r in resolved if r.conflict]
empty = [r.doc_id for r in resolved if not r.surviving_labels]
print(f"resolved: {len(resolved)} docs, {len(conflicts)} conflicts, "
      f"{len(empty)} with nothing kept {empty}")

out_dir = Path(tempfile.mkdtemp(prefix="labelforge_demo_"))
template = PromptTemplate(
    id="demo_t1",
    system="You label newswire stories.",
    user="Pick the best category.\nOptions: {labels}\n\nDocument:\n{text}",
)
export = export_finetune(
    resolved, corpus, template, ratio=0.8, seed=7, out_dir=out_dir
)
print(f"export: wrote {export.train_path.name} and {export.test_path.name} in {out_dir}")
print(json.dumps(export.manifest, indent=2))

first = json.loads(export.train_path.read_text(encoding="utf-8").splitlines()[0])
print("first training row:")
print(json.dumps(first, indent=2))
