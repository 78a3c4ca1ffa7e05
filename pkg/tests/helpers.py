"""Shared test doubles: scripted transports, canned backends, tiny taxonomies."""

from __future__ import annotations

from labelforge.corpus import Corpus, Document, Label, Subtopic, Taxonomy
from labelforge.gateway import BackendConfig, Pricing, RetryPolicy, WireResponse
from labelforge.strategies import BackendPool


def ok_body(text: str, usage: tuple[int, int] = (100, 20)) -> dict:
    return {
        "choices": [{"message": {"content": text}}],
        "usage": {"prompt_tokens": usage[0], "completion_tokens": usage[1]},
    }


class ScriptedTransport:
    """Transport double that records every wire call.

    The script is either a list of WireResponse/str consumed in order, or a
    callable(payload) -> WireResponse | str. Plain strings become HTTP 200
    completion bodies.
    """

    def __init__(self, script):
        self.script = script
        self.calls: list[dict] = []

    def __call__(self, url, payload, headers, timeout) -> WireResponse:
        self.calls.append({"url": url, "payload": payload, "headers": headers})
        if callable(self.script):
            out = self.script(payload)
        else:
            out = self.script[len(self.calls) - 1]
        if isinstance(out, str):
            return WireResponse(status=200, body=ok_body(out))
        return out

    @property
    def n_calls(self) -> int:
        return len(self.calls)


def last_user_text(payload: dict) -> str:
    return payload["messages"][-1]["content"]


def make_backend(name: str = "mock", **overrides) -> BackendConfig:
    kwargs = dict(
        base_url="http://mock.test",
        model="mock-1",
        retry=RetryPolicy(max_attempts=3, backoff_base=0.0, backoff_cap=0.0),
    )
    kwargs.update(overrides)
    return BackendConfig(name=name, **kwargs)


def make_pool(script, backends=("mock",), journal=None, templates=None):
    """(pool, transport) wired for tests: no sleeping, no network.

    Each backend's model is its own name so a scripted transport can tell
    callers apart via payload["model"].
    """
    transport = ScriptedTransport(script)
    pool = BackendPool(
        backends={n: make_backend(n, model=n) for n in backends},
        transport=transport,
        journal=journal,
        sleep=lambda s: None,
        templates=dict(templates or {}),
    )
    return pool, transport


def tiny3_taxonomy() -> Taxonomy:
    return Taxonomy(
        name="tiny3",
        labels=[
            Label(id="health", display_name="Health"),
            Label(id="economy", display_name="Economy"),
            Label(id="defense", display_name="Defense"),
        ],
        exclusive=True,
    )


def multi5_taxonomy() -> Taxonomy:
    return Taxonomy(
        name="multi5",
        labels=[Label(id=c.lower(), display_name=c) for c in "ABCDE"],
        exclusive=False,
        max_labels=3,
    )


def hier3_taxonomy() -> Taxonomy:
    """Three macro areas, two subtopics each."""
    return Taxonomy(
        name="hier3",
        labels=[
            Label(id="health", display_name="Health"),
            Label(id="economy", display_name="Economy"),
            Label(id="defense", display_name="Defense"),
        ],
        exclusive=True,
        hierarchy={
            "health": [
                Subtopic("hospitals", "Hospitals"),
                Subtopic("insurance", "Health Insurance"),
            ],
            "economy": [
                Subtopic("taxes", "Taxes"),
                Subtopic("trade", "Trade Policy"),
            ],
            "defense": [
                Subtopic("procurement", "Military Procurement"),
                Subtopic("veterans", "Veterans Affairs"),
            ],
        },
    )


def make_corpus(taxonomy: Taxonomy, n: int, gold=None, prefix: str = "d") -> Corpus:
    """n documents with cycled gold labels (gold=None leaves them unlabeled)."""
    docs = []
    for i in range(n):
        labels = None
        if gold:
            labels = frozenset([gold[i % len(gold)]])
        docs.append(Document(id=f"{prefix}{i:04d}", text=f"document {i}", true_labels=labels))
    return Corpus(documents=docs, taxonomy=taxonomy)


PRICED = Pricing(per_input_token=0.00001, per_output_token=0.00003)
