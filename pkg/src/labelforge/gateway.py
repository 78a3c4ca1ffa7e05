"""Uniform client for chat-completion backends.

One wire protocol (JSON over HTTP, OpenAI-compatible shape) covers both
local inference servers and remote APIs. Everything here except the actual
network call is deterministic; every completion is journaled before any
parsing happens, so parsing rules can be revised and re-run offline.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

from .corpus import Taxonomy
from .errors import BackendUnavailableError, ConfigurationError, TemplateError

__all__ = [
    "RetryPolicy",
    "Pricing",
    "AuthRef",
    "BackendConfig",
    "PromptTemplate",
    "CompletionRecord",
    "ParsedLabels",
    "WireResponse",
    "TransportFailure",
    "CompletionJournal",
    "complete",
    "parse_labels",
    "match_tokens",
    "render",
    "render_instruction",
    "levenshtein",
]


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base: float = 0.5
    backoff_cap: float = 30.0

    def delay(self, attempt: int) -> float:
        """Exponential backoff before retry number ``attempt`` (1-based)."""
        return min(self.backoff_cap, self.backoff_base * (2 ** (attempt - 1)))


@dataclass(frozen=True)
class Pricing:
    per_input_token: float
    per_output_token: float


@dataclass(frozen=True)
class AuthRef:
    """Secret reference: header name plus the env var holding the value."""

    header: str = "Authorization"
    env_var: str = "LABELFORGE_API_KEY"
    scheme: str = "Bearer"


@dataclass
class BackendConfig:
    name: str
    base_url: str
    model: str
    auth: AuthRef | None = None
    max_concurrency: int = 1
    timeout: float = 60.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    price: Pricing | None = None
    temperature: float = 0.0
    path: str = "/v1/chat/completions"

    def __post_init__(self):
        if self.max_concurrency < 1:
            raise ConfigurationError(f"max_concurrency must be >= 1, got {self.max_concurrency}")
        if self.retry.max_attempts < 1:
            raise ConfigurationError(f"max_attempts must be >= 1, got {self.retry.max_attempts}")
        if self.price is not None and (
            self.price.per_input_token < 0 or self.price.per_output_token < 0
        ):
            raise ConfigurationError("prices must be non-negative")

    @property
    def url(self) -> str:
        return self.base_url.rstrip("/") + self.path

    def auth_headers(self) -> dict[str, str]:
        if self.auth is None:
            return {}
        value = os.environ.get(self.auth.env_var)
        if not value:
            raise ConfigurationError(
                f"backend {self.name!r} needs secret in env var {self.auth.env_var!r}"
            )
        prefix = f"{self.auth.scheme} " if self.auth.scheme else ""
        return {self.auth.header: prefix + value}


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    system: str
    user: str
    render_labels_as: str = "names"  # names | names_with_descriptions | numbered


@dataclass(frozen=True)
class CompletionRecord:
    """Journal row for one completed backend call."""

    backend: str
    prompt_hash: str
    raw_text: str
    input_tokens: int
    output_tokens: int
    latency: float
    cost: float | None
    timestamp: float
    attempts: int = 1

    def to_json(self) -> dict:
        return {
            "backend": self.backend,
            "prompt_hash": self.prompt_hash,
            "raw_text": self.raw_text,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "latency": self.latency,
            "cost": self.cost,
            "timestamp": self.timestamp,
            "attempts": self.attempts,
        }


@dataclass(frozen=True)
class ParsedLabels:
    """Result of mapping free-text model output onto the label universe."""

    labels: tuple[str, ...]
    unparsed_fragments: tuple[str, ...]
    parse_status: str  # exact | normalized | fuzzy | failed


@dataclass(frozen=True)
class WireResponse:
    status: int
    body: dict


class TransportFailure(Exception):
    """Timeout or connection-level failure (always retryable)."""


class Transport(Protocol):
    def __call__(
        self, url: str, payload: dict, headers: dict[str, str], timeout: float
    ) -> WireResponse: ...


def _httpx_transport(
    url: str, payload: dict, headers: dict[str, str], timeout: float
) -> WireResponse:
    import httpx

    try:
        resp = httpx.post(url, json=payload, headers=headers, timeout=timeout)
    except (httpx.TimeoutException, httpx.TransportError) as exc:
        raise TransportFailure(str(exc)) from exc
    try:
        body = resp.json()
    except ValueError:
        body = {}
    return WireResponse(status=resp.status_code, body=body)


class CompletionJournal:
    """Append-only JSONL journal of CompletionRecords. Safe for concurrent writers."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, record: CompletionRecord) -> None:
        line = json.dumps(record.to_json(), ensure_ascii=False)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def records(self) -> list[CompletionRecord]:
        if not self.path.exists():
            return []
        out = []
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                out.append(CompletionRecord(**obj))
        return out

    def total_cost(self) -> float:
        return sum(r.cost or 0.0 for r in self.records())


def prompt_digest(messages: list[dict]) -> str:
    blob = json.dumps(messages, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def complete(
    backend: BackendConfig,
    messages: list[dict],
    transport: Transport | None = None,
    journal: CompletionJournal | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> CompletionRecord:
    """Issue one chat completion with retry on transient failures.

    Retries HTTP 429 and 5xx plus timeouts/connection errors with exponential
    backoff up to the backend's max_attempts; any other 4xx fails immediately
    (401/403 as a configuration error). The returned record is journaled
    before this function returns.
    """
    transport = transport or _httpx_transport
    headers = {"Content-Type": "application/json", **backend.auth_headers()}
    payload = {
        "model": backend.model,
        "messages": messages,
        "temperature": backend.temperature,
    }
    attempt_trace: list[str] = []
    started = time.time()
    for attempt in range(1, backend.retry.max_attempts + 1):
        t0 = time.monotonic()
        try:
            wire = transport(backend.url, payload, headers, backend.timeout)
        except TransportFailure as exc:
            attempt_trace.append(f"attempt {attempt}: transport failure: {exc}")
            if attempt < backend.retry.max_attempts:
                sleep(backend.retry.delay(attempt))
                continue
            break
        latency = time.monotonic() - t0
        if wire.status == 200:
            try:
                raw_text = wire.body["choices"][0]["message"]["content"]
                usage = wire.body.get("usage", {})
                input_tokens = int(usage.get("prompt_tokens", 0))
                output_tokens = int(usage.get("completion_tokens", 0))
            except (KeyError, IndexError, TypeError) as exc:
                raise BackendUnavailableError(
                    f"backend {backend.name!r} returned malformed completion body",
                    attempts=attempt_trace + [f"attempt {attempt}: malformed body ({exc})"],
                ) from exc
            cost = None
            if backend.price is not None:
                cost = (
                    input_tokens * backend.price.per_input_token
                    + output_tokens * backend.price.per_output_token
                )
            record = CompletionRecord(
                backend=backend.name,
                prompt_hash=prompt_digest(messages),
                raw_text=raw_text,
                input_tokens=input_tokens,
                output_tokens=output_tokens,
                latency=latency,
                cost=cost,
                timestamp=started,
                attempts=attempt,
            )
            if journal is not None:
                journal.append(record)
            return record
        if wire.status in (401, 403):
            raise ConfigurationError(
                f"backend {backend.name!r} rejected credentials (HTTP {wire.status})"
            )
        attempt_trace.append(f"attempt {attempt}: HTTP {wire.status}")
        if wire.status == 429 or wire.status >= 500:
            if attempt < backend.retry.max_attempts:
                sleep(backend.retry.delay(attempt))
                continue
            break
        # other 4xx: not retryable
        raise BackendUnavailableError(
            f"backend {backend.name!r} returned HTTP {wire.status}", attempts=attempt_trace
        )
    raise BackendUnavailableError(
        f"backend {backend.name!r} unavailable after "
        f"{backend.retry.max_attempts} attempts",
        attempts=attempt_trace,
    )


# --------------------------------------------------------------- parsing

_NUMBERING = re.compile(r"^\s*(?:[#*\-•]+\s*)?\d*\s*[\.\)\]:]*\s*")
_PUNCT_EDGE = re.compile(r"^[\s\"'`.,;:!?()\[\]{}<>*_•-]+|[\s\"'`.,;:!?()\[\]{}<>*_•-]+$")


def _normalize_token(token: str) -> str:
    """Case-fold, strip numbering/surrounding punctuation, collapse whitespace."""
    s = _NUMBERING.sub("", token, count=1)
    s = _PUNCT_EDGE.sub("", s)
    s = re.sub(r"\s+", " ", s)
    return s.casefold().strip()


def levenshtein(a: str, b: str) -> int:
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


_TIERS = {"exact": 0, "normalized": 1, "fuzzy": 2}


def match_tokens(
    raw: str,
    candidates: list[tuple[str, str]],
    cap: int | None = None,
) -> ParsedLabels:
    """Match free-text output against (id, display_name) candidates.

    The whole response is tried first (exact, then normalized), so display
    names that themselves contain delimiters stay reachable. Otherwise the
    cascade runs per token: exact display-name match, then normalized match,
    then a unique fuzzy match within edit distance max(1, ceil(len/10)).
    Ambiguous fuzzy ties fail rather than guess. Tokens split on newlines,
    commas and semicolons.
    """
    if not raw or not raw.strip():
        return ParsedLabels(labels=(), unparsed_fragments=(), parse_status="failed")
    by_display = {display: cid for cid, display in candidates}
    by_norm: dict[str, list[str]] = {}
    for cid, display in candidates:
        by_norm.setdefault(_normalize_token(display), []).append(cid)

    whole = raw.strip()
    if whole in by_display:
        return ParsedLabels(
            labels=(by_display[whole],), unparsed_fragments=(), parse_status="exact"
        )
    whole_hits = by_norm.get(_normalize_token(whole), [])
    if len(whole_hits) == 1:
        return ParsedLabels(
            labels=(whole_hits[0],), unparsed_fragments=(), parse_status="normalized"
        )

    matched: list[str] = []
    tiers_used: list[int] = []
    fragments: list[str] = []
    for token in re.split(r"[\n,;]+", raw):
        token = token.strip()
        if not token:
            continue
        if token in by_display:
            hit, tier = by_display[token], "exact"
        else:
            norm = _normalize_token(token)
            norm_hits = by_norm.get(norm, [])
            if len(norm_hits) == 1:
                hit, tier = norm_hits[0], "normalized"
            elif norm:
                threshold = max(1, math.ceil(len(norm) / 10))
                best: list[str] = []
                best_d = threshold + 1
                for cand_norm, cids in by_norm.items():
                    d = levenshtein(norm, cand_norm)
                    if d < best_d:
                        best_d, best = d, list(cids)
                    elif d == best_d:
                        best.extend(cids)
                if best_d <= threshold and len(best) == 1:
                    hit, tier = best[0], "fuzzy"
                else:
                    fragments.append(token)
                    continue
            else:
                fragments.append(token)
                continue
        if hit not in matched:
            matched.append(hit)
            tiers_used.append(_TIERS[tier])

    if cap is not None:
        matched = matched[:cap]
        tiers_used = tiers_used[: len(matched)]
    if not matched:
        return ParsedLabels(
            labels=(), unparsed_fragments=tuple(fragments), parse_status="failed"
        )
    worst = max(tiers_used)
    status = {v: k for k, v in _TIERS.items()}[worst]
    return ParsedLabels(
        labels=tuple(matched), unparsed_fragments=tuple(fragments), parse_status=status
    )


def parse_labels(raw: str, taxonomy: Taxonomy, cap: int | None = None) -> ParsedLabels:
    """Map raw model output onto taxonomy labels (total, never raises)."""
    if cap is None:
        cap = taxonomy.max_labels
    pairs = [(lab.id, lab.display_name) for lab in taxonomy.labels]
    return match_tokens(raw, pairs, cap=cap)


# -------------------------------------------------------------- rendering

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


def _render_label_list(labels, mode: str) -> str:
    names = [lab.display_name for lab in labels]
    if mode == "names":
        return ", ".join(names)
    if mode == "names_with_descriptions":
        return "\n".join(
            f"{lab.display_name}: {lab.description}" if lab.description else lab.display_name
            for lab in labels
        )
    if mode == "numbered":
        return "\n".join(f"{i}. {name}" for i, name in enumerate(names, start=1))
    raise TemplateError(f"unknown render_labels_as mode {mode!r}")


def render_instruction(template: PromptTemplate, labels) -> str:
    """Render only the task statement: {text} resolves to the empty string.

    Used by the fine-tuning exporter, which keeps instruction and document
    text in separate fields.
    """
    variables = {
        "text": "",
        "labels": _render_label_list(labels, template.render_labels_as),
        "label_descriptions": _render_label_list(labels, "names_with_descriptions"),
    }

    def repl(m: re.Match) -> str:
        name = m.group(1)
        if name not in variables:
            raise TemplateError(
                f"template {template.id!r} references unknown placeholder {{{name}}}"
            )
        return variables[name]

    return _PLACEHOLDER.sub(repl, template.user).strip()


def render(template: PromptTemplate, doc, labels) -> list[dict]:
    """Render a prompt template into chat messages.

    Placeholders: {text}, {labels}, {label_descriptions}. Label order follows
    the caller's list, which should follow taxonomy order.
    """
    variables = {
        "text": doc.text,
        "labels": _render_label_list(labels, template.render_labels_as),
        "label_descriptions": _render_label_list(labels, "names_with_descriptions"),
    }

    def substitute(text: str) -> str:
        def repl(m: re.Match) -> str:
            name = m.group(1)
            if name not in variables:
                raise TemplateError(
                    f"template {template.id!r} references unknown placeholder {{{name}}}"
                )
            return variables[name]

        return _PLACEHOLDER.sub(repl, text)

    messages = []
    system = substitute(template.system).strip()
    if system:
        messages.append({"role": "system", "content": system})
    user = substitute(template.user)
    if not user.strip():
        raise TemplateError(f"template {template.id!r} rendered an empty user prompt")
    messages.append({"role": "user", "content": user})
    return messages
