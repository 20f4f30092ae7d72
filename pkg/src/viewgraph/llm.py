"""Chat-completion client for viewpoint and relation extraction.

Completions follow a bracketed block grammar: each input sentence gets a
``[Sentence N]`` header, its text, an ``[Extracted Viewpoints in Sentence N]``
header, then one bracketed item per viewpoint. Relation completions list
``{[left], [connector], [supporting|opposing], [right]}`` tuples.

Grammar tolerance (the remote model is not trusted to be exact): markers
match case-insensitively, prose between and after bracketed items is
ignored, nested brackets inside an item are rejected.

The mock backend derives its completion from the prompt alone (one
viewpoint per sentence of the abstract), so extraction is reproducible
offline and byte-identical across calls.
"""

from __future__ import annotations

import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import requests

from .dataset import Idea, IdeaViewpoints

POLARITIES = ("supporting", "opposing")


class LlmParseError(ValueError):
    """Completion text did not match the expected grammar."""

    def __init__(self, message: str, raw: str):
        self.raw = raw
        super().__init__(f"{message}; raw completion: {raw[:2000]!r}")


class LlmTransportError(RuntimeError):
    def __init__(self, message: str, attempts: int):
        self.attempts = attempts
        super().__init__(message)


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    price_per_million: float = 0.0

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0 or self.price_per_million < 0:
            raise ValueError("token counts and price must be non-negative")

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    @property
    def cost(self) -> float:
        return self.total * self.price_per_million / 1e6


@dataclass(frozen=True)
class ViewpointPair:
    left: str
    connector: str
    polarity: str
    right: str

    def __post_init__(self):
        if self.polarity not in POLARITIES:
            raise ValueError(f"polarity must be one of {POLARITIES}, got {self.polarity!r}")
        if _normalize(self.left) == _normalize(self.right):
            raise ValueError("pair endpoints must differ")


@dataclass(frozen=True)
class PromptTemplate:
    """Template with {title}, {abstract}, {viewpoints} placeholders."""

    name: str
    body: str

    PLACEHOLDERS = ("{title}", "{abstract}", "{viewpoints}")

    def render(self, **values: str) -> str:
        out = self.body
        for key, val in values.items():
            out = out.replace("{" + key + "}", val)
        left = [p for p in self.PLACEHOLDERS if p in out]
        if left:
            raise ValueError(f"unbound placeholders {left} in template {self.name!r}")
        return out


VIEWPOINT_TEMPLATE = PromptTemplate(
    name="viewpoint_extraction",
    body=(
        "You are an annotator. Work through the abstract below sentence by sentence\n"
        "and pull out every viewpoint stated in each sentence. A viewpoint is one\n"
        "atomic idea, argument, or fact, granular enough that it cannot be split\n"
        "further. A sentence may hold one or several viewpoints. Rewrite pronouns\n"
        "and elided subjects so that every viewpoint stands on its own.\n"
        "\n"
        "Answer in exactly this layout, one block per sentence:\n"
        "\n"
        "[Sentence 1]\n"
        "<the sentence>\n"
        "[Extracted Viewpoints in Sentence 1]\n"
        "[<first viewpoint>]\n"
        "[<second viewpoint>]\n"
        "\n"
        "Title: {title}\n"
        "\n"
        "[The Start of Abstract]\n"
        "{abstract}\n"
        "[The End of Abstract]\n"
    ),
)

RELATION_TEMPLATE = PromptTemplate(
    name="relation_extraction",
    body=(
        "You are an annotator. Below are an abstract and the viewpoints extracted\n"
        "from it. Find pairs of semantically related viewpoints. For each pair give\n"
        "a logical connector and say whether the relation is \"supporting\"\n"
        "(continuation, cause-effect, exemplification, ...) or \"opposing\"\n"
        "(contrast, contradiction, ...).\n"
        "\n"
        "Write one pair per line in exactly this form:\n"
        "{[<viewpoint one>], [<connector>], [supporting or opposing], [<viewpoint two>]}\n"
        "\n"
        "Title: {title}\n"
        "\n"
        "[The Start of Abstract]\n"
        "{abstract}\n"
        "[The End of Abstract]\n"
        "\n"
        "[The Start of Extracted Viewpoints]\n"
        "{viewpoints}\n"
        "[The End of Extracted Viewpoints]\n"
    ),
)


@dataclass
class LlmBackend:
    """Chat-completion endpoint handle; ``kind="mock"`` needs no network."""

    kind: str = "mock"  # "mock" | "remote"
    endpoint: str = ""
    model: str = ""
    temperature: float = 0.1
    max_retries: int = 3
    backoff: float = 1.0
    price_per_million: float = 0.0
    seed: int = 0
    max_inflight: int = 4
    api_key_env: str = "VIEWGRAPH_API_KEY"

    def __post_init__(self):
        if self.kind not in ("mock", "remote"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if not (0.0 <= self.temperature <= 2.0):
            raise ValueError(f"temperature must be in [0, 2], got {self.temperature}")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote backend needs an endpoint URL")

    def complete(self, prompt: str, purpose: str) -> tuple[str, TokenUsage]:
        if self.kind == "mock":
            text = _mock_completion(prompt, purpose, self.seed)
            usage = TokenUsage(_word_count(prompt), _word_count(text), self.price_per_million)
            return text, usage
        return self._remote_complete(prompt)

    def _remote_complete(self, prompt: str) -> tuple[str, TokenUsage]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        }
        last: Optional[Exception] = None
        for attempt in range(1, self.max_retries + 1):
            try:
                resp = requests.post(self.endpoint, json=payload, headers=headers, timeout=120)
                resp.raise_for_status()
                body = resp.json()
                text = body["choices"][0]["message"]["content"]
                usage = body.get("usage") or {}
                pt = usage.get("prompt_tokens")
                ct = usage.get("completion_tokens")
                if pt is None or ct is None:
                    # provider omitted usage metadata: approximate by word count
                    pt, ct = _word_count(prompt), _word_count(text)
                return text, TokenUsage(int(pt), int(ct), self.price_per_million)
            except requests.RequestException as exc:
                last = exc
                if attempt < self.max_retries:
                    time.sleep(self.backoff * 2 ** (attempt - 1))
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise LlmParseError(f"malformed completion payload: {exc}", resp.text) from exc
        raise LlmTransportError(
            f"chat completion failed after {self.max_retries} attempts: {last}", self.max_retries
        )


def _word_count(text: str) -> int:
    return len(text.split())


def _normalize(text: str) -> str:
    return " ".join(text.lower().split())


_VIEWPOINT_HEADER_RE = re.compile(r"\[\s*extracted viewpoints[^\[\]]*\]", re.IGNORECASE)
_SENTENCE_MARKER_RE = re.compile(r"^sentence\b[^\[\]]*$", re.IGNORECASE)


def parse_viewpoint_response(raw: str) -> list[str]:
    """Pull viewpoint texts out of a bracketed completion, document order."""
    headers = list(_VIEWPOINT_HEADER_RE.finditer(raw))
    if not headers:
        raise LlmParseError("no '[Extracted Viewpoints ...]' marker found", raw)
    viewpoints: list[str] = []
    for h, header in enumerate(headers):
        start = header.end()
        stop = headers[h + 1].start() if h + 1 < len(headers) else len(raw)
        pos = start
        while pos < stop:
            open_at = raw.find("[", pos, stop)
            if open_at < 0:
                break
            close_at = raw.find("]", open_at + 1, stop)
            if close_at < 0:
                break  # unclosed bracket: trailing prose, ignored
            content = raw[open_at + 1 : close_at]
            if "[" in content:
                raise LlmParseError("nested bracket inside a viewpoint item", raw)
            if _SENTENCE_MARKER_RE.match(content.strip()):
                break  # next sentence block begins
            text = content.strip()
            if text:
                viewpoints.append(text)
            pos = close_at + 1
    return viewpoints


def render_viewpoint_response(groups: Sequence[tuple[str, Sequence[str]]]) -> str:
    """Inverse of the parser: sentence/viewpoint groups -> completion text."""
    parts = []
    for i, (sentence, views) in enumerate(groups, start=1):
        if not views:
            raise ValueError(f"sentence {i} has no viewpoints")
        for v in views:
            if "[" in v or "]" in v:
                raise ValueError(f"viewpoint may not contain brackets: {v!r}")
            if not v.strip():
                raise ValueError("viewpoint may not be blank")
            if _SENTENCE_MARKER_RE.match(v.strip()):
                raise ValueError(f"viewpoint collides with a sentence marker: {v!r}")
        parts.append(f"[Sentence {i}]")
        parts.append(sentence)
        parts.append(f"[Extracted Viewpoints in Sentence {i}]")
        parts.extend(f"[{v}]" for v in views)
    return "\n".join(parts)


_PAIR_RE = re.compile(
    r"\{\s*\[([^\[\]]*)\]\s*,\s*\[([^\[\]]*)\]\s*,\s*\[([^\[\]]*)\]\s*,\s*\[([^\[\]]*)\]\s*\}",
    re.DOTALL,
)


@dataclass
class RelationResult:
    pairs: list[ViewpointPair] = field(default_factory=list)
    usage: TokenUsage = TokenUsage()
    dropped: int = 0


def parse_relation_response(raw: str, viewpoints: Sequence[str]) -> tuple[list[ViewpointPair], int]:
    """Parse relation tuples; endpoints must match the input viewpoint list.

    Pairs with unmatched endpoints, unknown polarity, or equal endpoints
    are dropped and counted, not fatal. Duplicates (same unordered
    endpoint pair and polarity) are collapsed.
    """
    lookup = {_normalize(v): v for v in viewpoints}
    pairs: list[ViewpointPair] = []
    seen: set[tuple[frozenset, str]] = set()
    dropped = 0
    for m in _PAIR_RE.finditer(raw):
        left_raw, connector, polarity_raw, right_raw = (g.strip() for g in m.groups())
        left = lookup.get(_normalize(left_raw))
        right = lookup.get(_normalize(right_raw))
        polarity = next((p for p in POLARITIES if polarity_raw.lower().startswith(p[:6])), None)
        if left is None or right is None or polarity is None or _normalize(left) == _normalize(right):
            dropped += 1
            continue
        key = (frozenset((_normalize(left), _normalize(right))), polarity)
        if key in seen:
            continue
        seen.add(key)
        pairs.append(ViewpointPair(left=left, connector=connector, polarity=polarity, right=right))
    return pairs, dropped


def extract_viewpoints(
    idea: Idea,
    backend: LlmBackend,
    template: PromptTemplate = VIEWPOINT_TEMPLATE,
) -> tuple[list[str], TokenUsage]:
    """One prompted call; returns >= 1 viewpoint texts in document order."""
    if not idea.text:
        raise ValueError(f"idea {idea.id!r} has empty text")
    prompt = template.render(title=idea.title, abstract=idea.text)
    completion, usage = backend.complete(prompt, purpose=template.name)
    texts = parse_viewpoint_response(completion)
    if not texts:
        raise LlmParseError("completion contained no viewpoint items", completion)
    return texts, usage


def extract_relations(
    viewpoints: Sequence[str],
    idea: Idea,
    backend: LlmBackend,
    template: PromptTemplate = RELATION_TEMPLATE,
) -> RelationResult:
    if len(viewpoints) < 2:
        raise ValueError("relation extraction needs at least 2 viewpoints")
    listing = "\n".join(f"[{v}]" for v in viewpoints)
    prompt = template.render(title=idea.title, abstract=idea.text, viewpoints=listing)
    completion, usage = backend.complete(prompt, purpose=template.name)
    pairs, dropped = parse_relation_response(completion, viewpoints)
    return RelationResult(pairs=pairs, usage=usage, dropped=dropped)


def token_cost(usages: Sequence[TokenUsage]) -> tuple[float, float]:
    """(average tokens per evaluation, average currency cost)."""
    if not usages:
        raise ValueError("no usages to average")
    avg_tokens = sum(u.total for u in usages) / len(usages)
    avg_cost = sum(u.cost for u in usages) / len(usages)
    return avg_tokens, avg_cost


# --- mock backend ---------------------------------------------------------

_ABSTRACT_RE = re.compile(
    r"\[The Start of Abstract\]\s*(.*?)\s*\[The End of Abstract\]", re.DOTALL
)
_VIEWPOINT_LIST_RE = re.compile(
    r"\[The Start of Extracted Viewpoints\]\s*(.*?)\s*\[The End of Extracted Viewpoints\]",
    re.DOTALL,
)
_CONNECTORS = ("therefore", "moreover", "however", "for example")


def _split_sentences(text: str) -> list[str]:
    parts = re.split(r"(?<=[.!?])\s+", text.strip())
    return [p.strip() for p in parts if p.strip()]


def _sanitize(text: str) -> str:
    # mock output must stay inside the bracket grammar
    return re.sub(r"[\[\]{}]", "", text).strip()


def _mock_completion(prompt: str, purpose: str, seed: int) -> str:
    if purpose == "relation_extraction":
        return _mock_relations(prompt, seed)
    return _mock_viewpoints(prompt)


def _mock_viewpoints(prompt: str) -> str:
    m = _ABSTRACT_RE.search(prompt)
    abstract = m.group(1) if m else prompt
    sentences = [_sanitize(s) for s in _split_sentences(abstract)]
    sentences = [s for s in sentences if s]
    if not sentences:
        sentences = [_sanitize(abstract) or "empty abstract"]
    return render_viewpoint_response([(s, [s]) for s in sentences])


def _mock_relations(prompt: str, seed: int) -> str:
    m = _VIEWPOINT_LIST_RE.search(prompt)
    if not m:
        return ""
    views = parse_viewpoint_response("[Extracted Viewpoints in Sentence 1]\n" + m.group(1))
    lines = []
    for i in range(0, len(views) - 1, 2):
        connector = _CONNECTORS[(seed + i) % len(_CONNECTORS)]
        polarity = POLARITIES[(seed + i // 2) % 2]
        lines.append(f"{{[{views[i]}], [{connector}], [{polarity}], [{views[i + 1]}]}}")
    return "\n".join(lines)


# --- batch extraction over a corpus ---------------------------------------


def extract_corpus(
    ideas: Sequence[Idea],
    backend: LlmBackend,
    relations: bool = False,
    template: PromptTemplate = VIEWPOINT_TEMPLATE,
    relation_template: PromptTemplate = RELATION_TEMPLATE,
) -> tuple[list[IdeaViewpoints], dict]:
    """Extract viewpoints (and optionally relations) for every idea.

    Remote calls run concurrently up to ``backend.max_inflight``; results
    are returned in input order. The summary dict reports the aggregates
    (viewpoints per idea, words per viewpoint, pair density when relations
    are on) plus token totals.
    """

    def one(idea: Idea) -> IdeaViewpoints:
        texts, usage = extract_viewpoints(idea, backend, template)
        pairs: tuple = ()
        dropped = 0
        prompt_tokens, completion_tokens = usage.prompt_tokens, usage.completion_tokens
        if relations and len(texts) >= 2:
            rel = extract_relations(texts, idea, backend, relation_template)
            pairs = tuple((p.left, p.connector, p.polarity, p.right) for p in rel.pairs)
            dropped = rel.dropped
            prompt_tokens += rel.usage.prompt_tokens
            completion_tokens += rel.usage.completion_tokens
        rec = IdeaViewpoints(
            idea_id=idea.id,
            viewpoints=tuple(texts),
            timestamp=idea.timestamp,
            pairs=pairs,
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
        )
        return rec, dropped

    if backend.kind == "remote" and backend.max_inflight > 1 and len(ideas) > 1:
        with ThreadPoolExecutor(max_workers=backend.max_inflight) as pool:
            results = list(pool.map(one, ideas))
    else:
        results = [one(idea) for idea in ideas]

    records = [r for r, _ in results]
    dropped_pairs = sum(d for _, d in results)
    summary = summarize_extraction(records, backend.price_per_million, relations)
    summary["dropped_pairs"] = dropped_pairs
    return records, summary


def summarize_extraction(
    records: Sequence[IdeaViewpoints], price_per_million: float = 0.0, relations: bool = False
) -> dict:
    n_views = [len(r.viewpoints) for r in records]
    words = [_word_count(v) for r in records for v in r.viewpoints]
    usages = [
        TokenUsage(r.prompt_tokens, r.completion_tokens, price_per_million) for r in records
    ]
    avg_tokens, avg_cost = token_cost(usages) if usages else (0.0, 0.0)
    summary = {
        "ideas": len(records),
        "avg_viewpoints_per_idea": sum(n_views) / len(n_views) if n_views else 0.0,
        "avg_words_per_viewpoint": sum(words) / len(words) if words else 0.0,
        "avg_tokens_per_evaluation": avg_tokens,
        "avg_cost_per_evaluation": avg_cost,
    }
    if relations:
        pair_counts = [len(r.pairs) for r in records]
        densities = [
            len(r.pairs) / (n * (n - 1) / 2)
            for r, n in zip(records, n_views)
            if n >= 2
        ]
        summary["total_pairs"] = sum(pair_counts)
        summary["avg_pairs_per_idea"] = sum(pair_counts) / len(records) if records else 0.0
        summary["avg_edge_density"] = sum(densities) / len(densities) if densities else 0.0
    return summary
