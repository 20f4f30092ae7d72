"""Novelty support: temporal node features and plagiarized negative samples.

Negative samples are synthetic ideas assembled from existing viewpoints
(copied outright, or partially swapped with random / nearest-neighbor
viewpoints), stamped strictly later than everything in the corpus and
labeled with the worst label. Injected into the graph and the training
set, they teach the GNN that late near-duplicates deserve low scores.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import Corpus, IdeaViewpoints
from .embedding import EmbeddingMatrix, EmbeddingProvider, embed
from .graph import INTER, GraphConfig, ViewpointGraph, integrate_subgraph, with_time_features

STRATEGIES = ("copy", "random-swap", "neighbor-swap")
ONE_DAY = 86400


@dataclass(frozen=True)
class TemporalEncoding:
    min_timestamp: int
    max_timestamp: int

    def feature(self, timestamp: int) -> float:
        """Min-max normalized time; 0 when the corpus spans a single instant."""
        span = self.max_timestamp - self.min_timestamp
        if span == 0:
            return 0.0
        return (timestamp - self.min_timestamp) / span


def encode_time(corpus: Corpus, extra_timestamps: Sequence[int] = ()) -> TemporalEncoding:
    ts = [idea.timestamp for idea in corpus.ideas] + list(extra_timestamps)
    if not ts:
        raise ValueError("cannot encode time over an empty corpus")
    return TemporalEncoding(min_timestamp=min(ts), max_timestamp=max(ts))


@dataclass(frozen=True)
class NegativeSample:
    id: str
    source_id: str
    strategy: str
    viewpoints: tuple[str, ...]
    timestamp: int
    label: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not self.viewpoints:
            raise ValueError(f"negative {self.id!r} has no viewpoints")
        object.__setattr__(self, "viewpoints", tuple(self.viewpoints))


def _even_shares(count: int, buckets: int) -> list[int]:
    base, extra = divmod(count, buckets)
    return [base + (1 if i < extra else 0) for i in range(buckets)]


def _inter_neighbors(graph: ViewpointGraph) -> dict[int, list[int]]:
    """Per node, cross-idea neighbors sorted by descending weight (ties:
    lower node id)."""
    ranked: dict[int, list[tuple[float, int]]] = {}
    for e in graph.edges:
        if e.kind != INTER:
            continue
        ranked.setdefault(e.u, []).append((e.weight, e.v))
        ranked.setdefault(e.v, []).append((e.weight, e.u))
    return {
        node: [other for _, other in sorted(nbrs, key=lambda t: (-t[0], t[1]))]
        for node, nbrs in ranked.items()
    }


def generate_negatives(
    corpus: Corpus,
    graph: ViewpointGraph,
    count: int,
    strategies: Sequence[str] = STRATEGIES,
    threshold: int = 1,
    swap_fraction: float = 0.5,
    seed: int = 0,
    negative_label: int = 0,
) -> tuple[list[NegativeSample], int]:
    """Build ``count`` plagiarized ideas, split as evenly as possible
    across the strategies, sourcing only ideas rated at or above
    ``threshold``. Returns (samples, fallback count), where fallbacks are
    neighbor-swap slots that degraded to random-swap for lack of a
    cross-idea neighbor.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if not (0.0 < swap_fraction <= 1.0):
        raise ValueError(f"swap fraction must be in (0, 1], got {swap_fraction}")
    for s in strategies:
        if s not in STRATEGIES:
            raise ValueError(f"unknown strategy {s!r}")
    sources = [i for i in corpus.ideas if i.label is not None and i.label >= threshold]
    if not sources:
        raise ValueError(f"no idea rated at or above label {threshold}")
    for idea in sources:
        if idea.id not in graph.idea_nodes:
            raise ValueError(f"source idea {idea.id!r} has no nodes in the graph")

    texts_by_idea = {
        iid: [graph.nodes[n].text for n in ids] for iid, ids in graph.idea_nodes.items()
    }
    other_pool = {
        iid: [t for other, ts in texts_by_idea.items() if other != iid for t in ts]
        for iid in texts_by_idea
    }
    inter_neighbors = _inter_neighbors(graph)
    neg_timestamp = max(i.timestamp for i in corpus.ideas) + ONE_DAY

    rng = np.random.default_rng(seed)
    samples: list[NegativeSample] = []
    fallbacks = 0
    serial = 0
    for strategy, share in zip(strategies, _even_shares(count, len(strategies))):
        for _ in range(share):
            source = sources[int(rng.integers(len(sources)))]
            texts = list(texts_by_idea[source.id])
            if strategy != "copy":
                n_swap = math.ceil(swap_fraction * len(texts))
                positions = sorted(
                    int(p) for p in rng.choice(len(texts), size=n_swap, replace=False)
                )
                for pos in positions:
                    use_random = strategy == "random-swap"
                    if strategy == "neighbor-swap":
                        # most similar cross-idea neighbor whose text differs
                        node_id = graph.idea_nodes[source.id][pos]
                        nbr = next(
                            (
                                n
                                for n in inter_neighbors.get(node_id, ())
                                if graph.nodes[n].text != texts[pos]
                            ),
                            None,
                        )
                        if nbr is None:
                            use_random = True
                            fallbacks += 1
                        else:
                            texts[pos] = graph.nodes[nbr].text
                    if use_random:
                        pool = [t for t in other_pool[source.id] if t != texts[pos]]
                        if not pool:
                            fallbacks += 1
                            continue
                        texts[pos] = pool[int(rng.integers(len(pool)))]
            samples.append(
                NegativeSample(
                    id=f"neg-{strategy}-{serial:03d}",
                    source_id=source.id,
                    strategy=strategy,
                    viewpoints=tuple(texts),
                    timestamp=neg_timestamp,
                    label=negative_label,
                )
            )
            serial += 1
    return samples, fallbacks


def select_training_negatives(
    samples: Sequence[NegativeSample], k: int, seed: int = 0
) -> tuple[list[NegativeSample], list[NegativeSample]]:
    """Uniformly pick k samples for training; the rest are held out."""
    if k >= len(samples):
        return list(samples), []
    rng = np.random.default_rng(seed)
    chosen = set(int(i) for i in rng.choice(len(samples), size=k, replace=False))
    train = [s for i, s in enumerate(samples) if i in chosen]
    rest = [s for i, s in enumerate(samples) if i not in chosen]
    return train, rest


def inject_negatives(
    graph: ViewpointGraph,
    matrix: EmbeddingMatrix,
    negatives: Sequence[NegativeSample],
    corpus: Corpus,
    config: Optional[GraphConfig] = None,
    provider: Optional[EmbeddingProvider] = None,
) -> tuple[ViewpointGraph, EmbeddingMatrix]:
    """Integrate each negative as a new subgraph; returns the enlarged
    graph and embedding matrix.

    Negatives reuse the embedding row of any existing node with the same
    text (copies therefore connect to their sources at weight 1). All
    temporal features are re-encoded over corpus plus negatives, so the
    negatives carry the latest feature and everything stays in [0, 1].
    """
    config = config or graph.config
    corpus_ids = {i.id for i in corpus.ideas}
    for neg in negatives:
        if neg.id in corpus_ids or neg.id in graph.idea_nodes:
            raise ValueError(f"negative id {neg.id!r} collides with an existing idea")

    by_text: dict[str, np.ndarray] = {}
    for node in graph.nodes:
        by_text.setdefault(node.text, matrix.rows[node.row])

    encoding = encode_time(corpus, [n.timestamp for n in negatives])
    features: dict[str, float] = {i.id: encoding.feature(i.timestamp) for i in corpus.ideas}
    # previously injected ideas are absent from the corpus: keep their feature
    for idea_id, node_ids in graph.idea_nodes.items():
        if idea_id not in features:
            features[idea_id] = graph.nodes[node_ids[0]].t

    for neg in negatives:
        rows = []
        for text in neg.viewpoints:
            vec = by_text.get(text)
            if vec is None:
                if provider is None:
                    raise ValueError(
                        f"negative {neg.id!r} has viewpoint text absent from the graph "
                        "and no embedding provider was given"
                    )
                vec = embed([text], provider).rows[0]
            rows.append(vec)
        matrix = matrix.extend(np.stack(rows))
        record = IdeaViewpoints(
            idea_id=neg.id, viewpoints=neg.viewpoints, timestamp=neg.timestamp
        )
        t = encoding.feature(neg.timestamp)
        graph = integrate_subgraph(graph, record, matrix, config, t=t)
        features[neg.id] = t
        for text, row in zip(neg.viewpoints, graph.idea_nodes[neg.id]):
            by_text.setdefault(text, matrix.rows[row])

    graph = with_time_features(graph, features)
    return graph, matrix


def save_negatives(samples: Sequence[NegativeSample], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(
                json.dumps(
                    {
                        "id": s.id,
                        "source_id": s.source_id,
                        "strategy": s.strategy,
                        "viewpoints": list(s.viewpoints),
                        "timestamp": s.timestamp,
                        "label": s.label,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_negatives(path: str | Path) -> list[NegativeSample]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out.append(
                NegativeSample(
                    id=obj["id"],
                    source_id=obj["source_id"],
                    strategy=obj["strategy"],
                    viewpoints=tuple(obj["viewpoints"]),
                    timestamp=int(obj["timestamp"]),
                    label=int(obj.get("label", 0)),
                )
            )
    return out
