"""Training-free evaluation by label propagation over the viewpoint-graph.

Nodes of labeled train ideas start as one-hot vectors over the label set,
everything else starts at zero. Each iteration adds every node's
weight-normalized neighbor vectors to its own and rescales the result to
the probability simplex (all-zero vectors stay zero). An idea's label is
the argmax of its summed node vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Corpus
from .graph import ViewpointGraph


@dataclass(frozen=True)
class LpConfig:
    max_iters: int = 5
    early_stop: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass
class LpPrediction:
    idea_id: str
    label_index: int
    vector: list[float]
    unreached: bool = False


def init_vectors(graph: ViewpointGraph, corpus: Corpus) -> np.ndarray:
    """One row per node: one-hot for labeled train ideas, zero otherwise."""
    ideas = {idea.id: idea for idea in corpus.ideas}
    vectors = np.zeros((len(graph), len(corpus.label_set)), dtype=np.float64)
    for node in graph.nodes:
        idea = ideas.get(node.idea_id)
        if idea is None:
            raise ValueError(f"node {node.id} belongs to unknown idea {node.idea_id!r}")
        if idea.split == "train":
            if idea.label is None:
                raise ValueError(f"train idea {idea.id!r} has no label")
            vectors[node.id, idea.label] = 1.0
    return vectors


def normalize_weights(graph: ViewpointGraph) -> list[list[tuple[int, float]]]:
    """Per-node outgoing weights rescaled to sum to 1.

    Normalization is per-direction: the same undirected edge may carry a
    different normalized weight from each endpoint's perspective. Nodes
    with zero total incident weight get an empty list.
    """
    out: list[list[tuple[int, float]]] = []
    for node_id in range(len(graph)):
        incident = graph.neighbors(node_id)
        total = sum(w for _, w in incident)
        if total <= 0.0:
            out.append([])
        else:
            out.append([(nbr, w / total) for nbr, w in incident])
    return out


def propagate(
    vectors: np.ndarray,
    weights: Sequence[Sequence[tuple[int, float]]],
    config: LpConfig = LpConfig(),
) -> np.ndarray:
    """Synchronous propagation for up to max_iters iterations.

    Each new vector is L1-normalized (zero vectors stay zero). With
    early_stop, iteration ends once no node's argmax label changes.
    """
    current = np.array(vectors, dtype=np.float64)
    labels = np.argmax(current, axis=1)
    for _ in range(config.max_iters):
        updated = current.copy()
        for i, nbrs in enumerate(weights):
            for j, w in nbrs:
                updated[i] += w * current[j]
        norms = updated.sum(axis=1)
        nonzero = norms > 0.0
        updated[nonzero] /= norms[nonzero, None]
        current = updated
        new_labels = np.argmax(current, axis=1)
        if config.early_stop and np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return current


def predict_idea(vectors: np.ndarray, node_ids: Sequence[int]) -> tuple[int, bool]:
    """Argmax of the idea's summed node vectors; ties go to the lowest
    label index; an all-zero sum falls back to label 0 and is flagged."""
    if not node_ids:
        raise ValueError("idea has no nodes")
    summed = vectors[list(node_ids)].sum(axis=0)
    if not summed.any():
        return 0, True
    return int(np.argmax(summed)), False


def run(
    graph: ViewpointGraph,
    corpus: Corpus,
    config: LpConfig = LpConfig(),
    split: str = "test",
) -> list[LpPrediction]:
    vectors = propagate(init_vectors(graph, corpus), normalize_weights(graph), config)
    predictions = []
    for idea in corpus.split_ideas(split):
        node_ids = graph.idea_nodes.get(idea.id)
        if not node_ids:
            raise ValueError(f"idea {idea.id!r} has no nodes in the graph")
        label, unreached = predict_idea(vectors, node_ids)
        summed = vectors[node_ids].sum(axis=0)
        predictions.append(
            LpPrediction(
                idea_id=idea.id,
                label_index=label,
                vector=[float(x) for x in summed],
                unreached=unreached,
            )
        )
    return predictions


def save_predictions(
    predictions: Sequence[LpPrediction], corpus: Corpus, path: str | Path
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for p in predictions:
            fh.write(
                json.dumps(
                    {
                        "id": p.idea_id,
                        "label": corpus.label_set.name_of(p.label_index),
                        "vector": p.vector,
                        "unreached": p.unreached,
                    }
                )
                + "\n"
            )
