"""Idea corpora: loading, label sets, and deterministic splits.

Corpus files are UTF-8 JSON-lines. The first line is a header object
``{"labels": [...]}`` declaring the ordered label set (index 0 is the
worst label). Every following line is one idea record::

    {"id": str, "title": str, "text": str, "label": name-or-null,
     "timestamp": int, "split": "train"|"validation"|"test"|null}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

SPLITS = ("train", "validation", "test")


class CorpusFormatError(ValueError):
    """Raised for malformed corpus files; carries the offending line."""

    def __init__(self, message: str, line_no: Optional[int] = None, raw: Optional[str] = None):
        self.line_no = line_no
        self.raw = raw
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class LabelSet:
    """Ordered set of quality label names; index 0 is the worst label."""

    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) < 2:
            raise ValueError(f"label set needs at least 2 labels, got {len(self.labels)}")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"duplicate label names in {list(self.labels)}")
        object.__setattr__(self, "labels", tuple(self.labels))

    def __len__(self) -> int:
        return len(self.labels)

    def index_of(self, name: str) -> int:
        try:
            return self.labels.index(name)
        except ValueError:
            raise ValueError(f"unknown label name {name!r}; known: {list(self.labels)}") from None

    def name_of(self, index: int) -> str:
        return self.labels[index]


@dataclass(frozen=True)
class Idea:
    """One research idea (id, title, body text, optional label, timestamp)."""

    id: str
    title: str
    text: str
    label: Optional[int] = None
    timestamp: int = 0
    split: Optional[str] = None

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"idea {self.id!r} has empty text")
        if self.timestamp < 0:
            raise ValueError(f"idea {self.id!r} has negative timestamp {self.timestamp}")
        if self.split is not None and self.split not in SPLITS:
            raise ValueError(f"idea {self.id!r} has unknown split {self.split!r}")


@dataclass
class Corpus:
    label_set: LabelSet
    ideas: list[Idea] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for idea in self.ideas:
            if idea.id in seen:
                raise ValueError(f"duplicate idea id {idea.id!r}")
            seen.add(idea.id)
            if idea.label is not None and not (0 <= idea.label < len(self.label_set)):
                raise ValueError(f"idea {idea.id!r} label {idea.label} out of range")
            if idea.split == "train" and idea.label is None:
                raise ValueError(f"train idea {idea.id!r} has no label")

    def __len__(self) -> int:
        return len(self.ideas)

    def by_id(self, idea_id: str) -> Idea:
        for idea in self.ideas:
            if idea.id == idea_id:
                return idea
        raise KeyError(idea_id)

    def split_ideas(self, split: str) -> list[Idea]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return [i for i in self.ideas if i.split == split]


def load_corpus(path: str | Path, label_set: Optional[LabelSet] = None) -> Corpus:
    """Parse a JSON-lines corpus file.

    The header line declares the label set; when ``label_set`` is given it
    must agree with the header. Record order is preserved.
    """
    path = Path(path)
    ideas: list[Idea] = []
    seen_lines: dict[str, int] = {}
    header_labels: Optional[LabelSet] = None
    with path.open("r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON ({exc.msg}): {line!r}", line_no, raw) from exc
            if header_labels is None:
                if not isinstance(obj, dict) or "labels" not in obj:
                    raise CorpusFormatError(
                        f"first line must be a header {{\"labels\": [...]}}, got: {line!r}",
                        line_no,
                        raw,
                    )
                header_labels = LabelSet(tuple(obj["labels"]))
                continue
            if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
                raise CorpusFormatError(f"record needs 'id' and 'text' fields: {line!r}", line_no, raw)
            idea_id = str(obj["id"])
            if idea_id in seen_lines:
                raise CorpusFormatError(
                    f"duplicate id {idea_id!r} (first seen on line {seen_lines[idea_id]})",
                    line_no,
                    raw,
                )
            seen_lines[idea_id] = line_no
            label_name = obj.get("label")
            if label_name is None:
                label = None
            else:
                try:
                    label = header_labels.index_of(str(label_name))
                except ValueError as exc:
                    raise CorpusFormatError(str(exc), line_no, raw) from exc
            try:
                ideas.append(
                    Idea(
                        id=idea_id,
                        title=str(obj.get("title", "")),
                        text=str(obj["text"]),
                        label=label,
                        timestamp=int(obj.get("timestamp", 0)),
                        split=obj.get("split"),
                    )
                )
            except ValueError as exc:
                raise CorpusFormatError(str(exc), line_no, raw) from exc
    if header_labels is None:
        raise CorpusFormatError("empty corpus file: missing header line", 1, "")
    if label_set is not None and tuple(label_set.labels) != tuple(header_labels.labels):
        raise CorpusFormatError(
            f"header labels {list(header_labels.labels)} do not match expected {list(label_set.labels)}"
        )
    return Corpus(label_set=header_labels, ideas=ideas)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"labels": list(corpus.label_set.labels)}) + "\n")
        for idea in corpus.ideas:
            rec = {
                "id": idea.id,
                "title": idea.title,
                "text": idea.text,
                "label": None if idea.label is None else corpus.label_set.name_of(idea.label),
                "timestamp": idea.timestamp,
                "split": idea.split,
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def split_corpus(
    corpus: Corpus,
    fractions: Sequence[float],
    seed: int,
) -> Corpus:
    """Assign train/validation/test tags deterministically.

    Split sizes are the rounded fractions of the corpus size (test takes
    the remainder). Ideas without labels are forced into the test split;
    there must be enough labeled ideas to fill train and validation.
    """
    if len(fractions) != 3:
        raise ValueError(f"need (train, validation, test) fractions, got {len(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    if any(f < 0 for f in fractions):
        raise ValueError(f"fractions must be non-negative, got {list(fractions)}")
    already = [i.id for i in corpus.ideas if i.split is not None]
    if already:
        raise ValueError(f"corpus already split (e.g. idea {already[0]!r}); refusing to resplit")

    n = len(corpus.ideas)
    n_train = round(n * fractions[0])
    n_val = round(n * fractions[1])
    n_test = n - n_train - n_val
    if n_test < 0:
        raise ValueError(f"rounded fractions overflow corpus of size {n}")

    unlabeled = [i for i, idea in enumerate(corpus.ideas) if idea.label is None]
    if len(unlabeled) > n_test:
        raise ValueError(
            f"{len(unlabeled)} unlabeled ideas cannot fit the test split of size {n_test}"
        )

    rng = np.random.default_rng(seed)
    order = [int(i) for i in rng.permutation(n)]
    labeled_order = [i for i in order if corpus.ideas[i].label is not None]
    assignment: dict[int, str] = {i: "test" for i in unlabeled}
    for pos, idx in enumerate(labeled_order):
        if pos < n_train:
            assignment[idx] = "train"
        elif pos < n_train + n_val:
            assignment[idx] = "validation"
        else:
            assignment[idx] = "test"

    ideas = [replace(idea, split=assignment[i]) for i, idea in enumerate(corpus.ideas)]
    return Corpus(label_set=corpus.label_set, ideas=ideas)


def label_distribution(corpus: Corpus, split: str) -> np.ndarray:
    """Fraction of each label within one split; fractions sum to 1."""
    ideas = corpus.split_ideas(split)
    if not ideas:
        raise ValueError(f"split {split!r} is empty")
    counts = np.zeros(len(corpus.label_set), dtype=float)
    for idea in ideas:
        if idea.label is None:
            raise ValueError(f"idea {idea.id!r} in split {split!r} has no label")
        counts[idea.label] += 1
    return counts / counts.sum()


@dataclass(frozen=True)
class IdeaViewpoints:
    """Viewpoints extracted from one idea, as stored in viewpoints.jsonl."""

    idea_id: str
    viewpoints: tuple[str, ...]
    timestamp: int = 0
    pairs: tuple[tuple[str, str, str, str], ...] = ()  # (left, connector, polarity, right)
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self):
        if not self.viewpoints:
            raise ValueError(f"idea {self.idea_id!r} has no viewpoints")
        object.__setattr__(self, "viewpoints", tuple(self.viewpoints))
        object.__setattr__(self, "pairs", tuple(tuple(p) for p in self.pairs))


def save_viewpoints(records: Iterable[IdeaViewpoints], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "idea_id": rec.idea_id,
                        "viewpoints": list(rec.viewpoints),
                        "timestamp": rec.timestamp,
                        "pairs": [list(p) for p in rec.pairs],
                        "prompt_tokens": rec.prompt_tokens,
                        "completion_tokens": rec.completion_tokens,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_viewpoints(path: str | Path) -> list[IdeaViewpoints]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            records.append(
                IdeaViewpoints(
                    idea_id=obj["idea_id"],
                    viewpoints=tuple(obj["viewpoints"]),
                    timestamp=int(obj.get("timestamp", 0)),
                    pairs=tuple(tuple(p) for p in obj.get("pairs", [])),
                    prompt_tokens=int(obj.get("prompt_tokens", 0)),
                    completion_tokens=int(obj.get("completion_tokens", 0)),
                )
            )
    return records
