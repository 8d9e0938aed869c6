"""Annotated-example store and similarity retrieval for in-context prompting.

The store holds the ~50 expert-annotated examples (programs for the code
prompt, caption/answer pairs for the QA prompt) with their embedding vectors.
Retrieval is exhaustive cosine ranking; at this scale nothing fancier pays
for itself.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field

from .proglang import UnsupportedSyntax, parse_source

EXAMPLE_KINDS = ("code", "qa")


class RetrievalError(ValueError):
    pass


@dataclass(frozen=True)
class Example:
    """One annotated example.

    kind "code" carries a program; kind "qa" carries per-image caption lists
    plus the gold answer used in the caption-QA prompt.
    """

    id: str
    question: str
    kind: str
    embedding: tuple
    program: str | None = None
    captions: tuple | None = None  # one tuple of captions per image, in order
    answer: str | None = None

    def __post_init__(self):
        if self.kind not in EXAMPLE_KINDS:
            raise RetrievalError(f"unknown example kind {self.kind!r}")
        if not self.embedding:
            raise RetrievalError(f"example {self.id}: empty embedding")
        object.__setattr__(self, "embedding", tuple(float(x) for x in self.embedding))
        if self.kind == "code":
            if not self.program:
                raise RetrievalError(f"example {self.id}: code example without program")
            try:
                parse_source(self.program)
            except UnsupportedSyntax as exc:
                raise RetrievalError(f"example {self.id}: program does not parse: {exc}") from exc
        else:
            if self.captions is None or self.answer is None:
                raise RetrievalError(f"example {self.id}: qa example needs captions and answer")
            object.__setattr__(
                self, "captions", tuple(tuple(group) for group in self.captions)
            )

    def to_json_obj(self) -> dict:
        obj = {"id": self.id, "question": self.question, "kind": self.kind}
        if self.kind == "code":
            obj["program"] = self.program
        else:
            obj["captions"] = [list(group) for group in self.captions]
            obj["answer"] = self.answer
        obj["embedding"] = list(self.embedding)
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "Example":
        return cls(
            id=obj["id"],
            question=obj["question"],
            kind=obj["kind"],
            embedding=tuple(obj["embedding"]),
            program=obj.get("program"),
            captions=tuple(tuple(g) for g in obj["captions"]) if "captions" in obj else None,
            answer=obj.get("answer"),
        )


@dataclass(frozen=True)
class ExampleStore:
    examples: tuple

    def __post_init__(self):
        if not self.examples:
            raise RetrievalError("example store is empty")
        dims = {len(ex.embedding) for ex in self.examples}
        if len(dims) != 1:
            raise RetrievalError(f"inconsistent embedding dimensions in store: {sorted(dims)}")

    @property
    def dimension(self) -> int:
        return len(self.examples[0].embedding)

    def of_kind(self, kind: str | None) -> list:
        if kind is None:
            return list(self.examples)
        return [ex for ex in self.examples if ex.kind == kind]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for ex in self.examples:
                fh.write(json.dumps(ex.to_json_obj(), ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path) -> "ExampleStore":
        examples = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    examples.append(Example.from_json_obj(json.loads(line)))
                except (json.JSONDecodeError, KeyError, RetrievalError) as exc:
                    raise RetrievalError(f"{path}, line {lineno}: {exc}") from exc
        return cls(tuple(examples))


def cosine(a, b) -> float:
    """Cosine similarity; zero vectors compare as 0 by convention."""
    a = tuple(a)
    b = tuple(b)
    if len(a) != len(b):
        raise RetrievalError(f"dimension mismatch: {len(a)} vs {len(b)}")
    dot = sum(x * y for x, y in zip(a, b))
    norm_a = math.sqrt(sum(x * x for x in a))
    norm_b = math.sqrt(sum(y * y for y in b))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return dot / (norm_a * norm_b)


def top_k(query_embedding, store: ExampleStore, k: int, kind: str | None = None) -> list:
    """The k most similar examples of the given kind, most similar first.

    Ties break by ascending store index, so results are reproducible across
    runs and store permutations (exactly so when similarities are distinct).
    """
    pool = [(i, ex) for i, ex in enumerate(store.examples) if kind is None or ex.kind == kind]
    if not 1 <= k <= len(pool):
        raise RetrievalError(
            f"need 1 <= k <= {len(pool)} examples of kind {kind or 'any'}, got k={k}"
        )
    ranked = sorted(pool, key=lambda pair: (-cosine(query_embedding, pair[1].embedding), pair[0]))
    return [ex for _, ex in ranked[:k]]


def random_k(store: ExampleStore, k: int, rng: random.Random, kind: str | None = None) -> list:
    """k distinct examples drawn uniformly without replacement."""
    pool = store.of_kind(kind)
    if not 1 <= k <= len(pool):
        raise RetrievalError(f"need 1 <= k <= {len(pool)} examples, got k={k}")
    return rng.sample(pool, k)


__all__ = [
    "EXAMPLE_KINDS",
    "Example",
    "ExampleStore",
    "RetrievalError",
    "cosine",
    "random_k",
    "top_k",
]
