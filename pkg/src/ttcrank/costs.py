"""Symbolic encoder-call accounting.

A program's extra work is a set of distinct encoded resources, each
charged once per task (resources are memoized inside a program run):

* ``("chunks", g)``            every chunk of granularity ``g``, index time
* ``("docs", adapter, limit)`` every document under ``adapter``, index time
* ``("queries", adapter)``     every query under ``adapter``, query time
* ``("expand", adapter, tag)`` one expanded query per query, query time
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .encoder import Phase

Resource = tuple


@dataclass(frozen=True)
class TaskSizes:
    n_queries: int
    n_docs: int
    sentence: int
    pair: int
    paragraph: int

    @property
    def baseline(self) -> int:
        return self.n_queries + self.n_docs

    @classmethod
    def from_texts(cls, texts) -> "TaskSizes":
        """Sizes of a :class:`~ttcrank.programs.context.TaskTexts`."""
        n = {g: len(texts.chunks(g)[0]) for g in ("sentence", "pair", "paragraph")}
        return cls(len(texts.query_texts), len(texts.doc_texts), n["sentence"], n["pair"], n["paragraph"])

    @classmethod
    def from_profile(cls, n_queries: int, n_docs: int, mean_words: int, words_per_sentence: int = 25,
                     sentences_per_paragraph: int = 4) -> "TaskSizes":
        s = max(1, math.ceil(mean_words / words_per_sentence))
        return cls(n_queries, n_docs, n_docs * s, n_docs * max(1, s - 1),
                   n_docs * math.ceil(s / sentences_per_paragraph))


def resource_cost(resource: Resource, sizes: TaskSizes) -> tuple[str, int]:
    kind = resource[0]
    if kind == "chunks":
        return Phase.INDEX_TIME.value, getattr(sizes, resource[1])
    if kind == "docs":
        return Phase.INDEX_TIME.value, sizes.n_docs
    if kind in ("queries", "expand"):
        return Phase.QUERY_TIME.value, sizes.n_queries
    raise ValueError(f"unknown resource {resource!r}")


def predict_phases(resources: Iterable[Resource], sizes: TaskSizes) -> dict[str, int]:
    out = {Phase.QUERY_TIME.value: 0, Phase.INDEX_TIME.value: 0}
    for r in set(resources):
        phase, n = resource_cost(r, sizes)
        out[phase] += n
    return out


def predict_ratio(resources: Iterable[Resource], sizes: Sequence[TaskSizes],
                  amortized: bool = False) -> float:
    """Pooled ``(T_base + T_prog) / T_base`` over a list of tasks."""
    resources = set(resources)
    base = extra = 0
    for sz in sizes:
        phases = predict_phases(resources, sz)
        base += sz.baseline
        extra += phases[Phase.QUERY_TIME.value]
        if not amortized:
            extra += phases[Phase.INDEX_TIME.value]
    return (base + extra) / base
