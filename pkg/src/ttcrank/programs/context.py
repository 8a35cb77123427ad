"""Program context, global constants, and channel bookkeeping."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..embedding import cosine_scores
from ..encoder import Adapter, CostMeter, Encoder, Phase
from ..fusion import rrf_scores
from ..text import TokenStats, chunk_document, tokenize


@dataclass(frozen=True)
class ProgramConstants:
    """Task-universal constants; identical for every task in a run."""

    zscore_eps: float = 1e-8
    rrf_k: float = 0.0
    residual_min_norm: float = 0.1
    degenerate_norm: float = 1e-12
    topic_max_tokens: int = 128
    min_group: int = 2
    expansion_sep: str = " "
    soft_k: int = 3
    soft_alpha: float = 0.5
    soft_tau: float = 0.05
    bm25_k1: float = 1.2
    bm25_b: float = 0.75

    def as_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


DEFAULT_CONSTANTS = ProgramConstants()


def top_quarter_size(n: int, min_group: int = 2) -> int:
    return min(n, max(min_group, math.ceil(n / 4)))


def top_half_size(n: int, min_group: int = 2) -> int:
    return min(n, max(min_group, math.ceil(n / 2)))


def bottom_half_size(n: int) -> int:
    return n // 2


@dataclass
class Channel:
    """One scoring view over the shortlist, for every query at once.

    ``active`` marks the queries for which the channel exists; a channel
    can be dropped for individual queries (degenerate directions, gates).
    """

    label: str
    scores: np.ndarray
    active: Optional[np.ndarray] = None

    def on(self, i: int) -> bool:
        return self.active is None or bool(self.active[i])


def fuse_rrf(channels: Sequence[Channel], k: float = 0.0) -> np.ndarray:
    nq, nd = channels[0].scores.shape
    out = np.zeros((nq, nd))
    for i in range(nq):
        rows = [c.scores[i] for c in channels if c.on(i)]
        out[i] = rrf_scores(rows, k=k)
    return out


class TaskTexts:
    """Tokenization and chunking of one task's texts; encoder-free, shared."""

    def __init__(self, query_texts: Sequence[str], doc_texts: Sequence[str]):
        self.query_texts = list(query_texts)
        self.doc_texts = list(doc_texts)
        self.query_tokens = [tokenize(t) for t in self.query_texts]
        self.doc_tokens = [tokenize(t) for t in self.doc_texts]
        self.token_stats = TokenStats.from_token_lists(self.doc_tokens)
        self._chunks: dict[str, tuple[list[str], np.ndarray, list[list[str]]]] = {}
        self._lexical: dict[str, np.ndarray] = {}

    def chunks(self, granularity: str) -> tuple[list[str], np.ndarray]:
        got = self._chunks.get(granularity)
        if got is None:
            texts, owner = [], []
            per_doc = []
            for d, doc in enumerate(self.doc_texts):
                pieces = chunk_document(doc, granularity) or [doc]
                per_doc.append(pieces)
                texts.extend(pieces)
                owner.extend([d] * len(pieces))
            got = (texts, np.asarray(owner, dtype=np.int64), per_doc)
            self._chunks[granularity] = got
        return got[0], got[1]

    def doc_chunks(self, granularity: str, d: int) -> list[str]:
        self.chunks(granularity)
        return self._chunks[granularity][2][d]

    def lexical(self, name: str, fn) -> np.ndarray:
        got = self._lexical.get(name)
        if got is None:
            got = np.array([[fn(q, d) for d in self.doc_tokens] for q in self.query_tokens],
                           dtype=np.float64).reshape(len(self.query_tokens), len(self.doc_tokens))
            self._lexical[name] = got
        return got


    def lexical_rows(self, name: str, fn) -> np.ndarray:
        """Like :meth:`lexical` for scorers that take a query and score every doc."""
        got = self._lexical.get(name)
        if got is None:
            got = np.array([fn(q) for q in self.query_tokens], dtype=np.float64).reshape(
                len(self.query_tokens), len(self.doc_tokens))
            self._lexical[name] = got
        return got


class ProgramContext:
    """Everything a program may read: ``Q``, ``D``, ``S`` and ``ctx`` services.

    Encoded resources (chunk embeddings, re-encoded views) are memoized
    per context, so one program run pays for each resource once.
    """

    def __init__(self, Q: np.ndarray, D: np.ndarray, texts: TaskTexts, encoder: Encoder,
                 constants: ProgramConstants = DEFAULT_CONSTANTS, S: np.ndarray | None = None):
        self.Q = Q
        self.D = D
        self.S = cosine_scores(Q, D) if S is None else S
        self.texts = texts
        self.encoder = encoder
        self.constants = constants
        self._memo: dict = {}

    @classmethod
    def build(cls, query_texts: Sequence[str], doc_texts: Sequence[str], encoder: Encoder,
              constants: ProgramConstants = DEFAULT_CONSTANTS) -> "ProgramContext":
        """Encode queries and documents once, charged to the baseline phase."""
        Q = encoder.encode_texts(query_texts, Adapter.QUERY, Phase.BASELINE)
        D = encoder.encode_texts(doc_texts, Adapter.PASSAGE, Phase.BASELINE)
        return cls(Q, D, TaskTexts(query_texts, doc_texts), encoder, constants)

    def fork(self, meter: CostMeter | None = None) -> "ProgramContext":
        """Fresh memo and meter over the same baseline; used once per program run."""
        if meter is None:
            meter = CostMeter(baseline_texts=self.n_queries + self.n_docs)
        return ProgramContext(self.Q, self.D, self.texts, self.encoder.with_meter(meter),
                              self.constants, self.S)

    @property
    def meter(self) -> CostMeter:
        return self.encoder.meter

    @property
    def n_queries(self) -> int:
        return self.Q.shape[0]

    @property
    def n_docs(self) -> int:
        return self.D.shape[0]

    @property
    def has_adapters(self) -> bool:
        return self.encoder.has_adapters

    @property
    def query_texts(self) -> list[str]:
        return self.texts.query_texts

    @property
    def doc_texts(self) -> list[str]:
        return self.texts.doc_texts

    @property
    def token_stats(self) -> TokenStats:
        return self.texts.token_stats

    def encode(self, texts, adapter, phase, max_input_tokens=None) -> np.ndarray:
        return self.encoder.encode_texts(texts, adapter, phase, max_input_tokens=max_input_tokens)

    def _memoized(self, key, make):
        got = self._memo.get(key)
        if got is None:
            got = make()
            self._memo[key] = got
        return got

    def chunk_embeddings(self, granularity: str) -> tuple[np.ndarray, np.ndarray]:
        """All chunks of all docs encoded in one passage-adapter batch (index time)."""
        texts, owner = self.texts.chunks(granularity)
        E = self._memoized(("chunks", granularity),
                           lambda: self.encode(texts, Adapter.PASSAGE, Phase.INDEX_TIME))
        return E, owner

    def doc_view(self, adapter, max_input_tokens: Optional[int] = None) -> np.ndarray:
        """Documents re-encoded under ``adapter`` (index time)."""
        adapter = Adapter.parse(adapter)
        return self._memoized(("docs", adapter, max_input_tokens),
                              lambda: self.encode(self.doc_texts, adapter, Phase.INDEX_TIME,
                                                  max_input_tokens))

    def query_view(self, adapter) -> np.ndarray:
        """Queries re-encoded under ``adapter`` (query time)."""
        adapter = Adapter.parse(adapter)
        return self._memoized(("queries", adapter),
                              lambda: self.encode(self.query_texts, adapter, Phase.QUERY_TIME))

    def encode_expansions(self, texts: Sequence[str], adapter) -> np.ndarray:
        adapter = Adapter.parse(adapter)
        return self._memoized(("expand", adapter, tuple(texts)),
                              lambda: self.encode(list(texts), adapter, Phase.QUERY_TIME))
