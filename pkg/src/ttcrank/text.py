"""Encoder-free lexical channels and document segmentation."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

_CJK = "\u3040-\u30ff\u3400-\u4dbf\u4e00-\u9fff\uf900-\ufaff\uac00-\ud7af"
_TOKEN_RE = re.compile(rf"([{_CJK}])|([A-Za-z0-9_]+)|([^\W\x00-\x7f{_CJK}]+)")
_SENT_END_RE = re.compile(r"[.?!](?=\s|$)")
_PARA_RE = re.compile(r"\n[ \t\r\f\v]*\n")

MIN_SENTENCE_CHARS = 3
WINDOW_TOKENS = 200
WINDOW_OVERLAP = 0


def tokenize(text: str) -> list[str]:
    """Lowercased ASCII word runs; each CJK codepoint is its own token.

    Runs of other-script word characters are kept whole, which amounts to
    whitespace splitting for scripts that separate words with spaces.
    """
    return [m.group(0).lower() for m in _TOKEN_RE.finditer(text)]


def _windows(text: str) -> list[str]:
    words = text.split()
    step = WINDOW_TOKENS - WINDOW_OVERLAP
    return [" ".join(words[i : i + WINDOW_TOKENS]) for i in range(0, len(words), step)]


def split_sentences(text: str) -> list[str]:
    """Split on terminal punctuation followed by whitespace or end of text.

    Fragments shorter than three characters are merged into their
    predecessor. Text without terminal punctuation and longer than one
    window is cut into consecutive 200-word windows.
    """
    stripped = text.strip()
    if not stripped:
        return [text]
    cuts = [m.end() for m in _SENT_END_RE.finditer(stripped)]
    if not cuts:
        if len(stripped.split()) > WINDOW_TOKENS:
            return _windows(stripped)
        return [stripped]
    if cuts[-1] != len(stripped):
        cuts.append(len(stripped))
    pieces, start = [], 0
    for end in cuts:
        piece = stripped[start:end].strip()
        start = end
        if not piece:
            continue
        if len(piece) < MIN_SENTENCE_CHARS and pieces:
            pieces[-1] = f"{pieces[-1]} {piece}"
        else:
            pieces.append(piece)
    # a short leading fragment has no predecessor; fold it forward
    if len(pieces) > 1 and len(pieces[0]) < MIN_SENTENCE_CHARS:
        pieces[1] = f"{pieces[0]} {pieces[1]}"
        pieces.pop(0)
    return pieces


def split_paragraphs(text: str) -> list[str]:
    paras = [p.strip() for p in _PARA_RE.split(text)]
    paras = [p for p in paras if p]
    return paras or [text.strip()]


def sentence_pairs(sentences: Sequence[str]) -> list[str]:
    if len(sentences) <= 1:
        return list(sentences)
    return [f"{a} {b}" for a, b in zip(sentences, sentences[1:])]


GRANULARITIES = ("sentence", "pair", "paragraph")


def chunk_document(text: str, granularity: str) -> list[str]:
    if granularity == "sentence":
        return split_sentences(text)
    if granularity == "pair":
        return sentence_pairs(split_sentences(text))
    if granularity == "paragraph":
        return split_paragraphs(text)
    raise ValueError(f"unknown granularity {granularity!r}")


def idf_value(n_docs: int, df: int) -> float:
    return math.log((n_docs - df + 0.5) / (df + 0.5) + 1.0)


@dataclass
class TokenStats:
    """Corpus-level document frequencies and lengths for one task."""

    n_docs: int
    doc_freq: dict[str, int]
    doc_lengths: list[int] = field(default_factory=list)
    _idf: dict[str, float] = field(default_factory=dict, repr=False)

    @classmethod
    def from_token_lists(cls, docs: Iterable[Sequence[str]]) -> "TokenStats":
        df: Counter[str] = Counter()
        lengths = []
        for toks in docs:
            df.update(set(toks))
            lengths.append(len(toks))
        stats = cls(n_docs=len(lengths), doc_freq=dict(df), doc_lengths=lengths)
        stats._idf = {t: idf_value(stats.n_docs, c) for t, c in df.items()}
        return stats

    @property
    def idf(self) -> dict[str, float]:
        return self._idf

    def idf_of(self, token: str) -> float:
        got = self._idf.get(token)
        return got if got is not None else idf_value(self.n_docs, 0)

    @property
    def avg_doc_length(self) -> float:
        return sum(self.doc_lengths) / len(self.doc_lengths) if self.doc_lengths else 0.0


def idf_overlap(q_tokens, d_tokens, stats: TokenStats) -> float:
    q = set(q_tokens)
    shared = q & set(d_tokens)
    if not shared:
        return 0.0
    num = sum(stats.idf_of(t) for t in sorted(shared))
    den = sum(stats.idf_of(t) for t in sorted(q))
    return num / (den + 1e-9)


def bigrams(tokens: Sequence[str]) -> set[tuple[str, str]]:
    return set(zip(tokens, tokens[1:]))


def bigram_overlap(q_tokens, d_tokens) -> float:
    qb = bigrams(list(q_tokens))
    if not qb:
        return 0.0
    return len(qb & bigrams(list(d_tokens))) / (len(qb) + 1e-9)


def coverage_ratio(q_tokens, d_tokens) -> float:
    q = set(q_tokens)
    if not q:
        return 0.0
    return len(q & set(d_tokens)) / len(q)


def rare_term_score(q_tokens, d_tokens, stats: TokenStats) -> float:
    shared = set(q_tokens) & set(d_tokens)
    return max((stats.idf_of(t) for t in shared), default=0.0)


def bm25_scores(q_tokens, doc_tokens: Sequence[Sequence[str]], stats: TokenStats,
                k1: float = 1.2, b: float = 0.75) -> list[float]:
    """Okapi BM25 with TF saturation and length normalization."""
    terms = sorted(set(q_tokens))
    avgdl = stats.avg_doc_length or 1.0
    out = []
    for toks in doc_tokens:
        tf = Counter(toks)
        norm = k1 * (1.0 - b + b * len(toks) / avgdl)
        s = 0.0
        for t in terms:
            f = tf.get(t, 0)
            if f:
                s += stats.idf_of(t) * f * (k1 + 1.0) / (f + norm)
        out.append(s)
    return out
