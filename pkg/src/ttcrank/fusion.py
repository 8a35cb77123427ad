"""Rank computation and score fusion.

All tie-breaking is by ascending document index. Fusion inside programs
uses competition ranks (tied scores share the best rank) so a channel
that cannot tell documents apart adds the same amount to every document.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embedding import zscore


@dataclass(frozen=True)
class Ranking:
    ranks: np.ndarray  # 1 = best
    order: np.ndarray  # doc indices, best first

    def __len__(self) -> int:
        return len(self.ranks)


def argsort_desc(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    return np.argsort(-scores, kind="stable")


def ranks_from_scores(scores, ties: str = "ordinal") -> Ranking:
    """Descending ranking; ``ties`` is ``"ordinal"`` or ``"min"``.

    Ordinal ranks break ties by doc index. Min (competition) ranks give
    tied documents the best rank of their group; ``order`` is ordinal
    either way.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    order = argsort_desc(scores)
    ranks = np.empty(len(scores), dtype=np.int64)
    if ties == "ordinal":
        ranks[order] = np.arange(1, len(scores) + 1)
    elif ties == "min":
        s = scores[order]
        pos = np.arange(1, len(s) + 1)
        new_group = np.ones(len(s), dtype=bool)
        new_group[1:] = s[1:] != s[:-1]
        ranks[order] = np.maximum.accumulate(np.where(new_group, pos, 0))
    else:
        raise ValueError(f"unknown tie policy {ties!r}")
    return Ranking(ranks=ranks, order=order)


def rrf(rankings: Sequence[Ranking | np.ndarray], k: float = 0.0) -> np.ndarray:
    """``sum_i 1 / (k + rank_i(d))``; k defaults to zero."""
    if not rankings:
        raise ValueError("rrf needs at least one ranking")
    arrays = [np.asarray(r.ranks if isinstance(r, Ranking) else r) for r in rankings]
    n = len(arrays[0])
    if any(len(a) != n for a in arrays):
        raise ValueError("all rankings must cover the same documents")
    out = np.zeros(n)
    for a in arrays:
        out = out + 1.0 / (k + a)
    return out


def rrf_scores(channels: Sequence[np.ndarray], k: float = 0.0) -> np.ndarray:
    """RRF over raw score vectors, ranked with competition ties."""
    return rrf([ranks_from_scores(c, ties="min") for c in channels], k=k)


def chunk_sims(query, chunks) -> np.ndarray:
    chunks = np.asarray(chunks, dtype=np.float64)
    return chunks @ np.asarray(query, dtype=np.float64)


def _check_owner(owner, n_docs):
    owner = np.asarray(owner, dtype=np.int64)
    counts = np.bincount(owner, minlength=n_docs)
    if len(counts) > n_docs or np.any(counts[:n_docs] == 0):
        raise ValueError("every document must own at least one chunk")
    return owner


def maxsim_from_sims(sims, owner, n_docs: int) -> np.ndarray:
    owner = _check_owner(owner, n_docs)
    out = np.full(n_docs, -np.inf)
    np.maximum.at(out, owner, sims)
    return out


def maxsim(query, chunks, owner, n_docs: int | None = None) -> np.ndarray:
    owner = np.asarray(owner, dtype=np.int64)
    n_docs = int(owner.max()) + 1 if n_docs is None else n_docs
    return maxsim_from_sims(chunk_sims(query, chunks), owner, n_docs)


def top_mean_from_sims(sims, owner, n_docs: int, scope: str = "query") -> np.ndarray:
    """``scope="doc"`` thresholds each doc at the median of its own chunks."""
    owner = _check_owner(owner, n_docs)
    sims = np.asarray(sims, dtype=np.float64)
    if scope == "query":
        threshold = np.median(sims)
    elif scope == "doc":
        threshold = np.array([np.median(sims[owner == d]) for d in range(n_docs)])[owner]
    else:
        raise ValueError(f"unknown median scope {scope!r}")
    above = sims > threshold
    total = np.zeros(n_docs)
    count = np.zeros(n_docs)
    np.add.at(total, owner[above], sims[above])
    np.add.at(count, owner[above], 1.0)
    fallback = maxsim_from_sims(sims, owner, n_docs)
    has = count > 0
    out = fallback.copy()
    out[has] = total[has] / count[has]
    return out


def top_mean_sim(query, chunks, owner, n_docs: int | None = None, scope: str = "query") -> np.ndarray:
    """Mean of each doc's chunk sims above the per-query median over all chunks.

    Docs with no chunk above the median fall back to their MaxSim.
    """
    owner = np.asarray(owner, dtype=np.int64)
    n_docs = int(owner.max()) + 1 if n_docs is None else n_docs
    return top_mean_from_sims(chunk_sims(query, chunks), owner, n_docs, scope)


def rank_variance(rank_lists: Sequence[np.ndarray]) -> np.ndarray:
    if len(rank_lists) < 2:
        raise ValueError("rank variance needs at least two channels")
    R = np.vstack([np.asarray(r.ranks if isinstance(r, Ranking) else r, dtype=np.float64)
                   for r in rank_lists])
    return R.var(axis=0)


def stability_scores(rank_lists: Sequence[np.ndarray]) -> np.ndarray:
    """Higher is more stable: the negated rank variance."""
    return -rank_variance(rank_lists)


def elementwise_max(channels: Sequence[np.ndarray], z_normalize: bool = True,
                    eps: float = 1e-8) -> np.ndarray:
    if not channels:
        raise ValueError("elementwise_max needs at least one channel")
    arrays = [np.asarray(c, dtype=np.float64) for c in channels]
    if any(a.shape != arrays[0].shape for a in arrays):
        raise ValueError("channels must have equal length")
    if z_normalize:
        arrays = [zscore(a, eps) for a in arrays]
    out = arrays[0]
    for a in arrays[1:]:
        out = np.maximum(out, a)
    return out
