"""Channel and round primitives shared by native programs and the DSL."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..embedding import centroid, cosine_scores, l2_normalize, normalize_rows, project_onto, zscore_columns
from ..encoder import EXPANSION_ADAPTERS, Adapter
from ..errors import DegenerateAnchor
from ..fusion import maxsim_from_sims, ranks_from_scores, stability_scores, top_mean_from_sims
from ..text import bigram_overlap, coverage_ratio, idf_overlap, rare_term_score
from .context import Channel, ProgramContext, bottom_half_size, top_half_size, top_quarter_size


def debias(E: np.ndarray) -> np.ndarray:
    """Subtract the corpus centroid of a view and renormalize."""
    return normalize_rows(E - centroid(E))


# -- channels ----------------------------------------------------------------

def dense(ctx: ProgramContext) -> Channel:
    return Channel("dense", ctx.S)


def _chunk_sims(ctx, granularity, debiased):
    E, owner = ctx.chunk_embeddings(granularity)
    if debiased:
        E = debias(E)
    return cosine_scores(ctx.Q, E), owner


def maxsim(ctx: ProgramContext, granularity: str = "sentence", debiased: bool = False) -> Channel:
    sims, owner = _chunk_sims(ctx, granularity, debiased)
    out = np.vstack([maxsim_from_sims(row, owner, ctx.n_docs) for row in sims])
    return Channel(f"maxsim:{granularity}{':debiased' if debiased else ''}", out)


def topmean(ctx: ProgramContext, granularity: str = "sentence", debiased: bool = False) -> Channel:
    sims, owner = _chunk_sims(ctx, granularity, debiased)
    out = np.vstack([top_mean_from_sims(row, owner, ctx.n_docs) for row in sims])
    return Channel(f"topmean:{granularity}{':debiased' if debiased else ''}", out)


def idf_overlap_channel(ctx: ProgramContext) -> Channel:
    stats = ctx.token_stats
    return Channel("idf_overlap", ctx.texts.lexical("idf_overlap", lambda q, d: idf_overlap(q, d, stats)))


def bigram_channel(ctx: ProgramContext) -> Channel:
    return Channel("bigram", ctx.texts.lexical("bigram", bigram_overlap))


def coverage_channel(ctx: ProgramContext) -> Channel:
    return Channel("coverage", ctx.texts.lexical("coverage", coverage_ratio))


def rare_term_channel(ctx: ProgramContext) -> Channel:
    stats = ctx.token_stats
    return Channel("rare_term", ctx.texts.lexical("rare_term", lambda q, d: rare_term_score(q, d, stats)))


def bidir_docs(ctx: ProgramContext, adapter=Adapter.QUERY) -> Channel:
    """Original queries against documents re-encoded under ``adapter``."""
    return Channel(f"bidir:docs:{Adapter.parse(adapter).value}",
                   cosine_scores(ctx.Q, ctx.doc_view(adapter)))


def bidir_queries(ctx: ProgramContext, adapter=Adapter.PASSAGE) -> Channel:
    """Queries re-encoded under ``adapter`` against the original documents."""
    return Channel(f"bidir:queries:{Adapter.parse(adapter).value}",
                   cosine_scores(ctx.query_view(adapter), ctx.D))


def topic(ctx: ProgramContext, debiased: bool = False) -> Channel:
    T = ctx.doc_view(Adapter.PASSAGE, ctx.constants.topic_max_tokens)
    if debiased:
        T = debias(T)
    return Channel("topic", cosine_scores(ctx.Q, T))


def full_doc(ctx: ProgramContext, debiased: bool = False) -> Channel:
    D = debias(ctx.D) if debiased else ctx.D
    return Channel("fulldoc", cosine_scores(ctx.Q, D))


def zcol(ch: Channel, eps: float = 1e-8) -> Channel:
    return Channel(ch.label + ":zcol", zscore_columns(ch.scores, eps), ch.active)


def lex_hybrid_channels(ctx: ProgramContext) -> list[Channel]:
    return [dense(ctx), maxsim(ctx, "sentence"), idf_overlap_channel(ctx), bigram_channel(ctx)]


def cross_round_channels(ctx: ProgramContext) -> list[Channel]:
    return lex_hybrid_channels(ctx) + [coverage_channel(ctx), rare_term_channel(ctx)]


# -- rounds ------------------------------------------------------------------

def _median_split(scores: np.ndarray):
    med = np.median(scores)
    pos = scores > med
    return pos, ~pos


def rocchio(ctx: ProgramContext, src: np.ndarray) -> Channel:
    """Move each query toward docs above its median ``src`` score, away from the rest."""
    V = ctx.Q.copy()
    fallback = np.zeros(ctx.n_queries, dtype=bool)
    for i in range(ctx.n_queries):
        pos, neg = _median_split(src[i])
        if not pos.any() or not neg.any():
            fallback[i] = True
            continue
        v, degenerate = l2_normalize(ctx.Q[i] + centroid(ctx.D[pos]) - centroid(ctx.D[neg]))
        if degenerate:
            fallback[i] = True
        else:
            V[i] = v
    out = cosine_scores(V, ctx.D)
    out[fallback] = ctx.S[fallback]
    return Channel("rocchio", out)


def residual(ctx: ProgramContext, src: np.ndarray) -> Channel:
    """Query component orthogonal to the positive centroid; falls back to ``src``."""
    V = ctx.Q.copy()
    fallback = np.zeros(ctx.n_queries, dtype=bool)
    floor = ctx.constants.residual_min_norm
    for i in range(ctx.n_queries):
        pos, _ = _median_split(src[i])
        if not pos.any():
            fallback[i] = True
            continue
        q = ctx.Q[i]
        try:
            res = q - project_onto(q, centroid(ctx.D[pos]))
        except DegenerateAnchor:
            fallback[i] = True
            continue
        norm = float(np.linalg.norm(res))
        if norm < floor:
            fallback[i] = True
        else:
            V[i] = res / norm
    out = cosine_scores(V, ctx.D)
    out[fallback] = src[fallback]
    return Channel("residual", out)


def gram(M: np.ndarray) -> np.ndarray:
    """Pairwise dot products, bitwise symmetric; identical rows give identical entries.

    A BLAS product can round (a, b) and (b, a) differently, which breaks
    the exact ties that centrality and consensus rules depend on.
    """
    return (M[:, None, :] * M[None, :, :]).sum(axis=-1)


def pick_max(cands: Sequence[int], values: np.ndarray) -> int:
    """Candidate with the largest value; ties go to the lowest doc index."""
    cands = sorted(int(c) for c in cands)
    return cands[int(np.argmax(np.asarray(values)[cands]))]


def best_sentence(ctx: ProgramContext, i: int, d: int) -> str:
    """Sentence of doc ``d`` most similar to query ``i`` (earliest on ties)."""
    E, owner = ctx.chunk_embeddings("sentence")
    rows = np.flatnonzero(owner == d)
    sims = E[rows] @ ctx.Q[i]
    return ctx.texts.doc_chunks("sentence", d)[int(np.argmax(sims))]


def expansion_texts(ctx: ProgramContext, anchors: Sequence[int]) -> list[str]:
    sep = ctx.constants.expansion_sep
    return [ctx.query_texts[i] + sep + best_sentence(ctx, i, int(d)) for i, d in enumerate(anchors)]


def expand(ctx: ProgramContext, anchors: Sequence[int], adapter=Adapter.QUERY) -> tuple[Channel, np.ndarray]:
    """Re-encode query + anchor best sentence; returns the round and the new query vectors."""
    adapter = Adapter.parse(adapter)
    V = ctx.encode_expansions(expansion_texts(ctx, anchors), adapter)
    return Channel(f"expand:{adapter.value}", cosine_scores(V, ctx.D)), V


def contrast(ctx: ProgramContext, V_pos: np.ndarray, V_neg: np.ndarray, label: str) -> Channel:
    diff = V_pos - V_neg
    norms = np.linalg.norm(diff, axis=1)
    active = norms >= ctx.constants.degenerate_norm
    return Channel(label, cosine_scores(normalize_rows(diff), ctx.D), active)


def expansion_adapters(ctx: ProgramContext) -> tuple[Adapter, ...]:
    # without adapters every view is identical, so the rounds collapse to one
    return EXPANSION_ADAPTERS if ctx.has_adapters else (Adapter.QUERY,)


def expansion_family(ctx: ProgramContext, pos: Sequence[int], neg: Sequence[int]) -> list[Channel]:
    """Positive-anchor expansion and pos-minus-neg contrast, per adapter."""
    out = []
    for adapter in expansion_adapters(ctx):
        ch_pos, V_pos = expand(ctx, pos, adapter)
        _, V_neg = expand(ctx, neg, adapter)
        out.append(ch_pos)
        out.append(contrast(ctx, V_pos, V_neg, f"contrast:{adapter.value}"))
    return out


def anchor_rocchio(ctx: ProgramContext, pos: Sequence[int], neg: Sequence[int]) -> Channel:
    V = ctx.Q.copy()
    keep = np.ones(ctx.n_queries, dtype=bool)
    for i in range(ctx.n_queries):
        if pos[i] == neg[i]:
            keep[i] = False
            continue
        v, degenerate = l2_normalize(ctx.Q[i] + ctx.D[pos[i]] - ctx.D[neg[i]])
        if degenerate:
            keep[i] = False
        else:
            V[i] = v
    out = cosine_scores(V, ctx.D)
    out[~keep] = ctx.S[~keep]
    return Channel("anchor_rocchio", out)


def graph_anchors(ctx: ProgramContext, ranking_scores: np.ndarray) -> tuple[list[int], list[int]]:
    """Most central top-quarter doc and the bottom-half doc nearest the top-quarter centroid."""
    n = ctx.n_docs
    m = top_quarter_size(n, ctx.constants.min_group)
    nb = bottom_half_size(n)
    pos, neg = [], []
    for i in range(ctx.n_queries):
        order = ranks_from_scores(ranking_scores[i]).order
        top = np.sort(order[:m])
        G = gram(ctx.D[top])
        centrality = G.sum(axis=1) - np.diag(G)
        pos.append(int(top[int(np.argmax(centrality))]))
        bottom = order[n - nb:]
        c_top = centroid(ctx.D[top])
        neg.append(pick_max(bottom, ctx.D @ c_top))
    return pos, neg


def fisher(ctx: ProgramContext, src: np.ndarray) -> Channel:
    """Score along the normalized top-quarter minus bottom-quarter centroid difference."""
    n = ctx.n_docs
    m = top_quarter_size(n, ctx.constants.min_group)
    W = np.zeros_like(ctx.Q)
    active = np.zeros(ctx.n_queries, dtype=bool)
    for i in range(ctx.n_queries):
        order = ranks_from_scores(src[i]).order
        w, degenerate = l2_normalize(centroid(ctx.D[order[:m]]) - centroid(ctx.D[order[n - m:]]))
        if not degenerate:
            W[i] = w
            active[i] = True
    return Channel("fisher", cosine_scores(W, ctx.D), active)


def fisher_direction(D: np.ndarray, top: Sequence[int], bottom: Sequence[int]) -> np.ndarray:
    return l2_normalize(centroid(D[list(top)]) - centroid(D[list(bottom)]))[0]


def stability(channels: Sequence[Channel]) -> Channel:
    """Negated per-doc rank variance across the given channels."""
    nq, nd = channels[0].scores.shape
    out = np.zeros((nq, nd))
    active = np.zeros(nq, dtype=bool)
    for i in range(nq):
        ranks = [ranks_from_scores(c.scores[i], ties="min").ranks for c in channels if c.on(i)]
        if len(ranks) >= 2:
            out[i] = stability_scores(ranks)
            active[i] = True
    return Channel("stability", out, active)
