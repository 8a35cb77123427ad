"""The trivial program and the twelve frontier programs.

Each program maps a :class:`ProgramContext` to a new score matrix of the
same shape as ``ctx.S``. On single-document shortlists every program
returns ``S`` unchanged.
"""

from __future__ import annotations

import functools

import numpy as np

from ..embedding import centroid, cosine_scores, l2_normalize, zscore_columns, zscore_rows
from ..encoder import Adapter
from ..fusion import ranks_from_scores
from . import blocks as B
from .context import Channel, ProgramContext, bottom_half_size, fuse_rrf, top_half_size, top_quarter_size


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(ctx: ProgramContext) -> np.ndarray:
        if ctx.n_docs <= 1:
            return ctx.S.copy()
        return fn(ctx)

    return wrapper


def p0_baseline(ctx: ProgramContext) -> np.ndarray:
    return ctx.S.copy()


@guarded
def bidir_zscore(ctx: ProgramContext) -> np.ndarray:
    S_rev = B.bidir_docs(ctx, Adapter.QUERY).scores
    eps = ctx.constants.zscore_eps
    return zscore_columns(ctx.S, eps) + zscore_columns(S_rev, eps)


@guarded
def sent_maxsim(ctx: ProgramContext) -> np.ndarray:
    return B.maxsim(ctx, "sentence").scores


@guarded
def adapt_granularity(ctx: ProgramContext) -> np.ndarray:
    eps = ctx.constants.zscore_eps
    para = zscore_rows(B.maxsim(ctx, "paragraph").scores, eps)
    sent = zscore_rows(B.maxsim(ctx, "sentence").scores, eps)
    return np.maximum(para, sent)


def coverage_triple_channels(ctx: ProgramContext) -> list[Channel]:
    chans = []
    for g in ("sentence", "pair", "paragraph"):
        chans.append(B.maxsim(ctx, g, debiased=True))
        chans.append(B.topmean(ctx, g, debiased=True))
    chans.append(B.topic(ctx, debiased=True))
    chans.append(B.full_doc(ctx, debiased=True))
    return chans


@guarded
def coverage_triple(ctx: ProgramContext) -> np.ndarray:
    eps = ctx.constants.zscore_eps
    chans = coverage_triple_channels(ctx)
    total = np.zeros_like(ctx.S)
    for ch in chans:
        total = total + zscore_rows(ch.scores, eps)
    return total / len(chans)


@guarded
def lex_hybrid_rrf(ctx: ProgramContext) -> np.ndarray:
    return fuse_rrf(B.lex_hybrid_channels(ctx), ctx.constants.rrf_k)


@guarded
def cross_round_rrf(ctx: ProgramContext) -> np.ndarray:
    k = ctx.constants.rrf_k
    r1 = fuse_rrf(B.cross_round_channels(ctx), k)
    r2 = B.rocchio(ctx, r1)
    r3 = B.residual(ctx, r1)
    return fuse_rrf([Channel("round1", r1), r2, r3], k)


@guarded
def diverse_dual_ctx(ctx: ProgramContext) -> np.ndarray:
    k = ctx.constants.rrf_k
    prelim = fuse_rrf(B.lex_hybrid_channels(ctx), k)
    n = ctx.n_docs
    half = top_half_size(n, ctx.constants.min_group)
    dominant, diverse, top_sets = [], [], []
    for i in range(ctx.n_queries):
        order = ranks_from_scores(prelim[i]).order
        dom = int(order[0])
        top = order[:half]
        cands = [int(d) for d in top if d != dom]
        diverse.append(B.pick_max(cands, -(ctx.D @ ctx.D[dom])))
        dominant.append(dom)
        top_sets.append(set(int(d) for d in top))
    rounds = [Channel("prelim", prelim)]
    for label, anchors in (("dominant", dominant), ("diverse", diverse)):
        ch, _ = B.expand(ctx, anchors, Adapter.QUERY)
        # adaptive gate: keep a round only when its top document is in the preliminary top half
        gate = np.array([int(np.argmax(ch.scores[i])) in top_sets[i] for i in range(ctx.n_queries)])
        rounds.append(Channel(f"expand:{label}", ch.scores, gate))
    return fuse_rrf(rounds, k)


def consensus_split(ctx: ProgramContext, i: int) -> tuple[list[int], list[int]]:
    """Core cluster of the dense top quarter, and the negative set."""
    n = ctx.n_docs
    order = ranks_from_scores(ctx.S[i]).order
    top = order[: top_quarter_size(n, ctx.constants.min_group)]
    G = B.gram(ctx.D[top])
    means = (G.sum(axis=1) - np.diag(G)) / (len(top) - 1)
    med = np.median(means)
    core = [int(d) for d, m in zip(top, means) if m > med]
    if not core:
        core = [int(d) for d in top]
    bottom = [int(d) for d in order[n - bottom_half_size(n):]]
    neg = sorted((set(int(d) for d in top) | set(bottom)) - set(core))
    return sorted(core), neg


@guarded
def consensus_rocchio(ctx: ProgramContext) -> np.ndarray:
    V = ctx.Q.copy()
    keep = np.ones(ctx.n_queries, dtype=bool)
    for i in range(ctx.n_queries):
        core, neg = consensus_split(ctx, i)
        v = ctx.Q[i] + centroid(ctx.D[core])
        if neg:
            v = v - centroid(ctx.D[neg])
        v, degenerate = l2_normalize(v)
        if degenerate:
            keep[i] = False
        else:
            V[i] = v
    fb = cosine_scores(V, ctx.D)
    fb[~keep] = ctx.S[~keep]
    channels = [Channel("feedback", fb)]
    if ctx.has_adapters:
        eps = ctx.constants.zscore_eps
        channels.append(B.zcol(B.bidir_queries(ctx, Adapter.PASSAGE), eps))
        channels.append(B.zcol(B.bidir_docs(ctx, Adapter.QUERY), eps))
    return fuse_rrf(channels, ctx.constants.rrf_k)


@guarded
def neg_contrastive(ctx: ProgramContext) -> np.ndarray:
    top, bottom = [], []
    for i in range(ctx.n_queries):
        order = ranks_from_scores(ctx.S[i]).order
        top.append(int(order[0]))
        bottom.append(int(order[-1]))
    ch_pos, V_pos = B.expand(ctx, top, Adapter.QUERY)
    _, V_neg = B.expand(ctx, bottom, Adapter.QUERY)
    ch_con = B.contrast(ctx, V_pos, V_neg, "contrast")
    return fuse_rrf([B.dense(ctx), ch_pos, ch_con], ctx.constants.rrf_k)


def momentum_anchors(ctx: ProgramContext, r1: np.ndarray) -> tuple[list[int], list[int]]:
    n = ctx.n_docs
    half = top_half_size(n, ctx.constants.min_group)
    nb = bottom_half_size(n)
    pos, neg = [], []
    for i in range(ctx.n_queries):
        base = ranks_from_scores(ctx.S[i]).ranks
        ranking = ranks_from_scores(r1[i])
        pos.append(B.pick_max(ranking.order[:half], base - ranking.ranks))
        neg.append(B.pick_max(ranking.order[n - nb:], ranking.ranks - base))
    return pos, neg


@guarded
def momentum_prog(ctx: ProgramContext) -> np.ndarray:
    k = ctx.constants.rrf_k
    r1 = fuse_rrf(B.cross_round_channels(ctx), k)
    pos, neg = momentum_anchors(ctx, r1)
    return fuse_rrf([Channel("round1", r1)] + B.expansion_family(ctx, pos, neg), k)


@guarded
def graph_centrality(ctx: ProgramContext) -> np.ndarray:
    k = ctx.constants.rrf_k
    r1 = fuse_rrf(B.cross_round_channels(ctx), k)
    pos, neg = B.graph_anchors(ctx, r1)
    channels = [Channel("round1", r1), B.anchor_rocchio(ctx, pos, neg)]
    return fuse_rrf(channels + B.expansion_family(ctx, pos, neg), k)


def fisher_stability_channels(ctx: ProgramContext) -> list[Channel]:
    """The full channel list, in fusion order.

    With adapters: 6 round-1 channels, the fused round 1, median-split
    Rocchio, residual, anchor Rocchio, 8 expansion rounds (4 adapters x
    {expansion, contrast}), 2 bidirectional views, Fisher, stability = 22.
    """
    k = ctx.constants.rrf_k
    eps = ctx.constants.zscore_eps
    comps = B.cross_round_channels(ctx)
    r1 = fuse_rrf(comps, k)
    chans = comps + [Channel("round1", r1), B.rocchio(ctx, r1), B.residual(ctx, r1)]
    pos, neg = B.graph_anchors(ctx, r1)
    chans.append(B.anchor_rocchio(ctx, pos, neg))
    chans.extend(B.expansion_family(ctx, pos, neg))
    if ctx.has_adapters:
        chans.append(B.zcol(B.bidir_queries(ctx, Adapter.PASSAGE), eps))
        chans.append(B.zcol(B.bidir_docs(ctx, Adapter.QUERY), eps))
    chans.append(B.fisher(ctx, r1))
    chans.append(B.stability(chans))
    return chans


@guarded
def fisher_stability(ctx: ProgramContext) -> np.ndarray:
    return fuse_rrf(fisher_stability_channels(ctx), ctx.constants.rrf_k)
