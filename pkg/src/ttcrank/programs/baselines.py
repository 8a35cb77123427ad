"""Classical feedback and fusion baselines."""

from __future__ import annotations

import numpy as np

from ..embedding import cosine_scores, l2_normalize, softmax
from ..fusion import ranks_from_scores
from ..text import bm25_scores
from .context import Channel, ProgramContext, fuse_rrf
from .frontier import guarded

ROCCHIO_GRID = tuple((k, beta) for k in (2, 3, 5, 10) for beta in (0.1, 0.3, 0.5, 0.7))


def _rescore(ctx: ProgramContext, V: np.ndarray, keep: np.ndarray) -> np.ndarray:
    out = cosine_scores(V, ctx.D)
    out[~keep] = ctx.S[~keep]
    return out


def soft_centroid(ctx: ProgramContext, K: int | None = None, alpha: float | None = None,
                  tau: float | None = None) -> np.ndarray:
    """Interpolate each query with a softmax-weighted centroid of its top-K docs.

    ``q' = normalize((1 - alpha) q + alpha * sum_i w_i d_i)`` with
    ``w = softmax(top-K scores / tau)``.
    """
    c = ctx.constants
    K = c.soft_k if K is None else K
    alpha = c.soft_alpha if alpha is None else alpha
    tau = c.soft_tau if tau is None else tau
    if ctx.n_docs <= 1 or alpha == 0:
        return ctx.S.copy()
    K = min(K, ctx.n_docs)
    V = ctx.Q.copy()
    keep = np.ones(ctx.n_queries, dtype=bool)
    for i in range(ctx.n_queries):
        top = ranks_from_scores(ctx.S[i]).order[:K]
        w = softmax(ctx.S[i, top], tau)
        c_pos = (w[:, None] * ctx.D[top]).sum(axis=0)
        v, degenerate = l2_normalize((1.0 - alpha) * ctx.Q[i] + alpha * c_pos)
        keep[i] = not degenerate
        if not degenerate:
            V[i] = v
    return _rescore(ctx, V, keep)


def classical_rocchio(ctx: ProgramContext, K: int = 3, beta: float = 0.5) -> np.ndarray:
    """Uniform-mean vector PRF: ``normalize((1 - beta) q + beta * mean(top-K))``."""
    if ctx.n_docs <= 1 or beta == 0:
        return ctx.S.copy()
    K = min(K, ctx.n_docs)
    V = ctx.Q.copy()
    keep = np.ones(ctx.n_queries, dtype=bool)
    for i in range(ctx.n_queries):
        top = ranks_from_scores(ctx.S[i]).order[:K]
        v, degenerate = l2_normalize((1.0 - beta) * ctx.Q[i] + beta * ctx.D[top].mean(axis=0))
        keep[i] = not degenerate
        if not degenerate:
            V[i] = v
    return _rescore(ctx, V, keep)


def bm25_matrix(ctx: ProgramContext) -> np.ndarray:
    c = ctx.constants
    return ctx.texts.lexical_rows(
        f"bm25:{c.bm25_k1}:{c.bm25_b}",
        lambda q: bm25_scores(q, ctx.texts.doc_tokens, ctx.token_stats, c.bm25_k1, c.bm25_b))


@guarded
def vanilla_bm25_dense_rrf(ctx: ProgramContext) -> np.ndarray:
    return fuse_rrf([Channel("bm25", bm25_matrix(ctx)), Channel("dense", ctx.S)],
                    ctx.constants.rrf_k)
