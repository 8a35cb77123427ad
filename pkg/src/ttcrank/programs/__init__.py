"""Program registry.

Every program is a deterministic map ``ctx -> S'`` over one task's
shortlist. ``FRONTIER`` holds the trivial program and the twelve
frontier programs; ``BASELINES`` holds the feedback and fusion controls.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..encoder import EXPANSION_ADAPTERS, Adapter
from . import baselines, frontier
from .context import (DEFAULT_CONSTANTS, Channel, ProgramConstants, ProgramContext, TaskTexts,
                      fuse_rrf)

FAMILIES = ("geometric", "granularity", "lexical-hybrid", "expansion", "algebraic")


@dataclass(frozen=True)
class ProgramSpec:
    id: str
    fn: Callable[[ProgramContext], np.ndarray]
    nominal_cost: float
    family: str
    requires_adapters: bool
    channels: str = ""
    # encoded resources (see ttcrank.costs), keyed by adapter availability
    resources: Callable[[bool], frozenset] = lambda adapters: frozenset()

    def __post_init__(self):
        if self.family not in FAMILIES + ("baseline",):
            raise ValueError(f"unknown family {self.family!r}")

    def __call__(self, ctx: ProgramContext) -> np.ndarray:
        return self.fn(ctx)


_SENT = ("chunks", "sentence")
_BIDIR = (("queries", Adapter.PASSAGE.value), ("docs", Adapter.QUERY.value, None))


def _res(*items):
    return lambda adapters: frozenset(items)


def _expansions(tags, adapters):
    ads = EXPANSION_ADAPTERS if adapters else (Adapter.QUERY,)
    return {("expand", a.value, t) for a in ads for t in tags}


def _momentum_res(adapters):
    return frozenset({_SENT} | _expansions(("pos", "neg"), adapters))


def _fisher_res(adapters):
    return frozenset(set(_momentum_res(adapters)) | (set(_BIDIR) if adapters else set()))


FRONTIER_SPECS = (
    ProgramSpec("p0", frontier.p0_baseline, 1.0, "geometric", False, "S"),
    ProgramSpec("bidir_zscore", frontier.bidir_zscore, 1.2, "geometric", True,
                "zcol(S) + zcol(Q . D_query^T)",
                _res(("docs", Adapter.QUERY.value, None))),
    ProgramSpec("sent_maxsim", frontier.sent_maxsim, 2.2, "granularity", False, "maxsim:sentence", _res(_SENT)),
    ProgramSpec("adapt_granularity", frontier.adapt_granularity, 2.7, "granularity", False,
                "max(zrow(maxsim:paragraph), zrow(maxsim:sentence))",
                _res(_SENT, ("chunks", "paragraph"))),
    ProgramSpec("coverage_triple", frontier.coverage_triple, 3.7, "granularity", False,
                "mean zrow of {maxsim,topmean} x {sentence,pair,paragraph} + topic + fulldoc, debiased",
                _res(_SENT, ("chunks", "pair"), ("chunks", "paragraph"),
                     ("docs", Adapter.PASSAGE.value, DEFAULT_CONSTANTS.topic_max_tokens))),
    ProgramSpec("lex_hybrid_rrf", frontier.lex_hybrid_rrf, 3.9, "lexical-hybrid", False,
                "rrf(dense, maxsim:sentence, idf_overlap, bigram)", _res(_SENT)),
    ProgramSpec("cross_round_rrf", frontier.cross_round_rrf, 3.9, "lexical-hybrid", False,
                "rrf(round1, rocchio, residual)", _res(_SENT)),
    ProgramSpec("diverse_dual_ctx", frontier.diverse_dual_ctx, 5.6, "expansion", False,
                "rrf(prelim, gated expand:dominant, gated expand:diverse)",
                _res(_SENT, ("expand", Adapter.QUERY.value, "dominant"),
                     ("expand", Adapter.QUERY.value, "diverse"))),
    ProgramSpec("consensus_rocchio", frontier.consensus_rocchio, 6.4, "algebraic", True,
                "rrf(feedback, zcol(bidir:queries), zcol(bidir:docs))",
                lambda adapters: frozenset(_BIDIR if adapters else ())),
    ProgramSpec("neg_contrastive", frontier.neg_contrastive, 7.2, "expansion", False,
                "rrf(dense, expand:top1, contrast)",
                _res(_SENT, ("expand", Adapter.QUERY.value, "top"), ("expand", Adapter.QUERY.value, "bottom"))),
    ProgramSpec("momentum_prog", frontier.momentum_prog, 9.8, "expansion", True,
                "rrf(round1, 4 adapters x {expand, contrast})", _momentum_res),
    ProgramSpec("graph_centrality", frontier.graph_centrality, 12.2, "expansion", True,
                "rrf(round1, anchor_rocchio, 4 adapters x {expand, contrast})", _momentum_res),
    ProgramSpec("fisher_stability", frontier.fisher_stability, 14.7, "algebraic", True,
                "rrf(6 round-1 comps, round1, rocchio, residual, anchor_rocchio, "
                "4 adapters x {expand, contrast}, 2 bidir, fisher, stability)", _fisher_res),
)

BASELINE_SPECS = (
    ProgramSpec("soft_centroid", baselines.soft_centroid, 1.0, "baseline", False,
                "normalize((1-a) q + a softmax-weighted top-K centroid)"),
    ProgramSpec("classical_rocchio", baselines.classical_rocchio, 1.0, "baseline", False,
                "normalize((1-b) q + b mean(top-K))"),
    ProgramSpec("vanilla_bm25_dense_rrf", baselines.vanilla_bm25_dense_rrf, 1.0, "baseline", False,
                "rrf(bm25, dense)"),
)

FRONTIER = {s.id: s for s in FRONTIER_SPECS}
BASELINES = {s.id: s for s in BASELINE_SPECS}
REGISTRY = {**FRONTIER, **BASELINES}
assert len(REGISTRY) == len(FRONTIER_SPECS) + len(BASELINE_SPECS), "duplicate program id"


def get(program_id: str) -> ProgramSpec:
    try:
        return REGISTRY[program_id]
    except KeyError:
        raise KeyError(f"unknown program {program_id!r}; known: {', '.join(REGISTRY)}") from None


def listing() -> list[str]:
    """Tab-separated rows: id, nominal cost, family, adapter requirement."""
    return [f"{s.id}\t{s.nominal_cost:g}\t{s.family}\t{'yes' if s.requires_adapters else 'no'}"
            for s in REGISTRY.values()]


__all__ = [
    "BASELINES", "Channel", "DEFAULT_CONSTANTS", "FRONTIER", "ProgramConstants", "ProgramContext",
    "ProgramSpec", "REGISTRY", "TaskTexts", "fuse_rrf", "get", "listing",
]
