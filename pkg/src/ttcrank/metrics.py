"""Ranking metrics, per-task deltas, significance tests and frontier rules."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

WTL_THRESHOLD = 0.001
BOOTSTRAP_CHUNK = 1000


def _gain(rel: float, gain: str) -> float:
    if gain == "exponential":
        return 2.0 ** rel - 1.0
    if gain == "linear":
        return float(rel)
    raise ValueError(f"unknown gain {gain!r}")


def dcg(grades: Sequence[float], k: int, gain: str = "exponential") -> float:
    return sum(_gain(g, gain) / math.log2(i + 2) for i, g in enumerate(list(grades)[:k]))


def ndcg_at_k(order: Sequence, rels: Mapping, k: int = 10, gain: str = "exponential") -> float:
    """nDCG@k of ``order`` (doc ids best-first) against graded ``rels``.

    Queries without any positive grade score 0.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ideal = sorted((g for g in rels.values() if g > 0), reverse=True)
    if not ideal:
        return 0.0
    idcg = dcg(ideal, k, gain)
    return dcg([rels.get(d, 0) for d in order], k, gain) / idcg


def wtl(deltas: Sequence[float], threshold: float = WTL_THRESHOLD) -> tuple[int, int, int]:
    d = np.asarray(deltas, dtype=np.float64)
    wins = int(np.sum(d > threshold))
    losses = int(np.sum(d < -threshold))
    return wins, len(d) - wins - losses, losses


@dataclass(frozen=True)
class PooledStats:
    median: float
    win_rate: float
    n: int


def pooled_stats(cells, threshold: float = WTL_THRESHOLD) -> PooledStats:
    """Median and win rate over pooled (model, task) cell deltas."""
    values = np.asarray(list(cells.values()) if isinstance(cells, Mapping) else list(cells),
                        dtype=np.float64)
    if values.size == 0:
        raise ValueError("no cells")
    return PooledStats(float(np.median(values)), float(np.mean(values > threshold)), int(values.size))


def _resample_means(deltas: np.ndarray, resamples: int, seed: int) -> np.ndarray:
    # resample r lives in chunk r // BOOTSTRAP_CHUNK, keyed (seed, chunk): schedule independent
    n = len(deltas)
    out = np.empty(resamples)
    for start in range(0, resamples, BOOTSTRAP_CHUNK):
        stop = min(start + BOOTSTRAP_CHUNK, resamples)
        rng = np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), start // BOOTSTRAP_CHUNK]))
        idx = rng.integers(0, n, size=(stop - start, n))
        out[start:stop] = deltas[idx].mean(axis=1)
    return out


def paired_bootstrap(deltas: Sequence[float], resamples: int = 10_000, seed: int = 0) -> float:
    """Two-sided paired bootstrap p-value for a nonzero mean delta.

    ``p = 2 * fraction of resampled means on the far side of zero``,
    clamped to ``[1/resamples, 1]``; a zero observed mean gives 1.
    """
    d = np.asarray(deltas, dtype=np.float64)
    if d.size == 0:
        raise ValueError("paired_bootstrap needs at least one delta")
    if resamples < 1:
        raise ValueError("resamples must be positive")
    observed = float(d.mean())
    if observed == 0.0:
        return 1.0
    means = _resample_means(d, resamples, seed)
    opposite = means <= 0.0 if observed > 0 else means >= 0.0
    p = 2.0 * float(np.mean(opposite))
    return min(1.0, max(1.0 / resamples, p))


def sign_test(deltas: Sequence[float]) -> float:
    """Two-sided exact sign test on nonzero deltas."""
    d = np.asarray(deltas, dtype=np.float64)
    pos, neg = int(np.sum(d > 0)), int(np.sum(d < 0))
    if pos + neg == 0:
        return 1.0
    return float(stats.binomtest(pos, pos + neg, 0.5).pvalue)


@dataclass(frozen=True)
class FrontierPoint:
    label: str
    cost: float
    delta: float


def dominates(a: FrontierPoint, b: FrontierPoint) -> bool:
    return a.cost <= b.cost and a.delta >= b.delta and (a.cost < b.cost or a.delta > b.delta)


def pareto_frontier(points: Sequence[FrontierPoint]) -> list[FrontierPoint]:
    """Non-dominated points (lower cost, higher delta), sorted by cost.

    Exact duplicates do not dominate each other, so both are kept.
    """
    ranked = sorted(points, key=lambda p: (p.cost, -p.delta))
    kept: list[FrontierPoint] = []
    best = -math.inf  # best delta among strictly cheaper points
    i = 0
    while i < len(ranked):
        j = i
        while j < len(ranked) and ranked[j].cost == ranked[i].cost:
            j += 1
        group = ranked[i:j]
        top = group[0].delta
        for p in group:
            if p.delta == top and p.delta > best:
                kept.append(p)
        best = max(best, top)
        i = j
    return kept


def frontier_admission(admitted_means: Sequence[float], candidate_mean: float) -> bool:
    """Admit iff positive and strictly above every earlier admitted mean."""
    if not candidate_mean > 0:
        return False
    return all(candidate_mean > m for m in admitted_means)
