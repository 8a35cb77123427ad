"""Exhaustive and loop-based oracles for the metric functions."""

import itertools
import math

import numpy as np

def brute_ndcg(order, rels, k):
    # exhaustive oracle: IDCG as the best DCG over every permutation of all graded docs
    def dcg(seq):
        return sum((2 ** rels.get(d, 0) - 1) / math.log2(i + 2) for i, d in enumerate(seq[:k]))
    pool = list(dict.fromkeys(list(order) + list(rels)))
    best = max(dcg(list(p)) for p in itertools.permutations(pool))
    return 0.0 if best == 0 else dcg(list(order)) / best


def bootstrap_oracle(deltas, resamples, seed, chunk=1000):
    d = np.asarray(deltas)
    opposite = 0
    obs = d.mean()
    for c in range(math.ceil(resamples / chunk)):
        rng = np.random.Generator(np.random.Philox(key=[seed, c]))
        m = min(chunk, resamples - c * chunk)
        idx = rng.integers(0, len(d), size=(m, len(d)))
        for row in idx:
            mean = sum(d[j] for j in row) / len(d)
            opposite += (mean <= 0) if obs > 0 else (mean >= 0)
    return min(1.0, max(1 / resamples, 2 * opposite / resamples))


def _beats(q, p):
    no_worse = q.cost <= p.cost and q.delta >= p.delta
    return no_worse and (q.cost, q.delta) != (p.cost, p.delta)


def brute_frontier(points):
    return sorted((p for p in points if not any(_beats(q, p) for q in points)),
                  key=lambda p: (p.cost, -p.delta, p.label))


def sign_oracle(deltas):
    # two-sided exact binomial over the nonzero deltas, summed term by term
    pos = sum(1 for d in deltas if d > 0)
    n = pos + sum(1 for d in deltas if d < 0)
    if n == 0:
        return 1.0
    lo = min(pos, n - pos)
    tail = sum(math.comb(n, i) for i in range(lo + 1)) / 2 ** n
    return min(1.0, 2 * tail)
