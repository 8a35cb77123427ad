import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ttcrank.fusion import (elementwise_max, maxsim, maxsim_from_sims, rank_variance, ranks_from_scores, rrf,
                            rrf_scores, stability_scores, top_mean_from_sims, top_mean_sim)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
score_vec = arrays(np.float64, st.integers(1, 12), elements=finite)


def test_ranks_examples():
    assert ranks_from_scores([0.9, 0.1, 0.5]).ranks.tolist() == [1, 3, 2]
    assert ranks_from_scores([0.3] * 4).ranks.tolist() == [1, 2, 3, 4]
    assert ranks_from_scores([7.0]).ranks.tolist() == [1]
    assert ranks_from_scores([0.5, 0.9, 0.5, 0.1], ties="min").ranks.tolist() == [2, 1, 2, 4]
    with pytest.raises(ValueError):
        ranks_from_scores([np.nan])


@given(score_vec)
def test_ranking_consistent(s):
    r = ranks_from_scores(s)
    assert sorted(r.ranks.tolist()) == list(range(1, len(s) + 1))
    assert np.array_equal(np.argsort(r.ranks), r.order)
    # ordinal oracle: sort key (-score, index)
    oracle = sorted(range(len(s)), key=lambda i: (-s[i], i))
    assert r.order.tolist() == oracle


@given(arrays(np.float64, st.integers(1, 12), elements=st.integers(-1000, 1000).map(float)))
def test_ranking_invariant_under_increasing_transform(s):
    # integer grid keeps the transforms strictly increasing in floating point
    for f in (lambda x: 3 * x + 1, lambda x: np.exp(x / 1000), lambda x: np.arctan(x / 100), np.cbrt):
        assert np.array_equal(ranks_from_scores(f(s)).ranks, ranks_from_scores(s).ranks)


def test_rrf_examples():
    a, b = np.array([1, 2]), np.array([2, 1])
    assert rrf([a, b]).tolist() == [1.5, 1.5]
    r = rrf([np.array([1, 2, 3])] * 2)
    assert r == pytest.approx([2, 1, 2 / 3])
    assert rrf([np.array([1, 2])], k=60) == pytest.approx([1 / 61, 1 / 62])
    with pytest.raises(ValueError):
        rrf([np.array([1, 2]), np.array([1, 2, 3])])
    with pytest.raises(ValueError):
        rrf([])


@given(score_vec)
def test_rrf_single_channel_preserves_order(s):
    r = ranks_from_scores(s)
    fused = rrf([r])
    assert np.array_equal(ranks_from_scores(fused).order, r.order)


@given(st.lists(arrays(np.float64, 6, elements=finite), min_size=1, max_size=5), st.randoms())
def test_rrf_permutation_invariant(channels, rnd):
    shuffled = channels[:]
    rnd.shuffle(shuffled)
    assert np.allclose(rrf_scores(channels), rrf_scores(shuffled), atol=1e-12)


def test_maxsim_examples():
    q = np.array([1.0, 0.0])
    chunks = np.array([[0.2, 0.98], [0.9, 0.43], [0.5, 0.86]])
    assert maxsim(q, chunks, [0, 0, 1]).tolist() == pytest.approx([0.9, 0.5])
    D = np.eye(2)
    assert np.allclose(maxsim(q, D, [0, 1]), D @ q)
    with pytest.raises(ValueError):
        maxsim(q, chunks, [0, 0, 2], n_docs=3)


def test_maxsim_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n_docs = int(rng.integers(1, 5))
        owner = np.concatenate([np.arange(n_docs), rng.integers(0, n_docs, size=rng.integers(0, 6))])
        C = rng.normal(size=(len(owner), 4))
        q = rng.normal(size=4)
        got = maxsim(q, C, owner, n_docs)
        for d in range(n_docs):
            assert got[d] == pytest.approx(max(float(C[i] @ q) for i in range(len(owner)) if owner[i] == d), abs=1e-12)


def test_top_mean_examples():
    sims = np.array([0.1, 0.8, 0.9, 0.2, 0.3, 0.5, 0.5])
    owner = np.array([0, 0, 0, 1, 1, 2, 2])
    assert np.median(sims) == 0.5
    out = top_mean_from_sims(sims, owner, 3)
    assert out[0] == pytest.approx(0.85)
    assert out[1] == pytest.approx(0.3)  # no chunk above median: MaxSim fallback
    assert out[2] == pytest.approx(0.5)
    flat = np.full(4, 0.4)
    assert np.array_equal(top_mean_from_sims(flat, [0, 0, 1, 1], 2), maxsim_from_sims(flat, [0, 0, 1, 1], 2))
    assert top_mean_from_sims(np.array([0.7]), [0], 1).tolist() == [0.7]


def test_top_mean_scopes_differ():
    sims = np.array([0.1, 0.8, 0.9, 0.2, 0.3])
    owner = np.array([0, 0, 0, 1, 1])
    q = top_mean_from_sims(sims, owner, 2, scope="query")
    d = top_mean_from_sims(sims, owner, 2, scope="doc")
    assert q.tolist() == pytest.approx([0.85, 0.3])
    assert d.tolist() == pytest.approx([0.9, 0.3])
    with pytest.raises(ValueError):
        top_mean_from_sims(sims, owner, 2, scope="corpus")


@given(st.integers(0, 10**6), st.sampled_from(["query", "doc"]))
def test_maxsim_dominates_top_mean(seed, scope):
    rng = np.random.default_rng(seed)
    n_docs = int(rng.integers(1, 5))
    owner = np.concatenate([np.arange(n_docs), rng.integers(0, n_docs, size=rng.integers(0, 8))])
    C, q = rng.normal(size=(len(owner), 3)), rng.normal(size=3)
    assert np.all(maxsim(q, C, owner, n_docs) >= top_mean_sim(q, C, owner, n_docs, scope=scope) - 1e-12)


def test_rank_variance_examples():
    r = np.array([1, 2, 3])
    assert rank_variance([r, r]).tolist() == [0, 0, 0]
    assert rank_variance([np.array([1]), np.array([3])]).tolist() == [1.0]
    chans = [np.array([1, 2, 3]), np.array([3, 1, 2]), np.array([2, 3, 1])]
    assert np.array_equal(rank_variance(chans), rank_variance(chans[::-1]))
    assert np.array_equal(stability_scores(chans), -rank_variance(chans))
    with pytest.raises(ValueError):
        rank_variance([r])


def test_elementwise_max_examples():
    c = np.array([0.3, 0.1, 0.7])
    assert np.array_equal(elementwise_max([c], z_normalize=False), c)
    assert np.array_equal(ranks_from_scores(elementwise_max([c])).order, ranks_from_scores(c).order)
    sym = elementwise_max([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
    assert sym[0] == sym[1]
    a, b = np.array([1.0, 2.0, 6.0]), np.array([3.0, 0.0, 3.0])
    za = (a - a.mean()) / (a.std() + 1e-8)
    zb = (b - b.mean()) / (b.std() + 1e-8)
    assert np.allclose(elementwise_max([a, b]), [max(x, y) for x, y in zip(za, zb)])
