import math

import numpy as np
import pytest

from ttcrank.embedding import normalize_rows
from ttcrank.fusion import ranks_from_scores
from ttcrank.heads import (KINDS, RANK, HeadParams, TrainConfig, apply_head, finite_difference, fit_whitening,
                           head_program, identity_head, infonce_loss, load_head, read_checkpoint,
                           relative_error, save_head, train_head)
import shared


def _perturbed(kind, d, seed, scale=0.3):
    rng = np.random.default_rng(seed)
    h = identity_head(kind, d, rank=4, seed=seed, init_scale=scale)
    for k, v in h.blocks.items():
        h.blocks[k] = v + scale * rng.standard_normal(v.shape)
    return h, rng


def test_shapes_and_init():
    assert RANK == 64
    for kind in KINDS:
        h = identity_head(kind, 16)
        assert h.dim == 16
    assert identity_head("mlp", 16).blocks["W1"].shape == (32, 16)
    assert identity_head("lowrank", 16).blocks["U"].shape == (16, 64)
    with pytest.raises(ValueError):
        HeadParams("linear", {"U": np.eye(2)})
    with pytest.raises(ValueError):
        identity_head("cubic", 4)


@pytest.mark.parametrize("kind", ["linear", "lowrank", "mlp", "whitening"])
def test_identity_heads_preserve_rows(kind):
    X = normalize_rows(np.random.default_rng(0).normal(size=(10, 8)))
    assert np.allclose(apply_head(identity_head(kind, 8), X), X, atol=1e-15)


@pytest.mark.parametrize("kind", KINDS)
def test_identity_head_scores_equal_baseline(kind):
    ctx = shared.context().fork()
    out = head_program(identity_head(kind, shared.DIM))(ctx)
    for i in range(ctx.n_queries):
        assert np.array_equal(ranks_from_scores(out[i]).order, ranks_from_scores(ctx.S[i]).order)


def test_whitening_isotropic():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((10_000, 8)) * 2.0
    h = fit_whitening(X)
    T = h.blocks["transform"]
    off = T - np.diag(np.diag(T))
    assert np.abs(off).max() < 0.05
    assert np.allclose(np.diag(T), 0.5, atol=0.05)


def test_whitened_covariance_is_identity():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((5000, 6)) @ rng.standard_normal((6, 6))
    h = fit_whitening(X)
    W = (X - h.blocks["mean"]) @ h.blocks["transform"].T
    cov = W.T @ W / len(W)
    assert np.linalg.norm(cov - np.eye(6)) / 6 < 0.05
    # whitening already-white data is the identity up to the ridge term
    T2 = fit_whitening(W).blocks["transform"]
    assert np.linalg.norm(T2 - np.eye(6)) < 0.01


def test_whitening_degenerate_rows():
    h = fit_whitening(np.tile([1.0, 2.0, 3.0], (5, 1)))
    assert np.all(np.isfinite(h.blocks["transform"]))


def test_infonce_closed_form():
    B, tau = 4, 0.1
    X = np.eye(B)
    loss, _ = infonce_loss(X, X, identity_head("linear", B), tau)
    want = -math.log(math.exp(1 / tau) / (math.exp(1 / tau) + (B - 1)))
    assert loss == pytest.approx(want, rel=1e-12)
    with pytest.raises(ValueError):
        infonce_loss(X[:1], X[:1], identity_head("linear", B), tau)


@pytest.mark.parametrize("kind", KINDS)
def test_infonce_permutation_invariant(kind):
    h, rng = _perturbed(kind, 5, 3)
    Q, D = normalize_rows(rng.normal(size=(6, 5))), normalize_rows(rng.normal(size=(6, 5)))
    perm = rng.permutation(6)
    assert infonce_loss(Q, D, h, 0.3)[0] == pytest.approx(infonce_loss(Q[perm], D[perm], h, 0.3)[0], rel=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_gradient_matches_finite_difference(kind):
    worst = 0.0
    for cfg in range(20):
        h, rng = _perturbed(kind, 6, cfg)
        Q, D = normalize_rows(rng.standard_normal((5, 6))), normalize_rows(rng.standard_normal((5, 6)))
        _, g = infonce_loss(Q, D, h, 0.5)
        fd = finite_difference(Q, D, h, 0.5, step=1e-4)
        worst = max(worst, max(relative_error(g[k], fd[k]) for k in g))
    assert worst < 1e-4


def _pairs(seed=0, n=64, d=16):
    rng = np.random.default_rng(seed)
    Q = normalize_rows(rng.standard_normal((n, d)))
    D = normalize_rows(Q + 0.8 * rng.standard_normal((n, d)))
    return Q, D


def test_zero_epochs_is_identity():
    res = train_head(_pairs(), "linear", TrainConfig(epochs=0))
    assert np.array_equal(res.head.blocks["transform"], np.eye(16)) and res.best_epoch == 0


def test_loss_non_increasing_small_lr():
    Q, D = _pairs()
    res = train_head((Q, D), "linear", TrainConfig(epochs=15, learning_rate=0.01, batch_size=64,
                                                   holdout_fraction=0.05))
    diffs = np.diff(res.losses)
    assert np.all(diffs <= 1e-6)
    assert res.losses[-1] < res.losses[0]


@pytest.mark.parametrize("kind", ["linear", "lowrank", "mlp"])
def test_training_beats_baseline_on_separable_pairs(kind):
    rng = np.random.default_rng(4)
    d = 16
    M = np.linalg.qr(rng.standard_normal((d, d)))[0]
    Q = normalize_rows(rng.standard_normal((120, d)))
    D = normalize_rows(Q @ M.T * np.linspace(0.2, 3.0, d) + 0.05 * rng.standard_normal((120, d)))
    cfg = TrainConfig(epochs=40, learning_rate=0.5, batch_size=32, rank=8, init_scale=0.1)
    res = train_head((Q, D), kind, cfg)
    assert res.holdout_scores[res.best_epoch] > res.holdout_scores[0]


def test_training_deterministic():
    a = train_head(_pairs(), "mlp", TrainConfig(epochs=3, seed=5, hidden=8))
    b = train_head(_pairs(), "mlp", TrainConfig(epochs=3, seed=5, hidden=8))
    assert all(np.array_equal(a.head.blocks[k], b.head.blocks[k]) for k in a.head.blocks)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(temperature=0)
    with pytest.raises(ValueError):
        TrainConfig(holdout_fraction=1.0)
    with pytest.raises(ValueError):
        train_head((np.zeros((0, 4)), np.zeros((0, 4))), "linear")


@pytest.mark.parametrize("kind", KINDS)
def test_checkpoint_round_trip(kind, tmp_path):
    h, _ = _perturbed(kind, 5, 1)
    p = save_head(h, tmp_path / "h.bin", meta={"seed": 3})
    back, meta = read_checkpoint(p)
    assert back.kind == kind and meta == {"seed": 3}
    for k in h.blocks:
        assert np.array_equal(back.blocks[k], h.blocks[k].astype("<f4").astype(np.float64))
    assert load_head(p).kind == kind


def test_checkpoint_corruption(tmp_path):
    p = save_head(identity_head("linear", 4), tmp_path / "h.bin")
    raw = p.read_bytes()
    (tmp_path / "short.bin").write_bytes(raw[:30])
    (tmp_path / "junk.bin").write_bytes(b"nope")
    for name in ("short.bin", "junk.bin"):
        with pytest.raises(ValueError):
            read_checkpoint(tmp_path / name)
