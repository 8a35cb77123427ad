"""Trainable heads over frozen embeddings, with in-batch InfoNCE.

Every head maps a row ``x`` to ``normalize(g(x))``:

* whitening: ``g(x) = T (x - mean)``
* linear:    ``g(x) = W x``
* lowrank:   ``g(x) = x + U V^T x`` (rank 64)
* mlp:       ``g(x) = x + W2 relu(W1 x + b1) + b2``

Gradients are analytic: logits -> normalized outputs -> pre-norm
outputs -> parameters. Shapes follow ``(out, in)`` for matrices.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .embedding import cosine_scores, normalize_rows
from .fusion import ranks_from_scores
from .metrics import ndcg_at_k

log = logging.getLogger(__name__)

KINDS = ("whitening", "linear", "lowrank", "mlp")
RANK = 64
WHITEN_LAMBDA = 1e-4
_MAGIC = b"TTCHEAD\x00"
_VERSION = 1


@dataclass
class HeadParams:
    kind: str
    blocks: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown head kind {self.kind!r}")
        expected = {"whitening": ("mean", "transform"), "linear": ("transform",),
                    "lowrank": ("U", "V"), "mlp": ("W1", "b1", "W2", "b2")}[self.kind]
        if tuple(sorted(self.blocks)) != tuple(sorted(expected)):
            raise ValueError(f"{self.kind} head needs blocks {expected}, got {tuple(self.blocks)}")
        self.blocks = {k: np.asarray(v, dtype=np.float64) for k, v in self.blocks.items()}

    @property
    def dim(self) -> int:
        b = self.blocks
        return {"whitening": lambda: b["transform"].shape[1], "linear": lambda: b["transform"].shape[1],
                "lowrank": lambda: b["U"].shape[0], "mlp": lambda: b["W1"].shape[1]}[self.kind]()

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.blocks.values()))

    def copy(self) -> "HeadParams":
        return HeadParams(self.kind, {k: v.copy() for k, v in self.blocks.items()})


def identity_head(kind: str, dim: int, rank: int = RANK, hidden: Optional[int] = None,
                  seed: int = 0, init_scale: float = 0.01) -> HeadParams:
    """A head that maps every row to itself.

    Residual heads start with zero output weights; their input-side
    weights are small and random so the outer factor has a gradient.
    """
    rng = np.random.default_rng(seed)
    if kind in ("whitening", "linear"):
        blocks = {"transform": np.eye(dim)}
        if kind == "whitening":
            blocks["mean"] = np.zeros(dim)
    elif kind == "lowrank":
        blocks = {"U": np.zeros((dim, rank)), "V": init_scale * rng.standard_normal((dim, rank))}
    elif kind == "mlp":
        h = 2 * dim if hidden is None else hidden
        blocks = {"W1": init_scale * rng.standard_normal((h, dim)), "b1": np.zeros(h),
                  "W2": np.zeros((dim, h)), "b2": np.zeros(dim)}
    else:
        raise ValueError(f"unknown head kind {kind!r}")
    return HeadParams(kind, blocks)


def fit_whitening(X, lam: float = WHITEN_LAMBDA) -> HeadParams:
    """Symmetric whitening ``E diag(l^-1/2) E^T`` of the regularized covariance.

    Cosine scores equal those of the PCA form ``diag(l^-1/2) E^T``: the two
    differ by the rotation ``E``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("fit_whitening needs a non-empty matrix")
    mean = X.mean(axis=0)
    C = X - mean
    cov = C.T @ C / X.shape[0] + lam * np.eye(X.shape[1])
    evals, evecs = np.linalg.eigh(cov)
    if evals.min() <= 0:
        raise np.linalg.LinAlgError("covariance is not positive definite after regularization")
    T = (evecs * evals ** -0.5) @ evecs.T
    return HeadParams("whitening", {"mean": mean, "transform": T})


# -- forward / backward --------------------------------------------------------

def _pre(head: HeadParams, X: np.ndarray):
    b = head.blocks
    if head.kind == "whitening":
        C = X - b["mean"]
        return C @ b["transform"].T, C
    if head.kind == "linear":
        return X @ b["transform"].T, None
    if head.kind == "lowrank":
        H = X @ b["V"]
        return X + H @ b["U"].T, H
    A = X @ b["W1"].T + b["b1"]
    R = np.maximum(A, 0.0)
    return X + R @ b["W2"].T + b["b2"], (A, R)


def _pre_backward(head: HeadParams, X: np.ndarray, cache, dY: np.ndarray) -> dict[str, np.ndarray]:
    b = head.blocks
    if head.kind == "whitening":
        return {"transform": dY.T @ cache, "mean": -(dY.sum(axis=0) @ b["transform"])}
    if head.kind == "linear":
        return {"transform": dY.T @ X}
    if head.kind == "lowrank":
        return {"U": dY.T @ cache, "V": X.T @ (dY @ b["U"])}
    A, R = cache
    dA = (dY @ b["W2"]) * (A > 0)
    return {"W2": dY.T @ R, "b2": dY.sum(axis=0), "W1": dA.T @ X, "b1": dA.sum(axis=0)}


def _normalize_fwd(Y: np.ndarray):
    n = np.linalg.norm(Y, axis=1, keepdims=True)
    n = np.where(n < 1e-12, 1.0, n)
    return Y / n, n


def _normalize_bwd(Z: np.ndarray, n: np.ndarray, dZ: np.ndarray) -> np.ndarray:
    return (dZ - Z * np.sum(Z * dZ, axis=1, keepdims=True)) / n


def apply_head(head: HeadParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    Y, _ = _pre(head, X)
    return normalize_rows(Y)


def infonce_loss(Qb, Db, head: HeadParams, tau: float = 0.05,
                 with_grad: bool = True) -> tuple[float, Optional[dict[str, np.ndarray]]]:
    """Mean in-batch InfoNCE of matched rows ``(Qb[i], Db[i])`` and its gradient."""
    Qb = np.asarray(Qb, dtype=np.float64)
    Db = np.asarray(Db, dtype=np.float64)
    B = Qb.shape[0]
    if B < 2:
        raise ValueError("InfoNCE needs a batch of at least 2 pairs")
    if Db.shape != Qb.shape:
        raise ValueError("query and document batches must have equal shape")
    Yq, cq = _pre(head, Qb)
    Yd, cd = _pre(head, Db)
    Zq, nq = _normalize_fwd(Yq)
    Zd, nd = _normalize_fwd(Yd)
    L = Zq @ Zd.T / tau
    m = L.max(axis=1, keepdims=True)
    E = np.exp(L - m)
    lse = np.log(E.sum(axis=1, keepdims=True)) + m
    loss = float(np.mean(lse[:, 0] - np.diag(L)))
    if not with_grad:
        return loss, None
    G = E / E.sum(axis=1, keepdims=True)
    G[np.arange(B), np.arange(B)] -= 1.0
    G /= B
    dZq = G @ Zd / tau
    dZd = G.T @ Zq / tau
    gq = _pre_backward(head, Qb, cq, _normalize_bwd(Zq, nq, dZq))
    gd = _pre_backward(head, Db, cd, _normalize_bwd(Zd, nd, dZd))
    return loss, {k: gq[k] + gd[k] for k in gq}


def finite_difference(Qb, Db, head: HeadParams, tau: float = 0.05,
                      step: float = 1e-4) -> dict[str, np.ndarray]:
    """Central differences over every parameter; the reference for gradient checks."""
    out = {}
    for name, block in head.blocks.items():
        g = np.zeros_like(block)
        flat = block.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up, _ = infonce_loss(Qb, Db, head, tau, with_grad=False)
            flat[j] = orig - step
            down, _ = infonce_loss(Qb, Db, head, tau, with_grad=False)
            flat[j] = orig
            g.reshape(-1)[j] = (up - down) / (2 * step)
        out[name] = g
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(a - b)) / scale


# -- training ------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 30
    batch_size: int = 64
    temperature: float = 0.05
    seed: int = 0
    holdout_fraction: float = 0.2
    rank: int = RANK
    hidden: Optional[int] = None
    init_scale: float = 0.01

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in (0, 1)")
        if self.epochs < 0 or self.batch_size < 2 or self.learning_rate <= 0:
            raise ValueError("need epochs >= 0, batch_size >= 2 and a positive learning rate")


@dataclass
class TrainResult:
    head: HeadParams
    losses: list[float]
    holdout_scores: list[float]
    best_epoch: int


def pairs_ndcg(head: HeadParams, Q: np.ndarray, D: np.ndarray, k: int = 10) -> float:
    """Mean nDCG@k of each query against the pooled docs, its own pair being relevant."""
    S = cosine_scores(apply_head(head, Q), apply_head(head, D))
    return float(np.mean([ndcg_at_k(ranks_from_scores(S[i]).order, {i: 1}, k) for i in range(len(Q))]))


def training_pairs(task, Q: np.ndarray, D: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One (query, doc) row pair per positive qrel of ``task``, in task order."""
    col = {d: j for j, d in enumerate(task.doc_ids)}
    qi, di = [], []
    for i, qid in enumerate(task.query_ids):
        for d in task.rels(qid):
            qi.append(i)
            di.append(col[d])
    return Q[qi], D[di]


def _split(n: int, frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_hold = min(n - 2, max(1, int(round(frac * n))))
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def train_head(pairs, kind: str, config: TrainConfig = TrainConfig(),
               selector: Callable[[HeadParams], float] | None = None) -> TrainResult:
    """Mini-batch gradient descent on InfoNCE with epoch selection on a holdout split.

    ``pairs`` is ``(Q, D)`` with matched rows. ``selector`` scores a head
    on the holdout (higher is better); by default held-out queries are
    ranked against all held-out docs. Epoch 0 (the starting head) is a
    candidate, so selection never does worse on the holdout than the start.
    """
    Q, D = (np.asarray(a, dtype=np.float64) for a in pairs)
    if Q.shape[0] == 0:
        raise ValueError("train_head needs at least one pair")
    if Q.shape != D.shape:
        raise ValueError("pair matrices must have equal shape")
    if Q.shape[0] < 4:
        raise ValueError("train_head needs at least 4 pairs (2 to train, holdout for selection)")
    dim = Q.shape[1]
    if kind == "whitening":
        head = fit_whitening(np.vstack([Q, D]))
        return TrainResult(head, [], [], 0)
    train, hold = _split(Q.shape[0], config.holdout_fraction, config.seed)
    if selector is None:
        selector = lambda h: pairs_ndcg(h, Q[hold], D[hold])  # noqa: E731
    head = identity_head(kind, dim, config.rank, config.hidden, config.seed, config.init_scale)
    rng = np.random.default_rng(config.seed + 1)
    best, best_score, best_epoch = head.copy(), selector(head), 0
    losses = [infonce_loss(Q[train], D[train], head, config.temperature, with_grad=False)[0]]
    scores = [best_score]
    for epoch in range(1, config.epochs + 1):
        order = train[rng.permutation(len(train))]
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            if len(idx) < 2:
                continue
            _, grads = infonce_loss(Q[idx], D[idx], head, config.temperature)
            for name, g in grads.items():
                head.blocks[name] -= config.learning_rate * g
        losses.append(infonce_loss(Q[train], D[train], head, config.temperature, with_grad=False)[0])
        score = selector(head)
        scores.append(score)
        if score > best_score:
            best, best_score, best_epoch = head.copy(), score, epoch
    log.info("%s head: best epoch %d, holdout %.4f", kind, best_epoch, best_score)
    return TrainResult(best, losses, scores, best_epoch)


# -- checkpoints ---------------------------------------------------------------

def save_head(head: HeadParams, path, meta: Optional[dict] = None) -> Path:
    """Binary checkpoint: magic, version, kind, named little-endian float32 blocks,
    then a length-prefixed UTF-8 JSON metadata record."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    kind = head.kind.encode()
    parts = [_MAGIC, struct.pack("<IB", _VERSION, len(kind)), kind, struct.pack("<I", len(head.blocks))]
    for name in sorted(head.blocks):
        arr = head.blocks[name]
        nb = name.encode()
        parts.append(struct.pack("<B", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)) + blob)
    path.write_bytes(b"".join(parts))
    return path


def load_head(path) -> HeadParams:
    return read_checkpoint(path)[0]


def read_checkpoint(path) -> tuple[HeadParams, dict]:
    buf = Path(path).read_bytes()
    try:
        return _parse_checkpoint(buf, path)
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc


def _parse_checkpoint(buf: bytes, path) -> tuple[HeadParams, dict]:
    if not buf.startswith(_MAGIC):
        raise ValueError(f"{path}: not a head checkpoint")
    pos = len(_MAGIC)
    version, klen = struct.unpack_from("<IB", buf, pos)
    pos += 5
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    kind = buf[pos:pos + klen].decode()
    pos += klen
    (n_blocks,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    blocks = {}
    for _ in range(n_blocks):
        (nlen,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        name = buf[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if shape else 1
        blocks[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float64)
        pos += 4 * count
    (mlen,) = struct.unpack_from("<I", buf, pos)
    meta = json.loads(buf[pos + 4:pos + 4 + mlen].decode("utf-8"))
    return HeadParams(kind, blocks), meta


def head_program(head: HeadParams):
    """A program that rescores by cosine in the head's output space (no extra encodes)."""
    def program(ctx) -> np.ndarray:
        return cosine_scores(apply_head(head, ctx.Q), apply_head(head, ctx.D))
    program.id = f"head:{head.kind}"
    return program
