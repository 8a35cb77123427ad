"""Dense linear algebra over unit-normalized embedding matrices.

Embedding matrices are plain ``float64`` arrays of shape ``(rows, dim)``
whose rows are unit length, or exactly zero for empty inputs. Score
matrices are ``(n_queries, n_docs)`` arrays.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateAnchor, EmptySelection

NORM_FLOOR = 1e-12
UNIT_TOL = 1e-6


def _finite(x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains non-finite values")
    return x


def l2_normalize(v) -> tuple[np.ndarray, bool]:
    """Return ``(unit_vector, degenerate)``.

    Vectors with norm below 1e-12 map to the zero vector and
    ``degenerate=True``.
    """
    v = _finite(v, "vector")
    norm = float(np.linalg.norm(v))
    if norm < NORM_FLOOR:
        return np.zeros_like(v), True
    return v / norm, False


def normalize(v) -> np.ndarray:
    return l2_normalize(v)[0]


def normalize_rows(M) -> np.ndarray:
    M = _finite(M, "matrix")
    if M.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {M.shape}")
    # per-row norms so that normalize_rows(M)[i] equals normalize(M[i]) exactly
    norms = np.fromiter((np.linalg.norm(r) for r in M), dtype=np.float64, count=M.shape[0])
    out = np.zeros_like(M)
    ok = norms >= NORM_FLOOR
    out[ok] = M[ok] / norms[ok, None]
    return out


def check_embedding_matrix(M, tol: float = UNIT_TOL) -> np.ndarray:
    """Validate the unit-row invariant and return ``M`` as float64."""
    M = _finite(M, "embedding matrix")
    if M.ndim != 2 or M.shape[1] == 0:
        raise ValueError(f"embedding matrix must be (rows, dim>0), got {M.shape}")
    norms = np.linalg.norm(M, axis=1)
    bad = ~((np.abs(norms - 1.0) <= tol) | (norms == 0.0))
    if np.any(bad):
        raise ValueError(f"rows {np.flatnonzero(bad).tolist()} are not unit length")
    return M


def cosine_scores(Q, D) -> np.ndarray:
    Q = np.asarray(Q, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    if Q.ndim != 2 or D.ndim != 2:
        raise ValueError("cosine_scores expects two 2-D matrices")
    if Q.shape[1] != D.shape[1]:
        raise ValueError(f"dimension mismatch: {Q.shape[1]} vs {D.shape[1]}")
    return Q @ D.T


def zscore_columns(S, eps: float = 1e-8) -> np.ndarray:
    """Standardize each column with the population standard deviation.

    Columns whose std falls below ``eps`` become zero.
    """
    S = _finite(S, "score matrix")
    mean = S.mean(axis=0)
    std = S.std(axis=0)
    out = (S - mean) / np.maximum(std, eps)
    out[:, std < eps] = 0.0
    return out


def zscore_rows(S, eps: float = 1e-8) -> np.ndarray:
    """Row-wise (within-query) counterpart of :func:`zscore_columns`."""
    return zscore_columns(np.asarray(S, dtype=np.float64).T, eps).T.copy()


def zscore(x, eps: float = 1e-8) -> np.ndarray:
    x = _finite(x, "vector")
    std = float(x.std())
    if std < eps:
        return np.zeros_like(x)
    return (x - x.mean()) / std


def centroid(M, weights=None) -> np.ndarray:
    """Weighted mean of the rows of ``M``; not renormalized."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] == 0:
        raise EmptySelection("centroid of an empty selection")
    uniform = bool(np.all(M == M[0]))  # summing copies can drift by an ulp
    if weights is None:
        return M[0].copy() if uniform else M.mean(axis=0)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (M.shape[0],):
        raise ValueError(f"weights shape {w.shape} does not match {M.shape[0]} rows")
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative with positive sum")
    if uniform:
        return M[0].copy()
    return (w[:, None] * M).sum(axis=0) / w.sum()


def project_onto(q, a) -> np.ndarray:
    """Component of ``q`` along the direction of ``a``."""
    q = np.asarray(q, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    norm = float(np.linalg.norm(a))
    if norm <= NORM_FLOOR:
        raise DegenerateAnchor("projection anchor has zero norm")
    a_hat = a / norm
    return float(q @ a_hat) * a_hat


def softmax(x, tau: float) -> np.ndarray:
    if tau <= 0:
        raise ValueError("tau must be positive")
    x = _finite(x, "vector") / tau
    e = np.exp(x - x.max())
    return e / e.sum()
