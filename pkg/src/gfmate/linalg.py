"""Dense/sparse numeric kernels.

Everything is double precision.  The kernels are pure functions over
immutable inputs and are safe to call concurrently.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .rng import make_rng

COSINE_EPS = 1e-12


def _as_matrix(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={a.ndim}")
    return a


def spmm(adj, dense) -> np.ndarray:
    """CSR x dense product with the rows accumulated in CSR order.

    ``adj`` is a CsrAdjacency (or anything exposing row_ptr/col_idx/values);
    ``dense`` must have one row per adjacency column.
    """
    b = _as_matrix(dense, "dense")
    n = len(adj.row_ptr) - 1
    if b.shape[0] != n:
        raise ShapeError(f"spmm: adjacency is {n}x{n} but dense has {b.shape[0]} rows")
    out = np.zeros((n, b.shape[1]), dtype=np.float64)
    row_ptr, col_idx, values = adj.row_ptr, adj.col_idx, adj.values
    for i in range(n):
        lo, hi = row_ptr[i], row_ptr[i + 1]
        if lo == hi:
            continue
        out[i] = values[lo:hi] @ b[col_idx[lo:hi]]
    return out


def truncated_svd(
    x,
    k: int,
    seed: int,
    oversample: int = 10,
    power_iters: int = 4,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rank-k SVD by randomized subspace iteration.

    Returns (u, s, vt) with u of shape (N, k), s non-negative and
    non-increasing, vt of shape (k, cols).  The sketch width is
    k + oversample (capped at the matrix ranks) and each power iteration is
    re-orthonormalized by QR for stability.
    """
    a = _as_matrix(x, "x")
    m, n = a.shape
    if k < 1:
        raise ConfigError(f"invalid rank k={k}: must be >= 1")
    if k > min(m, n):
        raise ConfigError(f"invalid rank k={k}: exceeds min(shape)={min(m, n)}")
    sketch = min(k + oversample, m, n)
    rng = make_rng(seed, "tsvd")
    omega = rng.standard_normal((n, sketch))
    q, _ = np.linalg.qr(a @ omega)
    for _ in range(power_iters):
        w, _ = np.linalg.qr(a.T @ q)
        q, _ = np.linalg.qr(a @ w)
    b = q.T @ a
    ub, s, vt = np.linalg.svd(b, full_matrices=False)
    u = q @ ub
    return u[:, :k], s[:k], vt[:k, :]


def jacobi_svd(x, tol: float = 1e-14, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full SVD by one-sided Jacobi rotations; exact small-matrix path.

    Intended for matrices up to 512x512; serves as the independent
    verification oracle for :func:`truncated_svd`.  Returns (u, s, vt) with
    min(shape) singular values sorted in non-increasing order.
    """
    a = _as_matrix(x, "x")
    if max(a.shape) > 512:
        raise ConfigError(f"jacobi_svd is limited to 512x512, got {a.shape}")
    transposed = a.shape[0] < a.shape[1]
    g = (a.T if transposed else a).copy()
    m, n = g.shape
    v = np.eye(n)
    converged = False
    for _ in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                gi, gj = g[:, i], g[:, j]
                aii = float(gi @ gi)
                ajj = float(gj @ gj)
                aij = float(gi @ gj)
                if abs(aij) <= tol * math.sqrt(aii * ajj) or aij == 0.0:
                    continue
                rotated = True
                zeta = (ajj - aii) / (2.0 * aij)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
                cs = 1.0 / math.hypot(1.0, t)
                sn = cs * t
                rot = np.array([[cs, sn], [-sn, cs]])
                g[:, [i, j]] = g[:, [i, j]] @ rot
                v[:, [i, j]] = v[:, [i, j]] @ rot
        if not rotated:
            converged = True
            break
    if not converged:
        raise NumericError(f"jacobi_svd: no convergence within {max_sweeps} sweeps")
    s = np.sqrt(np.sum(g * g, axis=0))
    order = np.argsort(-s, kind="stable")
    s = s[order]
    g = g[:, order]
    v = v[:, order]
    u = np.zeros_like(g)
    nonzero = s > 0
    u[:, nonzero] = g[:, nonzero] / s[nonzero]
    if transposed:
        return v, s, u.T
    return u, s, v.T


def cosine_sim(h, e, eps: float = COSINE_EPS) -> float:
    """Cosine similarity; 0.0 when either vector has norm below eps."""
    hv = np.asarray(h, dtype=np.float64)
    ev = np.asarray(e, dtype=np.float64)
    if hv.shape != ev.shape or hv.ndim != 1:
        raise ShapeError(f"cosine_sim: incompatible shapes {hv.shape} vs {ev.shape}")
    nh = math.sqrt(float(hv @ hv))
    ne = math.sqrt(float(ev @ ev))
    if nh < eps or ne < eps:
        return 0.0
    return float(hv @ ev) / (nh * ne)


def row_softmax(z, tau: float) -> np.ndarray:
    """Temperature softmax over the last axis, computed with max-subtraction."""
    if tau <= 0:
        raise ConfigError(f"invalid temperature tau={tau}: must be > 0")
    zz = np.asarray(z, dtype=np.float64) / tau
    zz = zz - zz.max(axis=-1, keepdims=True)
    ez = np.exp(zz)
    return ez / ez.sum(axis=-1, keepdims=True)


def shannon_entropy(p) -> float:
    """-sum p log p with 0 log 0 := 0; input must be a non-negative vector."""
    pv = np.asarray(p, dtype=np.float64)
    if (pv < 0).any():
        raise ConfigError("invalid distribution: negative entry")
    terms = np.where(pv > 0, pv * np.log(np.where(pv > 0, pv, 1.0)), 0.0)
    return float(-terms.sum())
