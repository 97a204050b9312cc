import math

import numpy as np
import pytest

from gfmate.errors import ConfigError, ShapeError
from gfmate.graph import normalize_adjacency
from gfmate.linalg import (
    cosine_sim,
    jacobi_svd,
    row_softmax,
    shannon_entropy,
    spmm,
    truncated_svd,
)
from gfmate.synthetic import sbm_graph

from conftest import tiny_graph


def dense_from_csr(adj):
    n = adj.num_nodes
    out = np.zeros((n, n))
    for i in range(n):
        for k in range(adj.row_ptr[i], adj.row_ptr[i + 1]):
            out[i, adj.col_idx[k]] = adj.values[k]
    return out


# ---------------------------------------------------------------------------
# spmm


def identity_csr(n):
    from gfmate.graph import CsrAdjacency

    return CsrAdjacency(
        row_ptr=np.arange(n + 1), col_idx=np.arange(n), values=np.ones(n)
    )


def test_spmm_identity_is_bit_exact(rng):
    b = rng.standard_normal((6, 4))
    out = spmm(identity_csr(6), b)
    assert (out == b).all()


def test_spmm_two_node_hand_computation():
    g = tiny_graph([[0, 1]], 2)
    adj = normalize_adjacency(g)  # all four entries 0.5
    out = spmm(adj, np.eye(2))
    assert np.allclose(out, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def test_spmm_empty_row_gives_zero_row(rng):
    from gfmate.graph import CsrAdjacency

    # row 1 has no entries
    adj = CsrAdjacency(row_ptr=[0, 1, 1], col_idx=[0], values=[2.0])
    out = spmm(adj, rng.standard_normal((2, 3)))
    assert (out[1] == 0).all()


def test_spmm_scalar_commutes(rng):
    g = sbm_graph(30, 3, 0.3, 0.1, 4, 7, "s")
    adj = normalize_adjacency(g)
    b = rng.standard_normal((30, 5))
    for c in (2.0, 3.7, -0.25):
        left = spmm(adj, b * c)
        right = spmm(adj, b) * c
        assert np.allclose(left, right, rtol=1e-13, atol=1e-13)


def test_spmm_shape_error():
    with pytest.raises(ShapeError):
        spmm(identity_csr(3), np.zeros((4, 2)))


# ---------------------------------------------------------------------------
# truncated SVD, with the one-sided Jacobi decomposition as oracle


def test_truncated_svd_identity_singular_values():
    u, s, vt = truncated_svd(np.eye(5), 3, seed=0)
    assert np.allclose(s, [1.0, 1.0, 1.0], atol=1e-10)


def test_truncated_svd_rank_one(rng):
    a = rng.standard_normal(12)
    b = rng.standard_normal(7)
    x = np.outer(a, b)
    _, s, _ = truncated_svd(x, 1, seed=3)
    assert math.isclose(s[0], np.linalg.norm(a) * np.linalg.norm(b), rel_tol=1e-10)


def test_truncated_svd_matches_jacobi_oracle(rng):
    x = rng.standard_normal((50, 20))
    _, s, _ = truncated_svd(x, 20, seed=1)
    _, s_oracle, _ = jacobi_svd(x)
    assert np.abs(s - s_oracle).max() <= 1e-8


def test_truncated_svd_orthonormal_and_near_optimal(rng):
    x = rng.standard_normal((60, 25)) @ np.diag(np.linspace(3, 0.1, 25)) @ rng.standard_normal((25, 25))
    for k in (1, 4, 10):
        u, s, vt = truncated_svd(x, k, seed=5)
        assert np.abs(u.T @ u - np.eye(k)).max() <= 1e-8
        assert (s >= 0).all() and (np.diff(s) <= 1e-12).all()
        resid = np.linalg.norm(x - (u * s) @ vt)
        _, s_full, _ = jacobi_svd(x)
        best = np.linalg.norm(s_full[k:])
        assert resid <= best * (1 + 1e-6) + 1e-12


def test_truncated_svd_residual_non_increasing(rng):
    x = rng.standard_normal((40, 15))
    resids = []
    for k in range(1, 8):
        u, s, vt = truncated_svd(x, k, seed=2)
        resids.append(np.linalg.norm(x - (u * s) @ vt))
    assert all(b <= a + 1e-9 for a, b in zip(resids, resids[1:]))


def test_truncated_svd_invalid_rank():
    with pytest.raises(ConfigError):
        truncated_svd(np.eye(4), 0, seed=0)
    with pytest.raises(ConfigError):
        truncated_svd(np.eye(4), 5, seed=0)


def test_jacobi_svd_self_check(rng):
    # the oracle itself: reconstruction, orthonormality, diagonal case
    x = rng.standard_normal((30, 18))
    u, s, vt = jacobi_svd(x)
    assert np.abs((u * s) @ vt - x).max() <= 1e-10
    assert np.abs(u.T @ u - np.eye(18)).max() <= 1e-12
    assert np.abs(vt @ vt.T - np.eye(18)).max() <= 1e-12
    d = np.diag([4.0, 2.5, 0.5])
    _, s_d, _ = jacobi_svd(d)
    assert np.allclose(s_d, [4.0, 2.5, 0.5], atol=1e-12)
    with pytest.raises(ConfigError):
        jacobi_svd(np.zeros((513, 2)))


# ---------------------------------------------------------------------------
# cosine similarity


def test_cosine_basics():
    v = np.array([1.0, 2.0, -1.0])
    assert cosine_sim(v, v) == pytest.approx(1.0, abs=1e-12)
    assert cosine_sim([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert cosine_sim([1.0, 2.0], [2.0, 4.0]) == pytest.approx(1.0, abs=1e-12)


def test_cosine_zero_norm_guard():
    assert cosine_sim(np.zeros(3), np.ones(3)) == 0.0
    assert cosine_sim(np.full(3, 1e-13), np.ones(3)) == 0.0


def test_cosine_scale_invariant(rng):
    for _ in range(25):
        h = rng.standard_normal(6)
        e = rng.standard_normal(6)
        for c in (2.0, 3.7, 1e-3):
            assert abs(cosine_sim(c * h, e) - cosine_sim(h, e)) <= 1e-14


def test_cosine_shape_mismatch():
    with pytest.raises(ShapeError):
        cosine_sim(np.ones(3), np.ones(4))


# ---------------------------------------------------------------------------
# softmax / entropy


def test_softmax_analytic_two_entries():
    p = row_softmax(np.array([1.0, 0.0]), 1.0)
    assert p[0] == pytest.approx(math.e / (math.e + 1.0), abs=1e-12)
    assert p[1] == pytest.approx(1.0 / (math.e + 1.0), abs=1e-12)


def test_softmax_uniform_and_stability():
    assert np.allclose(row_softmax(np.full(3, -7.3), 2.0), 1 / 3, atol=1e-12)
    p = row_softmax(np.array([1000.0, 0.0]), 1.0)
    assert np.isfinite(p).all()
    assert p[0] == pytest.approx(1.0, abs=1e-12)


def test_softmax_rows_sum_to_one(rng):
    z = rng.standard_normal((50, 7)) * 10
    p = row_softmax(z, 0.5)
    assert np.abs(p.sum(axis=1) - 1.0).max() <= 1e-12
    assert (p > 0).all()


def test_softmax_shift_invariant(rng):
    z = rng.standard_normal(9)
    for c in (100.0, -3.5):
        assert np.abs(row_softmax(z + c, 0.7) - row_softmax(z, 0.7)).max() <= 1e-12


def test_softmax_invalid_temperature():
    with pytest.raises(ConfigError):
        row_softmax(np.ones(3), 0.0)
    with pytest.raises(ConfigError):
        row_softmax(np.ones(3), -1.0)


def test_entropy_pins_and_bounds(rng):
    assert shannon_entropy(np.ones(5) / 5) == pytest.approx(math.log(5), abs=1e-12)
    assert shannon_entropy([0.0, 1.0, 0.0]) == 0.0
    assert shannon_entropy([0.5, 0.5, 0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-12)
    for _ in range(20):
        p = rng.random(6)
        p /= p.sum()
        h = shannon_entropy(p)
        assert 0.0 <= h <= math.log(6) + 1e-12


def test_entropy_rejects_negative():
    with pytest.raises(ConfigError):
        shannon_entropy([0.5, -0.1, 0.6])
