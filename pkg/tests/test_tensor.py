import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tngeo.tensor import (
    NumericError,
    contract_left,
    contract_left_batch,
    contract_right_batch,
    group_rows,
    qr_decompose,
    svd,
    truncated_svd,
)


def naive_contract(env, t, j):
    out = np.zeros(t.shape[2])
    for a in range(t.shape[2]):
        for b in range(t.shape[0]):
            out[a] += env[b] * t[b, j, a]
    return out


def test_contract_left_trivial():
    assert contract_left(np.ones(1), np.ones((1, 2, 1)), 0).tolist() == [1.0]
    ident = np.zeros((2, 2, 2))
    for j in range(2):
        ident[:, j, :] = np.eye(2)
    assert contract_left(np.array([1.0, 0.0]), ident, 1).tolist() == [1.0, 0.0]


@given(st.integers(0, 2**32 - 1))
def test_contract_left_matches_loop(seed):
    rng = np.random.default_rng(seed)
    t = rng.normal(size=(3, 4, 5))
    env = rng.normal(size=3)
    j = int(rng.integers(4))
    np.testing.assert_allclose(contract_left(env, t, j), naive_contract(env, t, j), rtol=1e-12, atol=1e-14)


def test_contract_left_rejects_bad_input():
    with pytest.raises(ValueError):
        contract_left(np.ones(2), np.ones((3, 2, 1)), 0)
    with pytest.raises(ValueError):
        contract_left(np.ones(1), np.ones((1, 2, 1)), 2)


def test_batch_contractions():
    rng = np.random.default_rng(1)
    t = rng.normal(size=(3, 4, 5))
    sym = rng.integers(0, 4, size=20)
    left = rng.normal(size=(20, 3))
    right = rng.normal(size=(20, 5))
    got_l = contract_left_batch(left, t, sym)
    got_r = contract_right_batch(right, t, sym)
    for b in range(20):
        np.testing.assert_allclose(got_l[b], left[b] @ t[:, sym[b], :], rtol=1e-12)
        np.testing.assert_allclose(got_r[b], t[:, sym[b], :] @ right[b], rtol=1e-12)


def test_group_rows_partitions():
    sym = np.array([2, 0, 2, 1, 0])
    groups = {s: r.tolist() for s, r in group_rows(sym)}
    assert groups == {0: [1, 4], 1: [3], 2: [0, 2]}


def test_qr_examples():
    q, r = qr_decompose(np.eye(2))
    np.testing.assert_allclose(q, np.eye(2))
    np.testing.assert_allclose(r, np.eye(2))
    q, r = qr_decompose(np.array([[3.0], [4.0]]))
    np.testing.assert_allclose(q, [[0.6], [0.8]])
    np.testing.assert_allclose(r, [[5.0]])


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.integers(1, 9), st.integers(1, 9))
def test_qr_residuals(seed, m, n):
    a = np.random.default_rng(seed).normal(size=(m, n))
    q, r = qr_decompose(a)
    assert np.abs(q @ r - a).max() < 1e-10
    assert np.abs(q.T @ q - np.eye(q.shape[1])).max() < 1e-10
    assert np.all(np.diag(r) >= 0)
    assert np.allclose(np.tril(r, -1), 0)


def test_svd_examples():
    _, s, _ = svd(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(s, [3, 1])
    _, s, _ = svd(np.outer([0.6, 0.8], [1.0, 0.0, 0.0]))
    np.testing.assert_allclose(s, [1, 0], atol=1e-14)


def test_svd_residual_random():
    a = np.random.default_rng(3).normal(size=(6, 9))
    u, s, vt = svd(a)
    assert np.abs((u * s) @ vt - a).max() < 1e-10
    assert np.all(np.diff(s) <= 0)


def test_truncated_svd_keeps_dominant_pair():
    u, s, vt = truncated_svd(np.diag([2.0, 0.5]), 1)
    np.testing.assert_allclose((u * s) @ vt, np.diag([2.0, 0.0]), atol=1e-14)


def test_nonfinite_rejected():
    with pytest.raises(NumericError):
        qr_decompose(np.array([[np.nan]]))
    with pytest.raises(NumericError):
        svd(np.array([[np.inf, 0.0]]))
