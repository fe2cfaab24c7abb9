import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mspca.core import (CovarianceSet, LoadingsSet, MultiSourceData, block_quadratic,
                        rows_of_source, source_block, stack, unstack, variable_row)
from mspca.exceptions import DimensionError, InsufficientData


def selection_B(p, N, i):
    # picks the block of source i out of the stacked vector
    B = np.zeros((p, p * N))
    B[:, i * p:(i + 1) * p] = np.eye(p)
    return B


def selection_C(p, N, j):
    # picks variable j of every source
    C = np.zeros((N, p * N))
    for i in range(N):
        C[i, i * p + j] = 1.0
    return C


def test_stack_example():
    np.testing.assert_array_equal(stack(np.array([[1.0, 0.0], [0.0, 1.0]])), [1, 0, 0, 1])


@settings(max_examples=40, deadline=None)
@given(p=st.integers(1, 6), N=st.integers(1, 5), seed=st.integers(0, 10**6))
def test_stack_round_trip_and_selections(p, N, seed):
    V = np.random.default_rng(seed).standard_normal((p, N))
    v = stack(V)
    np.testing.assert_array_equal(unstack(v, p, N), V)
    for i in range(N):
        np.testing.assert_array_equal(source_block(v, p, i), selection_B(p, N, i) @ v)
        np.testing.assert_array_equal(source_block(v, p, i), V[:, i])
    for j in range(p):
        np.testing.assert_array_equal(variable_row(v, p, j), selection_C(p, N, j) @ v)
        np.testing.assert_array_equal(variable_row(v, p, j), V[j])
    # the selections partition the stacked vector
    assert sum(selection_B(p, N, i).T @ selection_B(p, N, i) for i in range(N)).trace() == p * N
    np.testing.assert_array_equal(sum(selection_C(p, N, j).T @ selection_C(p, N, j) for j in range(p)),
                                  np.eye(p * N))


def test_unstack_length_mismatch():
    with pytest.raises(DimensionError):
        unstack(np.zeros(5), 2, 2)


def test_block_quadratic_matches_block_diagonal():
    rng = np.random.default_rng(1)
    p, N = 4, 3
    sig = np.stack([(lambda A: A @ A.T)(rng.standard_normal((p, p))) for _ in range(N)])
    V = rng.standard_normal((p, N))
    big = np.zeros((p * N, p * N))
    for i in range(N):
        big[i * p:(i + 1) * p, i * p:(i + 1) * p] = sig[i]
    v = stack(V)
    assert block_quadratic(V, sig).sum() == pytest.approx(v @ big @ v, abs=1e-12)


def test_multisource_validation():
    X = np.arange(12.0).reshape(6, 2)
    d = MultiSourceData(X, np.array([0, 1, 0, 1, 0, 1]))
    assert (d.n, d.p, d.N) == (6, 2, 2)
    assert d.counts().sum() == d.n
    np.testing.assert_array_equal(rows_of_source(d, 1), X[[1, 3, 5]])
    with pytest.raises(DimensionError):
        MultiSourceData(X, np.array([1, 1, 2, 2, 1, 2]))
    with pytest.raises(InsufficientData):
        MultiSourceData(X, np.array([0, 0, 0, 0, 0, 1]))
    with pytest.raises(IndexError):
        rows_of_source(d, 2)


def test_single_source_returns_everything():
    X = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(rows_of_source(MultiSourceData(X, np.zeros(3, int)), 0), X)


def test_covariance_set_shapes():
    cs = CovarianceSet.from_covariances([np.eye(2), 2 * np.eye(2)])
    assert (cs.N, cs.p) == (2, 2)
    np.testing.assert_array_equal(cs.total_variance(), [2, 4])
    with pytest.raises(DimensionError):
        CovarianceSet(np.eye(2)[None], np.zeros((2, 2)))


def test_loadings_set():
    L = LoadingsSet()
    L.append(np.eye(3)[:, :2])
    L.append(np.eye(3)[:, [1, 1]])
    assert L.as_array().shape == (2, 3, 2)
    np.testing.assert_array_equal(L.source_matrix(1), np.eye(3)[:, [1, 1]])
    assert L.max_cross_product() == pytest.approx(1.0)
