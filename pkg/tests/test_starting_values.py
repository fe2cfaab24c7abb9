import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mspca.admm import penalized_objective
from mspca.core import CovarianceSet
from mspca.exceptions import DegenerateStart
from mspca.starting_values import (correlation_extreme, eigen_start, extreme_pair, extreme_sequence,
                                   extreme_sparse, fix_sign, is_correlation_set, make_start,
                                   perturbed_start, project_orthogonal)

from conftest import random_spd


def test_eigen_start_design(design, scenario1_exact):
    P1, *_ = design
    Y = eigen_start(scenario1_exact, 1)
    assert abs(Y[:, 0] @ P1[:, 0]) == pytest.approx(1.0, abs=1e-10)
    Y2 = eigen_start(scenario1_exact, 2)
    np.testing.assert_allclose(np.sum(Y * Y2, axis=0), 0.0, atol=1e-10)
    for col in Y.T:
        j = np.argmax(np.abs(col))
        assert col[j] > 0
    with pytest.raises(IndexError):
        eigen_start(scenario1_exact, 11)


def test_eigen_start_diagonal_is_one_hot():
    cs = CovarianceSet.from_covariances([np.diag([1.0, 5.0, 2.0])])
    np.testing.assert_allclose(eigen_start(cs, 1)[:, 0], [0, 1, 0], atol=1e-14)


def test_extreme_sparse_design(design, scenario1_exact):
    _, _, _, S1, _ = design
    np.testing.assert_allclose(np.diag(S1), [1.625, 1.3125, 1.3125, 1.15625, 1.3125, 1.15625, 1, 1, 1, 1])
    cs = CovarianceSet.from_covariances([S1])
    for gamma in (0.0, 1.0):
        Y = extreme_sparse(cs, gamma, 1)
        assert Y[0, 0] == 1.0 and Y.sum() == 1.0


def test_extreme_sparse_ordering_and_exclusion():
    cs = CovarianceSet.from_covariances([np.diag([3.0, 2.0, 1.0])] * 2)
    seq = extreme_sequence(cs, 0.0, 2)
    np.testing.assert_array_equal(seq[1], [[0, 0], [1, 1], [0, 0]])
    two = CovarianceSet.from_covariances([np.diag([3.0, 2.0, 1.0]), np.diag([1.0, 2.0, 4.0])])
    Y = extreme_sparse(two, 1.0, 1)
    np.testing.assert_array_equal(Y, [[1, 0], [0, 0], [0, 1]])
    seq = extreme_sequence(two, 1.0, 3)
    np.testing.assert_array_equal(seq[2], [[0, 1], [0, 0], [1, 0]])
    with pytest.raises(IndexError):
        extreme_sparse(two, 1.0, 1, seq)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), N=st.integers(1, 4), p=st.integers(2, 6))
def test_extreme_sparse_brute_force(seed, N, p):
    rng = np.random.default_rng(seed)
    cs = CovarianceSet.from_covariances([random_spd(rng, p) for _ in range(N)])
    Y = extreme_sparse(cs, 0.5, 1)
    j = int(np.flatnonzero(Y[:, 0])[0])
    scores = [sum(S[jj, jj] for S in cs.sigmas) for jj in range(p)]
    assert scores[j] == max(scores)
    # among one-hot candidates the group norm is smallest for a shared row
    assert np.linalg.norm(Y, axis=1).sum() == pytest.approx(np.sqrt(N))
    assert np.all(np.count_nonzero(Y, axis=0) == 1)


def ar1(p, r):
    idx = np.arange(p)
    return r ** np.abs(idx[:, None] - idx[None, :])


def test_correlation_extreme_examples():
    eq = CovarianceSet.from_covariances([0.4 * np.ones((4, 4)) + 0.6 * np.eye(4)])
    assert is_correlation_set(eq)
    np.testing.assert_array_equal(correlation_extreme(eq, 1)[:, 0], [1, 0, 0, 0])
    ident = CovarianceSet.from_covariances([np.eye(3)] * 2)
    np.testing.assert_array_equal(correlation_extreme(ident, 1)[:, 0], [1, 0, 0])
    cs = CovarianceSet.from_covariances([ar1(6, 0.7), ar1(6, -0.3)])
    acc = np.zeros(6)
    for S in cs.sigmas:
        w, U = np.linalg.eigh(S)
        acc += fix_sign(U[:, -1]) * np.sqrt(w[-1])
    expected = int(np.argmax(np.round(np.abs(acc / 2), 12)))
    assert int(np.flatnonzero(correlation_extreme(cs, 1)[:, 0])[0]) == expected
    assert extreme_sequence(cs, 1.0, 1)[0][expected, 1] == 1.0


def test_make_start_examples(scenario1_exact, design):
    P1, P2, *_ = design
    Y = make_start(scenario1_exact, 0.5, 1)
    pair = extreme_pair(scenario1_exact, 0.5, 1)
    avg = 0.5 * (pair.y0 + pair.yinf)
    np.testing.assert_allclose(Y, avg / np.linalg.norm(avg, axis=0))
    assert Y[:, 0] @ P1[:, 0] > 0 and Y[:, 1] @ P2[:, 0] > 0
    diag = CovarianceSet.from_covariances([np.diag([3.0, 2.0, 1.0])] * 2)
    np.testing.assert_allclose(make_start(diag, 0.0, 1), [[1, 1], [0, 0], [0, 0]], atol=1e-14)


def test_make_start_orthogonal_to_priors(shifting_covs):
    prior = [make_start(shifting_covs, 0.5, 1)]
    Y = make_start(shifting_covs, 0.5, 2, prior)
    np.testing.assert_allclose(np.sum(Y * prior[0], axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(Y, axis=0), 1.0)


def test_degenerate_start_and_perturbation():
    cs = CovarianceSet.from_covariances([np.diag([3.0, 2.0, 1.0])])
    prior = [np.array([[1.0], [0.0], [0.0]])]
    with pytest.raises(DegenerateStart):
        make_start(cs, 0.5, 1, prior)
    Y = perturbed_start(cs, 0.5, 1, prior)
    assert abs(Y[0, 0]) < 1e-12 and np.linalg.norm(Y) == pytest.approx(1.0)


def test_project_orthogonal_normalizes_only_without_priors():
    V = np.array([[3.0, 0.0], [4.0, 2.0]])
    np.testing.assert_allclose(project_orthogonal(V), [[0.6, 0.0], [0.8, 1.0]])


@pytest.mark.parametrize("p", [2, 3, 4, 5, 6])
def test_l1_norm_of_unit_vectors(p):
    rng = np.random.default_rng(p)
    U = rng.standard_normal((1000, p))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    l1 = np.abs(U).sum(axis=1)
    assert np.all(l1 >= 1 - 1e-9)
    # equality only for one-hot vectors
    assert np.all(l1 > 1 + 1e-9)
    E = np.eye(p) * rng.choice([-1, 1], p)
    np.testing.assert_allclose(np.abs(E).sum(axis=1), 1.0, atol=1e-9)


@pytest.mark.parametrize("p", [2, 3, 4, 5, 6])
def test_group_norm_lower_bound(p):
    rng = np.random.default_rng(10 + p)
    N = 4
    for _ in range(250):
        V = rng.standard_normal((p, N))
        V /= np.linalg.norm(V, axis=0)
        assert np.linalg.norm(V, axis=1).sum() >= np.sqrt(N) - 1e-9
    single = np.zeros((p, N))
    single[p - 1] = rng.choice([-1, 1], N)
    assert np.linalg.norm(single, axis=1).sum() == pytest.approx(np.sqrt(N), abs=1e-12)
    two = np.zeros((p, N))
    two[0, :2] = 1
    two[1, 2:] = 1
    assert np.linalg.norm(two, axis=1).sum() > np.sqrt(N) + 1e-9


@pytest.mark.parametrize("gamma,eta", [(0.0, 0.5), (0.5, 0.5), (1.0, 0.5), (0.5, 1.5)])
def test_start_beats_random_feasible(scenario1_exact, gamma, eta):
    rng = np.random.default_rng(42)
    Y = make_start(scenario1_exact, gamma, 1)
    f0 = penalized_objective(Y, scenario1_exact, eta, gamma)
    worse = 0
    for _ in range(100):
        R = rng.standard_normal(Y.shape)
        R /= np.linalg.norm(R, axis=0)
        worse += f0 <= penalized_objective(R, scenario1_exact, eta, gamma)
    assert worse >= 95
