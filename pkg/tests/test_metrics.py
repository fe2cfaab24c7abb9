import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import subspace_angles
from scipy.stats import ortho_group

from mspca.core import CovarianceSet, MultiSourceData
from mspca.exceptions import DegenerateSubspace, DimensionError
from mspca.metrics import (classification_metrics, compute_scores, mean_subspace_angle,
                           orthogonal_distance, subspace_angle)


def two_sources(X):
    return MultiSourceData(X, np.repeat([0, 1], len(X) // 2))


def test_scores_examples():
    X = np.arange(12.0).reshape(4, 3)
    data = two_sources(X)
    cs = CovarianceSet(np.stack([np.eye(3)] * 2), np.zeros((2, 3)))
    L = np.stack([np.tile(np.eye(3)[:, [0]], (1, 2)), np.tile(np.eye(3)[:, [2]], (1, 2))])
    np.testing.assert_array_equal(compute_scores(data, cs, L), X[:, [0, 2]])
    cs_mu = CovarianceSet(np.stack([np.eye(3)] * 2), X[[0, 2]])
    np.testing.assert_array_equal(compute_scores(data, cs_mu, L)[[0, 2]], 0.0)
    with pytest.raises(DimensionError):
        compute_scores(data, cs, L[:, :2])


def test_reconstruction_and_od_with_full_basis():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((10, 4))
    data = two_sources(X)
    mus = rng.standard_normal((2, 4))
    cs = CovarianceSet(np.stack([np.eye(4)] * 2), mus)
    Q = [ortho_group.rvs(4, random_state=s) for s in (1, 2)]
    L = np.stack([np.column_stack([Q[0][:, l], Q[1][:, l]]) for l in range(4)])
    T = compute_scores(data, cs, L)
    recon = np.stack([mus[s] + L[:, :, s].T @ t for s, t in zip(data.source_of, T)])
    np.testing.assert_allclose(recon, X, atol=1e-12)
    np.testing.assert_allclose(orthogonal_distance(data, cs, L), 0.0, atol=1e-12)


def test_od_perpendicular_distance():
    data = MultiSourceData(np.array([[3.0, 4.0], [1.0, 1.0]]), np.array([0, 0]))
    cs = CovarianceSet(np.eye(2)[None], np.zeros((1, 2)))
    v = np.array([[[1.0], [1.0]]]) / np.sqrt(2)
    np.testing.assert_allclose(orthogonal_distance(data, cs, v), [1 / np.sqrt(2), 0.0], atol=1e-12)


def test_od_ignores_components_orthogonal_to_residual():
    data = MultiSourceData(np.array([[1.0, 2.0, 0.0], [-1.0, 0.5, 0.0]]), np.array([0, 0]))
    cs = CovarianceSet(np.eye(3)[None], np.zeros((1, 3)))
    one = np.array([[[1.0], [0.0], [0.0]]])
    two = np.concatenate([one, [[[0.0], [0.0], [1.0]]]])
    np.testing.assert_allclose(orthogonal_distance(data, cs, one), orthogonal_distance(data, cs, two))


def test_angle_examples():
    e = np.eye(2)
    assert subspace_angle(e[:, [0]], e[:, [0]]) == 0.0
    assert subspace_angle(e[:, [0]], e[:, [1]]) == pytest.approx(1.0)
    assert subspace_angle(e[:, [0]], np.array([[1.0], [1.0]])) == pytest.approx(0.5)
    with pytest.raises(DegenerateSubspace):
        subspace_angle(np.ones((3, 2)), np.eye(3)[:, :2])
    with pytest.raises(DimensionError):
        subspace_angle(np.eye(3)[:, :1], np.eye(3)[:, :2])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), p=st.integers(2, 8), k=st.integers(1, 3))
def test_angle_matches_scipy_and_is_a_subspace_property(seed, p, k):
    k = min(k, p)
    rng = np.random.default_rng(seed)
    A = np.linalg.qr(rng.standard_normal((p, k)))[0]
    B = np.linalg.qr(rng.standard_normal((p, k)))[0]
    ref = subspace_angles(A, B).max() / (np.pi / 2)
    a = subspace_angle(A, B)
    # arccos of a cosine near one resolves angles only to about 1e-8
    assert a == pytest.approx(ref, abs=1e-6)
    assert subspace_angle(B, A) == pytest.approx(a, abs=1e-6)
    R = ortho_group.rvs(k, random_state=seed) if k > 1 else -np.ones((1, 1))
    assert subspace_angle(A @ R, B * rng.choice([-1, 1], k)) == pytest.approx(a, abs=1e-6)
    assert 0 <= a <= 1


def test_mean_subspace_angle():
    T = np.stack([np.eye(3)[:, :2], np.eye(3)[:, 1:]])
    E = np.stack([np.eye(3)[:, :2], np.eye(3)[:, 1:]])
    mean, per = mean_subspace_angle(T, E, 2)
    assert mean == 0.0 and per.shape == (2,)
    E2 = E.copy()
    E2[0, :, 0] = [0, 0, 1]
    mean, per = mean_subspace_angle(T, E2, 1)
    np.testing.assert_allclose(per, [1.0, 0.0])
    assert mean == pytest.approx(0.5)


def test_classification_examples():
    T = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    m = classification_metrics(T, T)
    assert (m.tnr, m.tpr, m.gmean, m.f1, m.zmeasure) == (1, 1, 1, 1, 1)
    dense = classification_metrics(T, np.ones((3, 2)))
    assert dense.tpr == 0 and dense.gmean == 0 and dense.tnr == 1
    # two false non-zeros in a hand-built 3x2 case
    E = np.array([[1.0, 0.2], [0.0, 1.0], [0.3, 0.0]])
    m = classification_metrics(T, E)
    assert m.tnr == 1.0 and m.tpr == 0.5
    assert m.gmean == pytest.approx(np.sqrt(0.5))
    assert m.f1 == pytest.approx(2 / 3)
    assert m.zmeasure == pytest.approx(4 / 6)
    assert m.sparsity_fraction == pytest.approx(2 / 4)


def test_classification_source_without_zeros_is_flagged():
    T = np.array([[1.0, 1.0], [0.0, 1.0]])
    m = classification_metrics(T, T)
    assert m.tpr_excluded == [1] and m.tpr == 1.0
    with pytest.raises(DimensionError):
        classification_metrics(T, np.ones((3, 2)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_gmean_bounds(seed):
    rng = np.random.default_rng(seed)
    T = rng.standard_normal((6, 3)) * (rng.random((6, 3)) < 0.5)
    T[0] = 1.0
    T[1] = 0.0
    E = rng.standard_normal((6, 3)) * (rng.random((6, 3)) < 0.5)
    m = classification_metrics(T, E)
    assert m.gmean <= max(m.tnr, m.tpr) + 1e-12
    assert (m.gmean == 0) == (m.tnr == 0 or m.tpr == 0)
