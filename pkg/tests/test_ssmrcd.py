import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mspca.core import CovarianceSet, MultiSourceData
from mspca.exceptions import InsufficientData, InvalidArgument
from mspca.ssmrcd import (SsmrcdConfig, band_weights, check_weights, consistency_factor, fit,
                          regularized_scatter, residual_criterion, select_lambda,
                          smooth_covariances)


def multi(rng, N, n, p, cov=None):
    cov = np.eye(p) if cov is None else cov
    X = np.concatenate([rng.multivariate_normal(np.zeros(p), cov, n) for _ in range(N)])
    return MultiSourceData(X, np.repeat(np.arange(N), n))


def test_band_weights_examples():
    np.testing.assert_allclose(band_weights(3, 1), [[0, 1, 0], [0.5, 0, 0.5], [0, 1, 0]])
    W = band_weights(12, 5)
    row = W[6] * W[6].sum() / W[6].max() * 5 / 5
    raw = W[6] / W[6][5] * 5
    np.testing.assert_allclose(raw, [0, 1, 2, 3, 4, 5, 0, 5, 4, 3, 2, 1])
    np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(np.diag(W) == 0)
    assert row.shape == (12,)


def test_check_weights_rejects():
    with pytest.raises(InvalidArgument):
        check_weights(np.ones((2, 2)) / 2)
    with pytest.raises(InvalidArgument):
        check_weights(np.array([[0, 0.9], [1, 0]]))
    with pytest.raises(InvalidArgument):
        check_weights(np.array([[0, 1.0], [1, 0]]), N=3)


def test_consistency_factor_examples():
    assert consistency_factor(1.0, 3) == 1.0
    # Monte-Carlo trimmed variance of a standard bivariate normal
    rng = np.random.default_rng(0)
    Z = rng.standard_normal((1_000_000, 2))
    d = np.sum(Z * Z, axis=1)
    keep = Z[d <= np.quantile(d, 0.5)]
    mc = 1.0 / keep.var(axis=0).mean()
    c = consistency_factor(0.5, 2)
    assert c > 1
    assert c == pytest.approx(mc, rel=0.01)
    vals = [consistency_factor(a, 4) for a in np.linspace(0.5, 1.0, 11)]
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
    with pytest.raises(InvalidArgument):
        consistency_factor(0.4, 2)


def test_regularized_scatter_examples():
    X = np.array([[0.0, 0.0], [2.0, 4.0]])
    T = np.eye(2)
    np.testing.assert_allclose(regularized_scatter(X, T, 1.0, 3.0), T)
    S = np.array([[2.0, 4.0], [4.0, 8.0]])
    np.testing.assert_allclose(regularized_scatter(X, T, 0.0, 1.0), S)
    np.testing.assert_allclose(regularized_scatter(X, T, 0.5, 1.0), [[1.5, 2.0], [2.0, 4.5]])
    with pytest.raises(InsufficientData):
        regularized_scatter(X[:1], T, 0.5, 1.0)


def test_smooth_covariances_examples():
    rng = np.random.default_rng(2)
    K = np.stack([(lambda A: A @ A.T)(rng.standard_normal((3, 3))) for _ in range(3)])
    W = (np.ones((3, 3)) - np.eye(3)) / 2
    np.testing.assert_allclose(smooth_covariances(K, 0.0, W), K)
    out = smooth_covariances(K, 0.5, W)
    np.testing.assert_allclose(out[0], 0.5 * K[0] + 0.25 * (K[1] + K[2]))
    onehot = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0.0]])
    np.testing.assert_allclose(smooth_covariances(K, 1.0, onehot)[0], K[1])


def test_sample_moments_without_trimming():
    rng = np.random.default_rng(3)
    data = multi(rng, 3, 40, 4)
    f = fit(data, SsmrcdConfig(alpha=1.0, lam=0.0, rho=0.0))
    for i in range(3):
        Xi = data.X[data.source_of == i]
        np.testing.assert_allclose(f.mus[i], Xi.mean(axis=0), atol=1e-10)
        np.testing.assert_allclose(f.sigmas[i], np.cov(Xi, rowvar=False), atol=1e-10)
    assert f.c_alpha == 1.0


def test_clean_covariance_accuracy():
    rng = np.random.default_rng(4)
    cov = np.array([[2.0, 0.8], [0.8, 1.0]])
    data = multi(rng, 2, 500, 2, cov)
    f = fit(data, SsmrcdConfig(alpha=0.75, lam=0.5))
    for S in f.sigmas:
        assert np.linalg.norm(S - cov) / np.linalg.norm(cov) < 0.25


def planted(seed, n=100, p=3, share=0.2):
    rng = np.random.default_rng(seed)
    data = multi(rng, 3, n, p)
    X = data.X.copy()
    bad = np.flatnonzero(data.source_of == 1)[: int(share * n)]
    X[bad] += 10.0
    return MultiSourceData(X, data.source_of), bad


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_planted_outliers_excluded(seed):
    data, bad = planted(seed)
    f = fit(data, SsmrcdConfig(alpha=0.5, lam=0.5))
    excluded = 1.0 - np.isin(bad, f.subsets[1]).mean()
    assert excluded >= 0.9


def test_objective_monotone_and_psd():
    data, _ = planted(5)
    f = fit(data, SsmrcdConfig(alpha=0.6, lam=0.3, n_starts=3))
    assert len(f.trace) >= 1
    assert all(b <= a for a, b in zip(f.trace, f.trace[1:]))
    assert f.objective == f.trace[-1]
    assert np.all(np.linalg.eigvalsh(f.sigmas).min(axis=1) >= -1e-10)
    assert np.all((f.rho_list >= 0) & (f.rho_list <= 1))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_permutation_invariance(seed):
    data, _ = planted(seed % 7, n=30)
    rng = np.random.default_rng(seed)
    perm = np.concatenate([rng.permutation(np.flatnonzero(data.source_of == i)) for i in range(3)])
    shuffled = MultiSourceData(data.X[perm], data.source_of[perm])
    cfg = SsmrcdConfig(alpha=0.75, lam=0.5, n_starts=3)
    a, b = fit(data, cfg), fit(shuffled, cfg)
    np.testing.assert_allclose(a.sigmas, b.sigmas, atol=1e-12)
    np.testing.assert_allclose(a.mus, b.mus, atol=1e-12)


def test_empty_source_rejected():
    with pytest.raises(InsufficientData):
        fit(MultiSourceData(np.zeros((3, 2)) + np.arange(3)[:, None], np.array([0, 0, 1])),
            SsmrcdConfig())


def test_residual_criterion_examples():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((20, 3))
    data = MultiSourceData(X, np.repeat([0, 1], 10))
    cs = CovarianceSet(np.stack([np.eye(3)] * 2), np.zeros((2, 3)))
    assert residual_criterion(data, cs, 1.0) == pytest.approx(np.linalg.norm(X, axis=1).mean())
    cs4 = CovarianceSet(np.stack([4 * np.eye(3)] * 2), np.zeros((2, 3)))
    assert residual_criterion(data, cs4, 0.7) == pytest.approx(0.5 * residual_criterion(data, cs, 0.7))
    at_mean = MultiSourceData(np.zeros((4, 3)), np.array([0, 0, 1, 1]))
    assert residual_criterion(at_mean, cs, 0.5) == 0.0


def test_select_lambda_examples():
    data, _ = planted(1, n=40)
    cfg = SsmrcdConfig(alpha=0.75, n_starts=2)
    sel = select_lambda(data, cfg, [0.3])
    assert sel.lam == 0.3
    sel = select_lambda(data, cfg, np.round(np.arange(0, 1.0001, 0.25), 2))
    assert sel.R[list(sel.grid).index(sel.lam)] == sel.R.min()
    assert sel.lam == sel.grid[np.flatnonzero(sel.R == sel.R.min())[0]]
    with pytest.raises(InvalidArgument):
        select_lambda(data, cfg, [])


def test_select_lambda_tie_goes_to_smaller():
    # with one source smoothing has no effect, so every lambda ties
    rng = np.random.default_rng(7)
    data = MultiSourceData(rng.standard_normal((30, 2)), np.zeros(30, int))
    sel = select_lambda(data, SsmrcdConfig(n_starts=1), [0.8, 0.2, 0.5])
    assert np.ptp(sel.R) == 0
    assert sel.lam == 0.2


def test_identical_sources_prefer_smoothing():
    # same covariance everywhere: on average R falls as smoothing grows from zero
    grid = [0.0, 0.5]
    diffs = []
    for rep in range(20):
        rng = np.random.default_rng(100 + rep)
        data = multi(rng, 4, 15, 3, np.diag([3.0, 1.0, 0.5]))
        sel = select_lambda(data, SsmrcdConfig(alpha=0.75, n_starts=1), grid)
        diffs.append(np.diff(sel.R))
    assert np.all(np.mean(diffs, axis=0) <= 0)
