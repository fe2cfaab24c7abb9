"""Spatially smoothed minimum regularized covariance determinant (ssMRCD).

Joint H-subset search over all sources. Each source's regularized scatter
``K_i = rho_i T + (1 - rho_i) c_alpha Cov(X_Hi)`` is smoothed with its
neighbours through a row-stochastic weight matrix, and subsets are chosen to
minimize the sum of determinants of the smoothed matrices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import CovarianceSet, MultiSourceData
from .exceptions import InsufficientData, InvalidArgument
from .numerics import chi2_cdf, chi2_quantile, inv_sqrt_psd

__all__ = [
    "SsmrcdConfig",
    "SsmrcdFit",
    "LambdaSelection",
    "consistency_factor",
    "regularized_scatter",
    "smooth_covariances",
    "select_rho",
    "fit",
    "residual_criterion",
    "select_lambda",
    "band_weights",
    "check_weights",
]

RHO_GRID = np.round(np.arange(0.0, 1.0 + 1e-9, 0.05), 10)


def band_weights(N: int, width: int) -> np.ndarray:
    """Row-normalized band weight matrix.

    Before scaling entry (i, j) is ``max(width + 1 - |i - j|, 0)`` off the
    diagonal and zero on it, so neighbours at distance one get the largest
    weight ``width``.
    """
    if N < 2 or width < 1:
        raise InvalidArgument("need N >= 2 and width >= 1")
    idx = np.arange(N)
    dist = np.abs(idx[:, None] - idx[None, :])
    W = np.maximum(width + 1 - dist, 0).astype(float)
    np.fill_diagonal(W, 0.0)
    return W / W.sum(axis=1, keepdims=True)


def check_weights(W, N: Optional[int] = None) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise InvalidArgument("weight matrix must be square")
    if N is not None and W.shape[0] != N:
        raise InvalidArgument(f"weight matrix is {W.shape[0]}x{W.shape[0]}, expected {N}x{N}")
    if W.shape[0] == 1:
        if W[0, 0] != 0:
            raise InvalidArgument("weight matrix must have a zero diagonal")
        return W
    if np.any(np.diag(W) != 0) or np.any(W < 0):
        raise InvalidArgument("weight matrix must be nonnegative with zero diagonal")
    if np.any(np.abs(W.sum(axis=1) - 1.0) > 1e-10):
        raise InvalidArgument("weight matrix rows must sum to one")
    return W


@dataclass
class SsmrcdConfig:
    """Settings for :func:`fit`.

    ``W=None`` means equal weights between all other sources. ``target=None``
    uses the identity. ``rho`` fixes the regularization per source (scalar or
    sequence) instead of the condition-number rule.
    """

    alpha: float = 0.75
    lam: float = 0.5
    W: Optional[np.ndarray] = None
    target: Optional[np.ndarray] = None
    n_starts: int = 5
    max_csteps: int = 50
    cond_max: float = 1e6
    rho: Optional[object] = None
    seed: int = 0

    def validate(self, N: int, p: int):
        if not 0.5 <= self.alpha <= 1.0:
            raise InvalidArgument("alpha must lie in [0.5, 1]")
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidArgument("lam must lie in [0, 1]")
        if self.n_starts < 1 or self.max_csteps < 1:
            raise InvalidArgument("n_starts and max_csteps must be positive")
        if self.W is None:
            W = np.zeros((N, N)) if N == 1 else (np.ones((N, N)) - np.eye(N)) / (N - 1)
        else:
            W = check_weights(self.W, N)
        T = np.eye(p) if self.target is None else np.asarray(self.target, dtype=float)
        if T.shape != (p, p):
            raise InvalidArgument("target must be p x p")
        return W, T


@dataclass
class SsmrcdFit:
    covset: CovarianceSet
    subsets: list
    objective: float
    rho_list: np.ndarray
    c_alpha: float
    lam: float
    alpha: float
    trace: list = field(default_factory=list)
    start_traces: list = field(default_factory=list)

    @property
    def sigmas(self) -> np.ndarray:
        return self.covset.sigmas

    @property
    def mus(self) -> np.ndarray:
        return self.covset.mus


def consistency_factor(alpha: float, p: int) -> float:
    """Factor making the covariance of the ``alpha`` most central points of a
    p-variate normal consistent."""
    if not 0.5 <= alpha <= 1.0:
        raise InvalidArgument("alpha must lie in [0.5, 1]")
    if alpha >= 1.0:
        return 1.0
    q = chi2_quantile(alpha, p)
    return float(alpha / chi2_cdf(q, p + 2))


def _cov(X: np.ndarray) -> np.ndarray:
    Xc = X - X.mean(axis=0)
    return Xc.T @ Xc / (X.shape[0] - 1)


def regularized_scatter(Xsub, target, rho_i: float, c_alpha: float) -> np.ndarray:
    Xsub = np.asarray(Xsub, dtype=float)
    if Xsub.ndim != 2 or Xsub.shape[0] < 2:
        raise InsufficientData("the subset needs at least two rows")
    K = rho_i * np.asarray(target, dtype=float) + (1.0 - rho_i) * c_alpha * _cov(Xsub)
    return 0.5 * (K + K.T)


def smooth_covariances(K_list, lam: float, W) -> np.ndarray:
    """``(1 - lam) K_i + lam * sum_j W_ij K_j`` for every source."""
    K = np.asarray(K_list, dtype=float)
    W = np.asarray(W, dtype=float)
    if K.shape[0] != W.shape[0]:
        raise InvalidArgument("weights and scatter list disagree on the number of sources")
    if K.shape[0] == 1:
        # a lone source has no neighbours to borrow from
        return K.copy()
    return (1.0 - lam) * K + lam * np.einsum("ij,jkl->ikl", W, K)


def select_rho(S: np.ndarray, target: np.ndarray, cond_max: float) -> float:
    """Smallest rho on the 0.05 grid whose blend with ``target`` is PSD and
    has condition number at most ``cond_max``."""
    for rho in RHO_GRID:
        ev = np.linalg.eigvalsh(rho * target + (1.0 - rho) * S)
        if ev[0] >= 0 and ev[-1] <= cond_max * ev[0]:
            return float(rho)
    return 1.0


def subset_size(alpha: float, n: int) -> int:
    return math.ceil(alpha * n - 1e-9)


def _mahalanobis_sq(X, mu, S):
    D = X - mu
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return np.einsum("ij,jk,ik->i", D, np.linalg.pinv(S), D)
    Z = np.linalg.solve(L, D.T)
    return np.sum(Z * Z, axis=0)


def _log_objective(sigmas) -> float:
    # log of the sum of determinants
    sign, logdet = np.linalg.slogdet(sigmas)
    if np.any(sign <= 0):
        return math.inf
    return float(logsumexp(logdet))


class _Problem:
    """Per-fit constants: canonically ordered source blocks, h_i, rho_i."""

    def __init__(self, data: MultiSourceData, config: SsmrcdConfig):
        self.W, self.T = config.validate(data.N, data.p)
        self.N, self.p = data.N, data.p
        self.alpha, self.lam = config.alpha, config.lam
        self.c_alpha = consistency_factor(config.alpha, data.p)
        self.blocks, self.index = [], []
        for i in range(data.N):
            rows = np.flatnonzero(data.source_of == i)
            Xi = data.X[rows]
            # canonical row order makes random starts permutation invariant
            order = np.lexsort(Xi.T[::-1])
            self.blocks.append(Xi[order])
            self.index.append(rows[order])
        self.h = [max(2, subset_size(config.alpha, len(b))) for b in self.blocks]
        for b, h in zip(self.blocks, self.h):
            if len(b) < 2 or h > len(b):
                raise InsufficientData("every source needs at least two observations")

        self.rho = np.empty(self.N)
        self.initial = []
        for i, Xi in enumerate(self.blocks):
            S = _cov(Xi)
            r_full = select_rho(S, self.T, config.cond_max)
            K_full = r_full * self.T + (1 - r_full) * S
            d = _mahalanobis_sq(Xi, np.median(Xi, axis=0), K_full)
            H0 = np.sort(np.argsort(d, kind="stable")[: self.h[i]])
            self.initial.append(H0)
            S0 = self.c_alpha * _cov(Xi[H0])
            self.rho[i] = select_rho(S0, self.T, config.cond_max)
        if config.rho is not None:
            self.rho[:] = np.broadcast_to(np.asarray(config.rho, dtype=float), (self.N,))
            if np.any((self.rho < 0) | (self.rho > 1)):
                raise InvalidArgument("rho values must lie in [0, 1]")

    def evaluate(self, subsets):
        K = np.stack([
            regularized_scatter(Xi[H], self.T, r, self.c_alpha)
            for Xi, H, r in zip(self.blocks, subsets, self.rho)
        ])
        sig = smooth_covariances(K, self.lam, self.W)
        mus = np.stack([Xi[H].mean(axis=0) for Xi, H in zip(self.blocks, subsets)])
        return sig, mus, _log_objective(sig)

    def csteps(self, subsets, max_csteps):
        sig, mus, obj = self.evaluate(subsets)
        trace = [obj]
        for _ in range(max_csteps):
            new = []
            for i, Xi in enumerate(self.blocks):
                d = _mahalanobis_sq(Xi, mus[i], sig[i])
                new.append(np.sort(np.argsort(d, kind="stable")[: self.h[i]]))
            if all(np.array_equal(a, b) for a, b in zip(new, subsets)):
                break
            sig_n, mus_n, obj_n = self.evaluate(new)
            if not obj_n <= obj:
                break
            subsets, sig, mus, obj = new, sig_n, mus_n, obj_n
            trace.append(obj)
        return subsets, sig, mus, obj, trace


def fit(data: MultiSourceData, config: SsmrcdConfig) -> SsmrcdFit:
    """Fit the ssMRCD estimator.

    One deterministic start (the ``h_i`` rows closest to the coordinatewise
    median under a regularized full-source scatter) and ``n_starts - 1``
    random subsets per source are refined by joint concentration steps; a
    step is kept only if the objective does not increase. The best start
    wins.
    """
    prob = _Problem(data, config)
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(config.n_starts)]
    starts = [prob.initial]
    for rng in rngs[1:]:
        starts.append([np.sort(rng.choice(len(Xi), size=h, replace=False))
                       for Xi, h in zip(prob.blocks, prob.h)])

    best = None
    traces = []
    for subsets in starts:
        res = prob.csteps(subsets, config.max_csteps)
        traces.append(res[4])
        if best is None or res[3] < best[3]:
            best = res
    subsets, sig, mus, obj, trace = best
    covset = CovarianceSet(sig, mus, {"lam": prob.lam, "alpha": prob.alpha,
                                      "h": list(prob.h), "rho": prob.rho.tolist()})
    global_subsets = [np.sort(ix[H]) for ix, H in zip(prob.index, subsets)]
    return SsmrcdFit(covset, global_subsets, obj, prob.rho.copy(), prob.c_alpha,
                     prob.lam, prob.alpha, trace, traces)


def residual_norms(data: MultiSourceData, covset: CovarianceSet) -> np.ndarray:
    norms = np.empty(data.n)
    for i in range(data.N):
        rows = data.source_of == i
        R = inv_sqrt_psd(covset.sigmas[i])
        norms[rows] = np.linalg.norm((data.X[rows] - covset.mus[i]) @ R, axis=1)
    return norms


def residual_criterion(data: MultiSourceData, fit_or_covset, alpha: float) -> float:
    """Mean of the ``ceil(alpha * n)`` smallest standardized residual norms."""
    covset = getattr(fit_or_covset, "covset", fit_or_covset)
    norms = np.sort(residual_norms(data, covset))
    h = max(1, subset_size(alpha, data.n))
    return float(norms[:h].mean())


@dataclass
class LambdaSelection:
    lam: float
    grid: np.ndarray
    R: np.ndarray
    fit: SsmrcdFit


def select_lambda(data: MultiSourceData, config: SsmrcdConfig,
                  lambda_grid: Sequence[float]) -> LambdaSelection:
    """Pick the smoothing weight minimizing the residual criterion.

    Ties go to the smaller value.
    """
    grid = np.asarray(list(lambda_grid), dtype=float)
    if grid.size == 0:
        raise InvalidArgument("lambda grid is empty")
    if np.any((grid < 0) | (grid > 1)):
        raise InvalidArgument("lambda values must lie in [0, 1]")
    R = np.empty(grid.size)
    fits = []
    for k, lam in enumerate(grid):
        cfg = replace(config, lam=float(lam))
        f = fit(data, cfg)
        fits.append(f)
        R[k] = residual_criterion(data, f, config.alpha)
    # ties toward the smaller lambda
    order = np.lexsort((grid, R))
    best = int(order[0])
    return LambdaSelection(float(grid[best]), grid, R, fits[best])

