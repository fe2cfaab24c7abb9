"""Starting values for the ADMM solver.

The start for component ``k`` averages two extreme solutions, the per-source
``k``-th eigenvectors (no sparsity) and the one-hot solution reached as the
sparsity weight grows without bound, and projects the average onto the
feasible set.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import CovarianceSet
from .exceptions import DegenerateProjection, DegenerateStart
from .numerics import sym_eigen

__all__ = [
    "ExtremePair",
    "fix_sign",
    "eigen_start",
    "extreme_sparse",
    "correlation_extreme",
    "is_correlation_set",
    "extreme_pair",
    "extreme_sequence",
    "project_orthogonal",
    "make_start",
]


@dataclass(frozen=True)
class ExtremePair:
    y0: np.ndarray
    yinf: np.ndarray
    k: int


def fix_sign(v: np.ndarray) -> np.ndarray:
    """Flip ``v`` so that its largest-magnitude entry is positive."""
    j = int(np.argmax(np.abs(v)))
    return -v if v[j] < 0 else v


def _check_k(covset: CovarianceSet, k: int):
    if not 1 <= k <= covset.p:
        raise IndexError(f"component index {k} outside 1..{covset.p}")


def eigen_start(covset: CovarianceSet, k: int) -> np.ndarray:
    """``p x N`` matrix whose column i is the k-th eigenvector of Sigma_i."""
    _check_k(covset, k)
    cols = [fix_sign(sym_eigen(S).vectors[:, k - 1]) for S in covset.sigmas]
    return np.column_stack(cols)


def _used(prior_extremes: Sequence[np.ndarray], N: int):
    used = [set() for _ in range(N)]
    for Y in prior_extremes:
        for i in range(N):
            used[i].update(np.flatnonzero(Y[:, i]).tolist())
    return used


def _argmax_unused(scores: np.ndarray, used: set) -> int:
    free = [j for j in range(scores.size) if j not in used]
    if not free:
        raise IndexError("all variables are used by earlier extreme solutions")
    # np.argmax picks the lowest index among ties
    return free[int(np.argmax(scores[free]))]


def is_correlation_set(covset: CovarianceSet, tol: float = 1e-10) -> bool:
    diag = np.diagonal(covset.sigmas, axis1=1, axis2=2)
    return bool(np.all(np.abs(diag - 1.0) <= tol))


def extreme_sparse(covset: CovarianceSet, gamma: float, k: int,
                   prior_extremes: Sequence[np.ndarray] = ()) -> np.ndarray:
    """One-hot extreme solution for ``eta -> inf``.

    With ``gamma == 1`` each source picks its own variable of largest
    variance; otherwise one variable maximizing the summed variance is shared
    by all sources. Variables used by ``prior_extremes`` are skipped (per
    source for ``gamma == 1``, globally otherwise).
    """
    _check_k(covset, k)
    N, p = covset.N, covset.p
    diag = np.diagonal(covset.sigmas, axis1=1, axis2=2)
    used = _used(prior_extremes, N)
    Y = np.zeros((p, N))
    if gamma >= 1.0:
        for i in range(N):
            Y[_argmax_unused(diag[i], used[i]), i] = 1.0
    else:
        j = _argmax_unused(diag.sum(axis=0), set().union(*used))
        Y[j, :] = 1.0
    return Y


def correlation_extreme(covset: CovarianceSet, k: int,
                        prior_extremes: Sequence[np.ndarray] = ()) -> np.ndarray:
    """Extreme solution for correlation matrices, where all variances tie.

    The k-th eigenvectors, scaled by the root of their eigenvalues, are
    averaged over sources; the variable with the largest absolute average
    (lowest index on ties) becomes the common one-hot row.
    """
    _check_k(covset, k)
    N, p = covset.N, covset.p
    acc = np.zeros(p)
    for S in covset.sigmas:
        eig = sym_eigen(S)
        acc += fix_sign(eig.vectors[:, k - 1]) * np.sqrt(max(eig.values[k - 1], 0.0))
    acc /= N
    used = set().union(*_used(prior_extremes, N))
    score = np.round(np.abs(acc), 12)
    Y = np.zeros((p, N))
    Y[_argmax_unused(score, used), :] = 1.0
    return Y


def extreme_sequence(covset: CovarianceSet, gamma: float, k: int) -> list:
    """Extreme solutions for components 1..k, each excluding the earlier ones."""
    corr = is_correlation_set(covset)
    out = []
    for kk in range(1, k + 1):
        if corr:
            out.append(correlation_extreme(covset, kk, out))
        else:
            out.append(extreme_sparse(covset, gamma, kk, out))
    return out


def extreme_pair(covset: CovarianceSet, gamma: float, k: int) -> ExtremePair:
    return ExtremePair(eigen_start(covset, k), extreme_sequence(covset, gamma, k)[-1], k)


def _prior_basis(prior_loadings, i):
    cols = [np.asarray(V)[:, i] for V in prior_loadings]
    cols = [c for c in cols if np.any(c)]
    if not cols:
        return None
    Q, R = np.linalg.qr(np.column_stack(cols))
    keep = np.abs(np.diag(R)) > 1e-12
    return Q[:, keep]


def project_orthogonal(V, prior_loadings=(), tol: float = 1e-12) -> np.ndarray:
    """Project every source column onto the orthogonal complement of that
    source's prior loadings and normalize it.

    For orthonormal priors this is plain Gram-Schmidt; slightly
    non-orthogonal priors (after thresholding) are handled through an
    orthonormal basis of their span. With no priors it only normalizes.
    """
    V = np.array(V, dtype=float, copy=True)
    for i in range(V.shape[1]):
        col = V[:, i]
        Q = _prior_basis(prior_loadings, i) if len(prior_loadings) else None
        if Q is not None:
            col = col - Q @ (Q.T @ col)
        nrm = np.linalg.norm(col)
        if nrm <= tol:
            raise DegenerateProjection(f"source {i} block vanishes after projection")
        V[:, i] = col / nrm
    return V


def make_start(covset: CovarianceSet, gamma: float, k: int, prior_loadings=(),
               pair: Optional[ExtremePair] = None) -> np.ndarray:
    """Projected average of the two extreme solutions for component ``k``."""
    if pair is None:
        pair = extreme_pair(covset, gamma, k)
    avg = 0.5 * (pair.y0 + pair.yinf)
    try:
        return project_orthogonal(avg, prior_loadings)
    except DegenerateProjection as exc:
        raise DegenerateStart(str(exc)) from exc


def perturbed_start(covset: CovarianceSet, gamma: float, k: int, prior_loadings,
                    pair: Optional[ExtremePair] = None, seed: int = 0,
                    scale: float = 1e-6) -> np.ndarray:
    """Fallback for :class:`DegenerateStart`: nudge degenerate blocks by a
    small random direction orthogonal to the priors and project again."""
    if pair is None:
        pair = extreme_pair(covset, gamma, k)
    avg = 0.5 * (pair.y0 + pair.yinf)
    rng = np.random.default_rng(seed)
    for i in range(avg.shape[1]):
        Q = _prior_basis(prior_loadings, i)
        col = avg[:, i] if Q is None else avg[:, i] - Q @ (Q.T @ avg[:, i])
        if np.linalg.norm(col) <= 1e-12:
            d = rng.standard_normal(avg.shape[0])
            if Q is not None:
                d -= Q @ (Q.T @ d)
            avg[:, i] = col + scale * d / np.linalg.norm(d)
    return project_orthogonal(avg, prior_loadings, tol=0.0)
