"""Scores, orthogonal distances, subspace angles and sparsity classification."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CovarianceSet, LoadingsSet, MultiSourceData
from .exceptions import DegenerateSubspace, DimensionError

__all__ = [
    "compute_scores",
    "orthogonal_distance",
    "subspace_angle",
    "mean_subspace_angle",
    "ClassificationMetrics",
    "classification_metrics",
]


def _loadings_array(loadings) -> np.ndarray:
    if isinstance(loadings, LoadingsSet):
        return loadings.as_array()
    A = np.asarray(loadings, dtype=float)
    return A[None] if A.ndim == 2 else A


def compute_scores(data: MultiSourceData, covset: CovarianceSet, loadings) -> np.ndarray:
    """Scores of the locally centred observations, shape (n, k)."""
    A = _loadings_array(loadings)
    k, p, N = A.shape
    if p != data.p or N != data.N or covset.mus.shape != (N, p):
        raise DimensionError("data, covariance set and loadings disagree on p or N")
    src = data.source_of
    Xc = data.X - covset.mus[src]
    # A[:, :, src] -> (k, p, n)
    return np.einsum("nj,kjn->nk", Xc, A[:, :, src])


def orthogonal_distance(data: MultiSourceData, covset: CovarianceSet, loadings) -> np.ndarray:
    """Distance of each centred observation to its source's component span."""
    A = _loadings_array(loadings)
    T = compute_scores(data, covset, A)
    src = data.source_of
    Xc = data.X - covset.mus[src]
    fitted = np.einsum("kjn,nk->nj", A[:, :, src], T)
    return np.linalg.norm(Xc - fitted, axis=1)


def _orthonormal(B: np.ndarray) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    Q, R = np.linalg.qr(B)
    d = np.abs(np.diag(R))
    if d.size == 0 or d.min() <= 1e-10 * max(d.max(), 1e-300):
        raise DegenerateSubspace("basis is rank deficient")
    return Q


def subspace_angle(V_true, V_est) -> float:
    """Largest principal angle between two column spans, divided by pi/2."""
    A, B = _orthonormal(V_true), _orthonormal(V_est)
    if A.shape != B.shape:
        raise DimensionError("subspaces must have the same shape")
    sv = np.linalg.svd(A.T @ B, compute_uv=False)
    return float(np.arccos(np.clip(sv.min(), -1.0, 1.0)) / (np.pi / 2))


def mean_subspace_angle(true_loadings, est_loadings, k: int) -> tuple:
    """Per-source angles of the first ``k`` components and their mean."""
    T, E = _loadings_array(true_loadings), _loadings_array(est_loadings)
    N = T.shape[2]
    per = np.array([subspace_angle(T[:k, :, i].T, E[:k, :, i].T) for i in range(N)])
    return float(per.mean()), per


@dataclass
class ClassificationMetrics:
    """Zero/non-zero classification of loading entries.

    A "positive" is a zero entry. ``tpr_excluded`` lists sources without any
    true zero, which are left out of the TPR average.
    """

    tnr: float
    tpr: float
    gmean: float
    f1: float
    zmeasure: float
    sparsity_fraction: float
    tnr_per_source: np.ndarray = field(repr=False, default=None)
    tpr_per_source: np.ndarray = field(repr=False, default=None)
    tpr_excluded: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"TNR": self.tnr, "TPR": self.tpr, "GMean": self.gmean, "F1": self.f1,
                "Z": self.zmeasure, "sparsity": self.sparsity_fraction}


def classification_metrics(V_true, V_est, zero_tol: float = 1e-8) -> ClassificationMetrics:
    """Compare zero patterns of true and estimated loadings.

    Inputs are ``p x N`` matrices or ``(k, p, N)`` stacks; for stacks the
    entries of all components are pooled per source. Entries of ``V_true``
    below ``zero_tol`` in magnitude count as true zeros; estimated entries
    must be exactly zero.
    """
    T, E = _loadings_array(V_true), _loadings_array(V_est)
    if T.shape != E.shape:
        raise DimensionError("true and estimated loadings differ in shape")
    k, p, N = T.shape
    true_zero = np.abs(T) < zero_tol
    est_zero = E == 0
    tz = true_zero.transpose(1, 0, 2).reshape(k * p, N)
    ez = est_zero.transpose(1, 0, 2).reshape(k * p, N)

    n_nonzero = np.sum(~tz, axis=0)
    n_zero = np.sum(tz, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        tnr_i = np.sum(~tz & ~ez, axis=0) / n_nonzero
        tpr_i = np.sum(tz & ez, axis=0) / n_zero
    excluded = [int(i) for i in np.flatnonzero(n_zero == 0)]
    tnr = float(np.nanmean(tnr_i)) if np.any(n_nonzero > 0) else float("nan")
    tpr = float(np.nanmean(tpr_i)) if np.any(n_zero > 0) else float("nan")
    gmean = float(np.sqrt(tnr * tpr)) if np.isfinite(tnr) and np.isfinite(tpr) else float("nan")

    tp = np.sum(tz & ez)
    precision = tp / ez.sum() if ez.sum() else 0.0
    recall = tp / tz.sum() if tz.sum() else 0.0
    if tz.sum() == 0 and ez.sum() == 0:
        f1 = 1.0
    elif precision + recall > 0:
        f1 = float(2 * precision * recall / (precision + recall))
    else:
        f1 = 0.0
    z = float(np.mean(tz == ez))
    sparsity = float(ez.sum() / (k * N * (p - 1)))
    return ClassificationMetrics(tnr, tpr, gmean, f1, z, sparsity, tnr_i, tpr_i, excluded)
