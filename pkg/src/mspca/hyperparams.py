"""Selection of the sparsity parameters and of the number of components.

``gamma`` maximizes the area under the curve of standardized explained
variance against sparsity along an increasing ``eta`` path, ``eta``
maximizes the trade-off product of zero fraction and standardized variance.
Both criteria only look at the first component.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .admm import AdmmConfig, solve_component
from .core import CovarianceSet, LoadingsSet, block_quadratic
from .exceptions import DegenerateScaling, InvalidArgument
from .starting_values import ExtremePair, extreme_pair

__all__ = [
    "PathPoint",
    "entrywise_sparsity",
    "sparsity_measure",
    "explained_variance",
    "scaled_variance",
    "auc",
    "eta_path",
    "tune_gamma",
    "tune_eta",
    "CpvTable",
    "cpv",
    "select_n_components",
]


@dataclass
class PathPoint:
    eta: float
    gamma: float
    sparsity_S: float
    scaled_var: float
    entrywise_sparsity: float
    loadings: np.ndarray

    @property
    def tpo(self) -> float:
        return self.entrywise_sparsity * self.scaled_var


def entrywise_sparsity(V) -> float:
    """Zero entries over ``N * (p - 1)``, the most a unit-norm matrix can have."""
    V = np.asarray(V)
    p, N = V.shape
    return float(np.sum(V == 0) / (N * (p - 1)))


def sparsity_measure(V) -> float:
    """Mean of the standardized entrywise and rowwise zero counts."""
    V = np.asarray(V)
    p = V.shape[0]
    rows = np.sum(~np.any(V != 0, axis=1))
    return 0.5 * (entrywise_sparsity(V) + rows / (p - 1))


def explained_variance(V, covset: CovarianceSet) -> float:
    return float(block_quadratic(V, covset.sigmas).sum())


def scaled_variance(V, covset: CovarianceSet, extremes: ExtremePair) -> float:
    """Explained variance mapped so the dense extreme gives 1 and the fully
    sparse extreme gives 0."""
    v0 = explained_variance(extremes.y0, covset)
    vinf = explained_variance(extremes.yinf, covset)
    if abs(v0 - vinf) <= 1e-12 * max(abs(v0), 1.0):
        raise DegenerateScaling("both extreme solutions explain the same variance")
    return (explained_variance(V, covset) - vinf) / (v0 - vinf)


def auc(S, var) -> float:
    """Trapezoid area under ``var`` (clipped to [0, 1]) over the sorted
    sparsity values; ties keep their path order."""
    S = np.asarray(S, dtype=float)
    var = np.clip(np.asarray(var, dtype=float), 0.0, 1.0)
    order = np.argsort(S, kind="stable")
    S, var = S[order], var[order]
    return float(np.sum(np.diff(S) * 0.5 * (var[1:] + var[:-1])))


def eta_path(covset: CovarianceSet, gamma: float, eta_grid: Sequence[float],
             config: Optional[AdmmConfig] = None, stop_at_full: bool = True) -> list:
    """First-component solutions along increasing ``eta``.

    Stops after the first point whose entrywise sparsity reaches one.
    """
    grid = np.sort(np.asarray(list(eta_grid), dtype=float))
    if grid.size == 0:
        raise InvalidArgument("eta grid is empty")
    pair = extreme_pair(covset, gamma, 1)
    path = []
    for eta in grid:
        res = solve_component(covset, float(eta), gamma, (), 1, config, pair=pair)
        V = res.loadings
        ent = entrywise_sparsity(V)
        path.append(PathPoint(float(eta), float(gamma), sparsity_measure(V),
                              scaled_variance(V, covset, pair), ent, V))
        if stop_at_full and ent >= 1.0:
            break
    return path


def tune_gamma(covset: CovarianceSet, gamma_grid: Sequence[float], eta_grid: Sequence[float],
               config: Optional[AdmmConfig] = None):
    """Return ``(gamma*, paths, aucs)``; ties go to the larger gamma."""
    gammas = [float(g) for g in gamma_grid]
    if not gammas:
        raise InvalidArgument("gamma grid is empty")
    paths, aucs = {}, []
    for g in gammas:
        path = eta_path(covset, g, eta_grid, config)
        paths[g] = path
        aucs.append(auc([pt.sparsity_S for pt in path], [pt.scaled_var for pt in path]))
    aucs = np.asarray(aucs)
    best = max(range(len(gammas)), key=lambda i: (aucs[i], gammas[i]))
    return gammas[best], paths, aucs


def tune_eta(covset: CovarianceSet, gamma: float, eta_grid: Sequence[float],
             config: Optional[AdmmConfig] = None, path: Optional[list] = None):
    """Return ``(eta*, path)`` maximizing the trade-off product; ties go to
    the smaller eta."""
    if path is None:
        path = eta_path(covset, gamma, eta_grid, config)
    tpo = np.array([pt.tpo for pt in path])
    best = int(np.flatnonzero(tpo == tpo.max())[0])
    return path[best].eta, path


@dataclass
class CpvTable:
    cumulative: np.ndarray
    per_source: np.ndarray

    def n_components(self, threshold: float = 0.8) -> Optional[int]:
        return select_n_components(self.cumulative, threshold)


def cpv(loadings: LoadingsSet, covset: CovarianceSet) -> CpvTable:
    """Cumulative percent variation over the stacked covariance.

    ``per_source[i, l]`` is the variance of source ``i`` explained by
    component ``l``, relative to that source's total variance.
    """
    totals = covset.total_variance()
    per = np.column_stack([block_quadratic(V, covset.sigmas) for V in loadings.components])
    cumulative = np.cumsum(per.sum(axis=0)) / totals.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        per_source = per / totals[:, None]
    return CpvTable(cumulative, per_source)


def select_n_components(cumulative, threshold: float = 0.8) -> Optional[int]:
    """Smallest k with CPV(k) >= threshold, or None if never reached."""
    hit = np.flatnonzero(np.asarray(cumulative) >= threshold - 1e-12)
    return int(hit[0]) + 1 if hit.size else None
