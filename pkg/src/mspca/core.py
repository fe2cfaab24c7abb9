"""Data model for multi-source data, covariance sets and loadings.

Sources and variables are indexed from zero. A stacked loadings vector of
length ``p * N`` holds the source columns one after another, i.e. it is the
column-major flattening of the ``p x N`` loadings matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import DimensionError, InsufficientData

__all__ = [
    "MultiSourceData",
    "CovarianceSet",
    "LoadingsSet",
    "stack",
    "unstack",
    "source_block",
    "variable_row",
    "rows_of_source",
    "block_quadratic",
]


@dataclass(frozen=True)
class MultiSourceData:
    """Observations ``X`` (n x p) with a source label per row.

    Labels must be the contiguous integers ``0 .. N-1`` and every source
    needs at least two rows.
    """

    X: np.ndarray
    source_of: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        s = np.asarray(self.source_of)
        if X.ndim != 2:
            raise DimensionError("X must be a 2-d array")
        if s.shape != (X.shape[0],):
            raise DimensionError("source_of must have one entry per row of X")
        if not np.issubdtype(s.dtype, np.integer):
            if not np.all(np.equal(np.mod(s, 1), 0)):
                raise DimensionError("source labels must be integers")
            s = s.astype(int)
        labels = np.unique(s)
        if labels.size == 0 or labels[0] != 0 or labels[-1] != labels.size - 1:
            raise DimensionError("source labels must be contiguous integers starting at 0")
        counts = np.bincount(s)
        if counts.min() < 2:
            raise InsufficientData("every source needs at least two observations")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "source_of", s)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def N(self) -> int:
        return int(self.source_of.max()) + 1

    def counts(self) -> np.ndarray:
        return np.bincount(self.source_of, minlength=self.N)

    @classmethod
    def from_blocks(cls, blocks: Sequence[np.ndarray]) -> "MultiSourceData":
        X = np.vstack(blocks)
        src = np.concatenate([np.full(len(b), i) for i, b in enumerate(blocks)])
        return cls(X, src)


def rows_of_source(data: MultiSourceData, i: int) -> np.ndarray:
    """Rows of ``data.X`` belonging to source ``i``, in original order."""
    if not 0 <= i < data.N:
        raise IndexError(f"source index {i} out of range for {data.N} sources")
    return data.X[data.source_of == i]


@dataclass
class CovarianceSet:
    """Per-source means and covariance matrices."""

    sigmas: np.ndarray
    mus: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sigmas = np.asarray(self.sigmas, dtype=float)
        if self.sigmas.ndim != 3 or self.sigmas.shape[1] != self.sigmas.shape[2]:
            raise DimensionError("sigmas must have shape (N, p, p)")
        if self.mus is None:
            self.mus = np.zeros(self.sigmas.shape[:2])
        self.mus = np.asarray(self.mus, dtype=float)
        if self.mus.shape != self.sigmas.shape[:2]:
            raise DimensionError("mus must have shape (N, p)")

    @property
    def N(self) -> int:
        return self.sigmas.shape[0]

    @property
    def p(self) -> int:
        return self.sigmas.shape[1]

    @classmethod
    def from_covariances(cls, sigmas, mus=None, **meta) -> "CovarianceSet":
        return cls(np.asarray(sigmas, dtype=float), mus, dict(meta))

    def total_variance(self) -> np.ndarray:
        return np.trace(self.sigmas, axis1=1, axis2=2)


def stack(V) -> np.ndarray:
    """Stack a ``p x N`` loadings matrix into a vector of length ``p * N``."""
    V = np.asarray(V, dtype=float)
    if V.ndim != 2:
        raise DimensionError("loadings matrix must be 2-d")
    return V.reshape(-1, order="F")


def unstack(v, p: int, N: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (p * N,):
        raise DimensionError(f"expected a vector of length {p * N}, got shape {v.shape}")
    return v.reshape((p, N), order="F")


def source_block(v, p: int, i: int) -> np.ndarray:
    """Entries of a stacked vector belonging to source ``i`` (``B_i v``)."""
    v = np.asarray(v)
    return v[i * p:(i + 1) * p]


def variable_row(v, p: int, j: int) -> np.ndarray:
    """Entries of a stacked vector belonging to variable ``j`` (``C_j v``)."""
    v = np.asarray(v)
    return v[j::p]


def block_quadratic(V, sigmas) -> np.ndarray:
    """Per-source quadratic forms ``v_i' Sigma_i v_i`` for a ``p x N`` matrix."""
    V = np.asarray(V, dtype=float)
    return np.einsum("ji,ijk,ki->i", V, sigmas, V)


@dataclass
class LoadingsSet:
    """Ordered loadings matrices ``V^1 .. V^k``, each of shape (p, N)."""

    components: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.components)

    def __getitem__(self, k):
        return self.components[k]

    def append(self, V) -> None:
        self.components.append(np.asarray(V, dtype=float))

    def as_array(self) -> np.ndarray:
        """Array of shape (k, p, N)."""
        return np.stack(self.components) if self.components else np.empty((0, 0, 0))

    def source_matrix(self, i: int) -> np.ndarray:
        """Loadings of source ``i`` as columns, shape (p, k)."""
        return np.column_stack([V[:, i] for V in self.components])

    def max_cross_product(self) -> float:
        """Largest |<v^l_i, v^m_i>| over sources and component pairs."""
        A = self.as_array()
        worst = 0.0
        for l in range(len(A)):
            for m in range(l + 1, len(A)):
                worst = max(worst, float(np.abs(np.sum(A[l] * A[m], axis=0)).max()))
        return worst
