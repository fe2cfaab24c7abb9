"""Small dense numerical kernels.

Symmetric eigendecomposition by cyclic Jacobi rotations, PSD matrix
functions, a damped Newton root finder and chi-square helpers.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import special

from .exceptions import InvalidArgument, InvalidMatrix

__all__ = [
    "EigenDecomposition",
    "RootProblem",
    "sym_eigen",
    "inv_sqrt_psd",
    "newton_root",
    "chi2_cdf",
    "chi2_quantile",
]


@dataclass(frozen=True)
class EigenDecomposition:
    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def _as_symmetric(S) -> np.ndarray:
    S = np.array(S, dtype=float, copy=True)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] < 1:
        raise InvalidMatrix(f"expected a non-empty square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise InvalidMatrix("matrix has non-finite entries")
    scale = max(np.abs(S).max(), 1.0)
    if np.abs(S - S.T).max() > 1e-8 * scale:
        raise InvalidMatrix("matrix is not symmetric")
    return 0.5 * (S + S.T)


def sym_eigen(S, tol: float = 1e-12, max_sweeps: int = 100) -> EigenDecomposition:
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi sweeps.

    Parameters
    ----------
    S : array_like, shape (p, p)
        Symmetric matrix with finite entries.
    tol : float
        Sweeps stop once the off-diagonal Frobenius norm is at most
        ``tol * ||S||_F``.

    Returns
    -------
    EigenDecomposition
        Eigenvalues sorted in descending order and the matching orthonormal
        eigenvectors as columns.
    """
    A = _as_symmetric(S)
    p = A.shape[0]
    V = np.eye(p)
    target = tol * np.linalg.norm(A)

    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(A * A) - np.sum(np.diag(A) ** 2), 0.0))
        if off <= target:
            break
        for i in range(p - 1):
            for j in range(i + 1, p):
                aij = A[i, j]
                if aij == 0.0:
                    continue
                diff = A[j, j] - A[i, i]
                if abs(diff) > 1e150 * abs(aij):
                    # tiny rotation; t ~ 1 / (2 theta) without overflow
                    t = aij / diff
                elif diff == 0.0:
                    t = 1.0
                else:
                    theta = diff / (2.0 * aij)
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ai = A[:, i].copy()
                aj = A[:, j].copy()
                A[:, i] = c * ai - s * aj
                A[:, j] = s * ai + c * aj
                ai = A[i, :].copy()
                aj = A[j, :].copy()
                A[i, :] = c * ai - s * aj
                A[j, :] = s * ai + c * aj
                A[i, j] = A[j, i] = 0.0
                vi = V[:, i].copy()
                vj = V[:, j].copy()
                V[:, i] = c * vi - s * vj
                V[:, j] = s * vi + c * vj

    values = np.diag(A).copy()
    order = np.argsort(-values, kind="stable")
    return EigenDecomposition(values[order], V[:, order])


def inv_sqrt_psd(S, floor: float = 1e-10) -> np.ndarray:
    """Inverse symmetric square root with eigenvalues clipped at ``floor``."""
    eig = sym_eigen(S)
    vals = np.maximum(eig.values, floor)
    return (eig.vectors / np.sqrt(vals)) @ eig.vectors.T


@dataclass
class RootProblem:
    """Square nonlinear system ``F(x) = 0``.

    ``residual`` may also be evaluated on a batch: for ``start`` of shape
    (B, d) it receives (B, d) and must return (B, d), with rows being
    independent systems. ``jacobian``, if given, returns (d, d) or (B, d, d).
    """

    residual: Callable[[np.ndarray], np.ndarray]
    start: np.ndarray
    tol: float = 1e-8
    max_iter: int = 50
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        if self.start.ndim not in (1, 2) or self.start.shape[-1] < 1:
            raise InvalidArgument("start must be a non-empty vector or batch of vectors")
        if not self.tol > 0:
            raise InvalidArgument("tol must be positive")
        if self.max_iter < 1:
            raise InvalidArgument("max_iter must be positive")


def _fd_jacobian(fun, x, f0):
    # forward differences, one column for the whole batch at a time
    B, d = x.shape
    J = np.empty((B, d, d))
    for j in range(d):
        h = np.maximum(1e-7, 1e-7 * np.abs(x[:, j]))
        xh = x.copy()
        xh[:, j] += h
        J[:, :, j] = (fun(xh) - f0) / h[:, None]
    return J


def newton_root(problem: RootProblem):
    """Damped Newton iteration with a forward-difference Jacobian.

    A row is accepted once every residual component satisfies
    ``|F| <= 0.1 * tol * |F| + 0.1 * tol``. Each step is halved (at most 20
    times) until the residual norm decreases.

    Returns
    -------
    root : ndarray
        Same shape as ``problem.start``.
    converged : bool or ndarray of bool
        Per-row flags for batched problems.
    """
    single = problem.start.ndim == 1
    x = np.atleast_2d(problem.start).copy()
    tol = problem.tol

    if single:
        def fun(z):
            return np.atleast_2d(problem.residual(z[0]))
    else:
        fun = problem.residual

    def jac(z, fz):
        if problem.jacobian is None:
            return _fd_jacobian(fun, z, fz)
        J = problem.jacobian(z[0] if single else z)
        return J[None] if single else J

    def done(fz):
        a = np.abs(fz)
        return np.all(a <= 0.1 * tol * a + 0.1 * tol, axis=1)

    f = fun(x)
    if not np.all(np.isfinite(f)):
        raise InvalidArgument("residual is not finite at the starting point")
    converged = done(f)
    for _ in range(problem.max_iter):
        active = ~converged
        if not active.any():
            break
        J = jac(x, f)
        rows = np.flatnonzero(active)
        step = np.zeros_like(x)
        for r in rows:
            try:
                step[r] = np.linalg.solve(J[r], -f[r])
            except np.linalg.LinAlgError:
                step[r] = np.linalg.lstsq(J[r], -f[r], rcond=None)[0]
        norm0 = np.linalg.norm(f, axis=1)
        t = np.ones(x.shape[0])
        x_new = x + step
        f_new = fun(x_new)
        for _ in range(20):
            norm1 = np.linalg.norm(f_new, axis=1)
            worse = active & ~(np.isfinite(norm1) & (norm1 < norm0))
            if not worse.any():
                break
            t[worse] *= 0.5
            x_new[worse] = x[worse] + t[worse, None] * step[worse]
            f_new = fun(x_new)
        x[active] = x_new[active]
        f[active] = f_new[active]
        converged = done(f) & np.all(np.isfinite(f), axis=1)

    if single:
        return x[0], bool(converged[0])
    return x, converged


def chi2_cdf(x, df):
    """Chi-square distribution function via the regularized lower gamma."""
    x = np.asarray(x, dtype=float)
    return special.gammainc(0.5 * df, 0.5 * np.maximum(x, 0.0))


def chi2_quantile(prob: float, df: int) -> float:
    """Quantile of the chi-square distribution.

    Inverts :func:`chi2_cdf` with safeguarded Newton steps inside a
    shrinking bracket, to about 1e-12 in probability.
    """
    if not 0.0 < prob < 1.0:
        raise InvalidArgument(f"prob must lie in (0, 1), got {prob}")
    if df <= 0:
        raise InvalidArgument("df must be positive")
    k = 0.5 * df

    def density(x):
        return np.exp((k - 1.0) * np.log(x) - 0.5 * x - special.gammaln(k) - k * np.log(2.0))

    lo, hi = 0.0, max(1.0, float(df))
    while chi2_cdf(hi, df) < prob:
        lo, hi = hi, 2.0 * hi
    x = 0.5 * (lo + hi)
    for _ in range(200):
        err = float(chi2_cdf(x, df)) - prob
        if abs(err) <= 1e-13:
            break
        if err > 0:
            hi = x
        else:
            lo = x
        dens = density(x)
        x_new = x - err / dens if dens > 0 else lo - 1.0
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if hi - lo <= 1e-15 * max(hi, 1e-300):
            x = x_new
            break
        x = x_new
    return float(x)
