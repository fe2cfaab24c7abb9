"""Consensus ADMM for multi-source sparse PCA.

For component ``k`` the loadings matrix ``V`` (p x N, one column per source)
minimizes

    -sum_i v_i' Sigma_i v_i + eta * gamma * ||V||_1
        + eta * (1 - gamma) * sqrt(N) * sum_j ||V_j.||_2

subject to unit-norm columns that are orthogonal to the earlier components of
the same source. The problem is split into a smooth constrained part (solved
through its KKT system), an entrywise L1 part and a row-group part, tied
together by a consensus variable.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import CovarianceSet, LoadingsSet, block_quadratic
from .exceptions import (DegenerateProjection, DegenerateStart, InvalidArgument,
                         RhoEscalationNeeded)
from .numerics import RootProblem, newton_root, sym_eigen
from .starting_values import (ExtremePair, extreme_pair, make_start,
                              perturbed_start, project_orthogonal)

log = logging.getLogger(__name__)

__all__ = [
    "AdmmConfig",
    "AdmmState",
    "PcResult",
    "PcaFit",
    "penalized_objective",
    "rho_default",
    "soft_threshold",
    "group_soft_threshold",
    "solve_v1",
    "consensus_and_duals",
    "reflect_to_halfspace",
    "residuals_and_tolerances",
    "project_orthogonal",
    "eta_scaling",
    "solve_component",
    "fit_pca",
]


@dataclass
class AdmmConfig:
    eps_admm: float = 1e-4
    eps_root: float = 1e-2
    eps_thr: float = 5e-3
    m_max: int = 2000
    rho_override: Optional[float] = None
    rho_escalation: float = 2.0
    max_escalations: int = 8
    newton_max_iter: int = 25
    escalate_on_stall: bool = True

    def __post_init__(self):
        for name in ("eps_admm", "eps_root", "eps_thr"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        if self.m_max < 1 or self.newton_max_iter < 1:
            raise InvalidArgument("iteration limits must be positive")
        if self.rho_escalation <= 1:
            raise InvalidArgument("rho_escalation must exceed 1")
        if self.rho_override is not None and not self.rho_override > 0:
            raise InvalidArgument("rho_override must be positive")


@dataclass
class AdmmState:
    """Consensus blocks and scaled-free duals, each stored as a p x N matrix."""

    v0: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    v3: Optional[np.ndarray]
    u1: np.ndarray
    u2: np.ndarray
    u3: Optional[np.ndarray]
    rho: float
    m: int = 0
    r: float = np.inf
    s: float = np.inf

    @classmethod
    def initial(cls, start: np.ndarray, rho: float, use_group: bool = True) -> "AdmmState":
        z = np.zeros_like(start)
        return cls(start.copy(), z.copy(), z.copy(), z.copy() if use_group else None,
                   z.copy(), z.copy(), z.copy() if use_group else None, rho)

    def blocks(self):
        out = [(self.v1, self.u1), (self.v2, self.u2)]
        if self.v3 is not None:
            out.append((self.v3, self.u3))
        return out


@dataclass
class PcResult:
    loadings: np.ndarray
    iterations: int
    converged: bool
    objective: float
    rho_used: float
    escalations: int = 0
    start: Optional[np.ndarray] = None
    zero_blocks: list = field(default_factory=list)
    fallback_to_start: bool = False
    residuals: list = field(default_factory=list)


@dataclass
class PcaFit:
    loadings: LoadingsSet
    results: list
    etas: list
    eta: float
    gamma: float

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.results)


def penalized_objective(V, covset: CovarianceSet, eta: float, gamma: float) -> float:
    V = np.asarray(V, dtype=float)
    var = float(block_quadratic(V, covset.sigmas).sum())
    l1 = float(np.abs(V).sum())
    grp = float(np.linalg.norm(V, axis=1).sum())
    return -var + eta * gamma * l1 + eta * (1 - gamma) * np.sqrt(V.shape[1]) * grp


def rho_default(covset: CovarianceSet, eta: float, prior_loadings=(), k: int = 1) -> float:
    """``eta`` plus half the average variance left after the prior components."""
    left = covset.total_variance().copy()
    for V in list(prior_loadings)[: k - 1]:
        left -= block_quadratic(V, covset.sigmas)
    return float(eta + left.sum() / (2 * covset.N))


def soft_threshold(x, t):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def group_soft_threshold(rows, t):
    """Block soft thresholding of each row (last axis) of ``rows``."""
    rows = np.asarray(rows, dtype=float)
    nrm = np.linalg.norm(rows, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(nrm > 0, np.maximum(1.0 - t / nrm, 0.0), 0.0)
    return scale * rows


class _Kkt:
    """Batched KKT system of the loadings subproblem, one row per source.

    Unknowns are ``(v, lambda_1..lambda_{k-1}, mu)``; the multiplier of the
    norm constraint is substituted by ``v'Sv - rho/2 v'(c + v)``. Rows with
    ``active`` set treat ``z'v >= 0`` as the equality ``z'v = 0``; the other
    rows fix ``mu = 0``.
    """

    def __init__(self, sigmas, C, Z, P, rho, active=None):
        self.S, self.C, self.Z, self.P, self.rho = sigmas, C, Z, P, rho
        self.N, self.p = C.shape
        self.q = P.shape[2]
        self.active = np.zeros(self.N, bool) if active is None else np.asarray(active, bool)

    def split(self, x):
        p, q = self.p, self.q
        return x[:, :p], x[:, p:p + q], x[:, p + q]

    def residual(self, x):
        V, L, mu = self.split(x)
        Sv = np.einsum("ijk,ik->ij", self.S, V)
        lam0 = np.sum(V * Sv, axis=1) - 0.5 * self.rho * np.sum(V * (self.C + V), axis=1)
        F1 = (-2 * Sv + self.rho * (self.C + V) - mu[:, None] * self.Z
              + 2 * lam0[:, None] * V + np.einsum("ijl,il->ij", self.P, L))
        F2 = np.einsum("ijl,ij->il", self.P, V)
        F3 = np.where(self.active, np.sum(self.Z * V, axis=1), mu)
        return np.concatenate([F1, F2, F3[:, None]], axis=1)

    def jacobian(self, x):
        V, L, mu = self.split(x)
        N, p, q = self.N, self.p, self.q
        Sv = np.einsum("ijk,ik->ij", self.S, V)
        lam0 = np.sum(V * Sv, axis=1) - 0.5 * self.rho * np.sum(V * (self.C + V), axis=1)
        grad0 = 2 * Sv - 0.5 * self.rho * (self.C + 2 * V)
        J = np.zeros((N, p + q + 1, p + q + 1))
        J[:, :p, :p] = (-2 * self.S + (self.rho + 2 * lam0)[:, None, None] * np.eye(p)
                        + 2 * V[:, :, None] * grad0[:, None, :])
        J[:, :p, p:p + q] = self.P
        J[:, :p, -1] = -self.Z
        J[:, p:p + q, :p] = np.transpose(self.P, (0, 2, 1))
        J[:, -1, :p] = np.where(self.active[:, None], self.Z, 0.0)
        J[:, -1, -1] = np.where(self.active, 0.0, 1.0)
        return J

    def start(self, V0):
        V0 = np.array(V0, dtype=float)
        # on active rows start from the boundary z'v = 0
        for i in np.flatnonzero(self.active):
            z = self.Z[i]
            zz = z @ z
            if zz > 0:
                w = V0[i] - (z @ V0[i]) / zz * z
                nrm = np.linalg.norm(w)
                if nrm > 1e-12:
                    V0[i] = w / nrm
        # orthogonality multipliers from the closed form with mu = 0
        Sv = np.einsum("ijk,ik->ij", self.S, V0)
        L = 2 * np.einsum("ijl,ij->il", self.P, Sv) - self.rho * np.einsum("ijl,ij->il", self.P, self.C)
        return np.concatenate([V0, L, np.zeros((self.N, 1))], axis=1)


def _prior_tensor(prior_loadings, p, N):
    if len(prior_loadings) == 0:
        return np.zeros((N, p, 0))
    return np.stack([np.asarray(V, dtype=float).T for V in prior_loadings], axis=2)


def _feasible(sys_, x, ok, slack):
    V, _, mu = sys_.split(x)
    return (
        ok
        & (np.abs(np.sum(V * V, axis=1) - 1) <= slack)
        & np.all(np.abs(np.einsum("ijl,ij->il", sys_.P, V)) <= slack, axis=1)
        & (np.sum(sys_.Z * V, axis=1) >= -slack)
        & (mu >= -slack)
    )


def solve_v1(covset: CovarianceSet, state: AdmmState, prior_loadings, z, k: int,
             config: AdmmConfig) -> np.ndarray:
    """Solve the smooth subproblem for every source.

    Each source minimizes ``-v'Sv + rho/2 ||v + c||^2`` with
    ``c = u1/rho - v0`` over unit vectors orthogonal to its prior loadings
    with ``z_i'v >= 0``, by Newton's method on the KKT conditions warm
    started at ``v0``. The half-space constraint is first left inactive;
    sources whose root violates it are solved again with ``z_i'v = 0`` and
    must then have a non-negative multiplier. Raises
    :class:`RhoEscalationNeeded` when no root is found or a constraint is
    violated by more than ``10 * eps_root``.
    """
    rho = state.rho
    p, N = state.v0.shape
    P = _prior_tensor(list(prior_loadings)[: k - 1], p, N)
    C = (state.u1 / rho - state.v0).T
    Z = np.asarray(z, dtype=float).T
    slack = 10 * config.eps_root

    def attempt(active):
        sys_ = _Kkt(covset.sigmas, C, Z, P, rho, active)
        prob = RootProblem(sys_.residual, sys_.start(state.v0.T), tol=config.eps_root,
                           max_iter=config.newton_max_iter, jacobian=sys_.jacobian)
        x, ok = newton_root(prob)
        return x, _feasible(sys_, x, ok, slack)

    x, feasible = attempt(np.zeros(N, bool))
    if not feasible.all():
        x_act, feas_act = attempt(~feasible)
        swap = ~feasible & feas_act
        x[swap] = x_act[swap]
        feasible = feasible | feas_act & swap
    if not feasible.all():
        raise RhoEscalationNeeded(f"no feasible root for sources {np.flatnonzero(~feasible).tolist()}")
    return x[:, :p].T.copy()


def consensus_and_duals(state: AdmmState, project=None) -> AdmmState:
    """Average the blocks into the consensus variable and update the duals.

    ``project``, if given, is applied to the new consensus before the dual
    step. Without the group block (``gamma == 1``) the average runs over two
    blocks.
    """
    rho = state.rho
    blocks = state.blocks()
    v0 = sum(v + u / rho for v, u in blocks) / len(blocks)
    if project is not None:
        v0 = project(v0)
    state.v0 = v0
    state.u1 = state.u1 + rho * (state.v1 - v0)
    state.u2 = state.u2 + rho * (state.v2 - v0)
    if state.v3 is not None:
        state.u3 = state.u3 + rho * (state.v3 - v0)
    return state


def residuals_and_tolerances(state: AdmmState, v0_prev, eps_admm: float):
    """Primal and dual residuals with their tolerances.

    Both residuals are sums of squared norms; the dual one scales with the
    number of blocks times ``rho**2``.
    """
    blocks = state.blocks()
    v0 = state.v0
    r = float(sum(np.sum((v - v0) ** 2) for v, _ in blocks))
    s = float(len(blocks) * state.rho ** 2 * np.sum((v0 - v0_prev) ** 2))
    root = np.sqrt(v0.size) * eps_admm
    eps_prime = root + eps_admm * max([np.linalg.norm(v) for v, _ in blocks] + [np.linalg.norm(v0)])
    eps_dual = root + eps_admm * max(np.linalg.norm(u) for _, u in blocks)
    state.r, state.s = r, s
    return r, s, eps_prime, eps_dual


def reflect_to_halfspace(state: AdmmState, z) -> np.ndarray:
    """Flip the sign of every source whose consensus lies on the wrong side
    of ``z``, in all blocks and duals at once.

    The objective and the unconstrained updates are unchanged by flipping
    one source's column, so the reflected state is an equally valid iterate;
    without it the consensus can settle on the mirror image that the
    half-space forbids and the iteration cycles.
    """
    flip = np.sum(np.asarray(z) * state.v0, axis=0) < 0
    if flip.any():
        sign = np.where(flip, -1.0, 1.0)
        for name in ("v0", "v1", "v2", "v3", "u1", "u2", "u3"):
            arr = getattr(state, name)
            if arr is not None:
                setattr(state, name, arr * sign)
    return flip


def _threshold_and_normalize(V, eps_thr):
    V = np.where(np.abs(V) < eps_thr, 0.0, V)
    nrm = np.linalg.norm(V, axis=0)
    zero = [int(i) for i in np.flatnonzero(nrm == 0)]
    V = V / np.where(nrm > 0, nrm, 1.0)
    return V, zero


def _run_admm(covset, eta, gamma, prior, start, rho, config, k):
    p, N = start.shape
    use_group = gamma < 1
    state = AdmmState.initial(start, rho, use_group)
    z = start
    t2 = eta * gamma / rho
    t3 = eta * (1 - gamma) * np.sqrt(N) / rho

    def project(V):
        try:
            return project_orthogonal(V, prior)
        except DegenerateProjection as exc:
            raise RhoEscalationNeeded(str(exc)) from exc

    history = []
    converged = False
    for m in range(1, config.m_max + 1):
        v0_prev = state.v0
        state.v1 = solve_v1(covset, state, prior, z, k, config)
        state.v2 = soft_threshold(state.v0 - state.u2 / rho, t2)
        if use_group:
            state.v3 = group_soft_threshold(state.v0 - state.u3 / rho, t3)
        consensus_and_duals(state, project)
        reflect_to_halfspace(state, z)
        state.m = m
        r, s, ep, ed = residuals_and_tolerances(state, v0_prev, config.eps_admm)
        history.append((r, s))
        if r < ep and s < ed:
            converged = True
            break
    return state, converged, history


def solve_component(covset: CovarianceSet, eta: float, gamma: float, prior_loadings=(),
                    k: Optional[int] = None, config: Optional[AdmmConfig] = None,
                    start: Optional[np.ndarray] = None,
                    pair: Optional[ExtremePair] = None) -> PcResult:
    """Loadings of component ``k`` given the earlier components.

    The start (also used as the sign-fixing vector ``z``) defaults to the
    projected average of the extreme solutions. On root-finding failure rho
    is multiplied by ``config.rho_escalation`` and the ADMM restarts from the
    start, at most ``config.max_escalations`` times; with
    ``config.escalate_on_stall`` the same happens when ``m_max`` iterations
    pass without convergence. On exit the consensus
    is projected, entries below ``eps_thr`` are zeroed and the columns are
    normalized again. If that ends with a worse penalized objective than the
    start, the start is returned instead.
    """
    config = config or AdmmConfig()
    prior = list(prior_loadings)
    k = len(prior) + 1 if k is None else k
    if not 1 <= k <= covset.p:
        raise InvalidArgument(f"component index {k} outside 1..{covset.p}")
    if not 0 <= gamma <= 1 or eta < 0:
        raise InvalidArgument("need eta >= 0 and gamma in [0, 1]")
    prior = prior[: k - 1]

    if start is None:
        try:
            start = make_start(covset, gamma, k, prior, pair)
        except DegenerateStart:
            start = perturbed_start(covset, gamma, k, prior, pair)
    else:
        start = project_orthogonal(start, prior)

    start_obj = penalized_objective(start, covset, eta, gamma)
    rho = config.rho_override if config.rho_override is not None else rho_default(covset, eta, prior, k)

    if not np.any(covset.sigmas):
        return PcResult(start, 0, True, start_obj, rho, start=start)

    escalations = 0
    while True:
        try:
            state, converged, history = _run_admm(covset, eta, gamma, prior, start, rho, config, k)
            if converged or not config.escalate_on_stall or escalations >= config.max_escalations:
                break
            reason = f"no convergence within {config.m_max} iterations"
        except RhoEscalationNeeded as exc:
            if escalations >= config.max_escalations:
                log.warning("component %d: giving up after %d rho escalations (%s)", k, escalations, exc)
                V, zero = _threshold_and_normalize(start, config.eps_thr)
                return PcResult(V, 0, False, penalized_objective(V, covset, eta, gamma), rho,
                                escalations, start, zero, True)
            reason = str(exc)
        escalations += 1
        rho *= config.rho_escalation
        log.debug("component %d: escalating rho to %g (%s)", k, rho, reason)

    V = project_orthogonal(state.v0, prior)
    V, zero = _threshold_and_normalize(V, config.eps_thr)
    obj = penalized_objective(V, covset, eta, gamma)
    fallback = False
    if obj > start_obj + 1e-6:
        # never end worse than the (feasible) start
        Vs, zs = _threshold_and_normalize(start, config.eps_thr)
        obj_s = penalized_objective(Vs, covset, eta, gamma)
        if obj_s < obj:
            V, zero, obj, fallback = Vs, zs, obj_s, True
    return PcResult(V, state.m, converged, obj, rho, escalations, start, zero, fallback, history)


def eta_scaling(covset: CovarianceSet, prior_loadings=()) -> float:
    """Summed leading eigenvalue of each covariance after projecting out the
    source's prior loadings."""
    total = 0.0
    for i, S in enumerate(covset.sigmas):
        P = np.eye(covset.p)
        if len(prior_loadings):
            Vi = np.column_stack([np.asarray(V)[:, i] for V in prior_loadings])
            P = P - Vi @ Vi.T
        total += sym_eigen(P @ S @ P).values[0]
    return float(total)


def fit_pca(covset: CovarianceSet, eta: float, gamma: float, n_components: int,
            config: Optional[AdmmConfig] = None,
            cpv_threshold: Optional[float] = None) -> PcaFit:
    """Solve components 1..n_components in turn.

    Component ``l`` uses ``eta * g_l`` where ``g_l`` is the remaining leading
    variance (see :func:`eta_scaling`) relative to that of the first
    component. With ``cpv_threshold`` the loop stops early once the
    cumulative explained share of the total variance reaches it.
    """
    if not 1 <= n_components <= covset.p:
        raise InvalidArgument(f"n_components must lie in 1..{covset.p}")
    config = config or AdmmConfig()
    loadings = LoadingsSet()
    results, etas = [], []
    g1 = eta_scaling(covset)
    for k in range(1, n_components + 1):
        gl = 1.0 if k == 1 or g1 == 0 else eta_scaling(covset, loadings.components) / g1
        eta_k = gl * eta
        res = solve_component(covset, eta_k, gamma, loadings.components, k, config)
        if not res.converged:
            log.warning("component %d did not converge (rho=%g)", k, res.rho_used)
        loadings.append(res.loadings)
        results.append(res)
        etas.append(eta_k)
        if cpv_threshold is not None:
            explained = sum(block_quadratic(V, covset.sigmas).sum() for V in loadings.components)
            if explained >= (cpv_threshold - 1e-12) * covset.total_variance().sum():
                break
    return PcaFit(loadings, results, etas, eta, gamma)
