"""Data generators and the Monte-Carlo harness.

Two designs are covered: two sources built from different sparse loading
matrices (used to check recovery of sparsity patterns), and ``N`` sources
whose covariances shift linearly from the first to the second matrix, with
optional shift outliers in all or some sources. A third study compares the
default starting value of the solver against random feasible starts.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import ssmrcd
from .admm import AdmmConfig, eta_scaling, fit_pca, solve_component
from .core import CovarianceSet, MultiSourceData
from .exceptions import InvalidArgument, MspcaError
from .hyperparams import tune_eta, tune_gamma
from .metrics import classification_metrics, orthogonal_distance, subspace_angle
from .starting_values import eigen_start, fix_sign, is_correlation_set, project_orthogonal

log = logging.getLogger(__name__)

__all__ = [
    "canonical_loadings",
    "scenario1_covariances",
    "scenario2_covariances",
    "true_loadings",
    "outlier_mean",
    "sample_contaminated",
    "ScenarioConfig",
    "MethodSpec",
    "METHODS",
    "method_spec",
    "SimulationReport",
    "generate_repetition",
    "run_scenario",
    "sparsity_recovery_study",
    "starting_value_study",
    "read_external_loadings",
]

_METRICS = ("angle", "od", "sparsity", "TNR", "TPR", "GMean", "F1", "Z")


def _rt(x):
    return math.sqrt(x)


def canonical_loadings(p: int):
    """The two sparse orthonormal loading matrices and the shared eigenvalues.

    Returns ``(P1, P2, D)``; the leading 6x6 (resp. 4x4) blocks carry the
    structure and the rest is identity.
    """
    if p < 6:
        raise InvalidArgument("p must be at least 6")
    P1 = np.eye(p)
    P1[:6, :6] = [
        [_rt(1 / 2), 0, -_rt(1 / 2), 0, 0, 0],
        [_rt(1 / 4), 0, _rt(1 / 4), 0, -_rt(1 / 2), 0],
        [0, _rt(1 / 2), 0, -_rt(1 / 2), 0, 0],
        [0, _rt(1 / 4), 0, _rt(1 / 4), 0, -_rt(1 / 2)],
        [_rt(1 / 4), 0, _rt(1 / 4), 0, _rt(1 / 2), 0],
        [0, _rt(1 / 4), 0, _rt(1 / 4), 0, _rt(1 / 2)],
    ]
    P2 = np.eye(p)
    P2[:4, :4] = [
        [_rt(2 / 3), 0, -_rt(1 / 3), 0],
        [_rt(1 / 3), 0, _rt(2 / 3), 0],
        [0, _rt(1 / 3), 0, -_rt(2 / 3)],
        [0, _rt(2 / 3), 0, _rt(1 / 3)],
    ]
    D = np.diag([2.0, 1.5, 1.25, 1.125] + [1.0] * (p - 4))
    return P1, P2, D


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def scenario1_covariances(p: int = 10, noise_sd: float = 0.1, seed=0):
    """Noisy and exact covariances of the two-source design.

    The noise matrix has i.i.d. normal upper triangle (diagonal included)
    mirrored below; negative eigenvalues of the perturbed matrix are clipped
    at 1e-8.

    Returns ``(S1_hat, S2_hat, S1, S2)``.
    """
    P1, P2, D = canonical_loadings(p)
    S1, S2 = P1 @ D @ P1.T, P2 @ D @ P2.T
    rng = _rng(seed)
    out = []
    for S in (S1, S2):
        if noise_sd == 0:
            out.append(S.copy())
            continue
        E = np.triu(rng.normal(0.0, noise_sd, size=(p, p)))
        E = E + np.triu(E, 1).T
        w, U = np.linalg.eigh(S + E)
        M = (U * np.maximum(w, 1e-8)) @ U.T
        out.append(0.5 * (M + M.T))
    return out[0], out[1], S1, S2


def scenario2_covariances(N: int = 10, p: int = 10) -> np.ndarray:
    """Covariances moving linearly from the first to the second design matrix."""
    if N < 2:
        raise InvalidArgument("need at least two sources")
    _, _, S1, S2 = scenario1_covariances(p, 0.0)
    t = np.arange(N) / (N - 1)
    return (1 - t)[:, None, None] * S1 + t[:, None, None] * S2


def true_loadings(sigmas, k: int) -> np.ndarray:
    """First ``k`` eigenvectors of each covariance as a (k, p, N) stack."""
    sigmas = np.asarray(sigmas)
    N, p, _ = sigmas.shape
    out = np.empty((k, p, N))
    for i, S in enumerate(sigmas):
        w, U = np.linalg.eigh(S)
        U = U[:, ::-1]
        for l in range(k):
            out[l, :, i] = fix_sign(U[:, l])
    return out


def outlier_mean(p: int) -> np.ndarray:
    """Mean of the shift outliers; beyond ten entries ``(0, 1, -1)`` repeats."""
    base = [2, 4, 2, 4, 0, -1, 1, 0, 1, -1]
    tail = [0, 1, -1]
    vals = (base + [tail[j % 3] for j in range(max(p - 10, 0))])[:p]
    return np.sqrt(2.0) * np.asarray(vals, dtype=float)


def sample_contaminated(sigma, n: int, eps_out: float, seed=0):
    """``floor((1 - eps_out) n)`` draws from N(0, sigma) followed by shift
    outliers from N(outlier_mean, I).

    Returns ``(X, is_outlier)``.
    """
    if not 0 <= eps_out < 1:
        raise InvalidArgument("eps_out must lie in [0, 1)")
    sigma = np.asarray(sigma, dtype=float)
    p = sigma.shape[0]
    rng = _rng(seed)
    n_clean = int(math.floor((1 - eps_out) * n + 1e-9))
    w, U = np.linalg.eigh(sigma)
    L = U * np.sqrt(np.maximum(w, 0.0))
    clean = rng.standard_normal((n_clean, p)) @ L.T
    dirty = outlier_mean(p) + rng.standard_normal((n - n_clean, p))
    flags = np.r_[np.zeros(n_clean, bool), np.ones(n - n_clean, bool)]
    return np.vstack([clean, dirty]), flags


@dataclass
class ScenarioConfig:
    """Settings of the shifting-covariance design.

    ``contaminated`` lists the (0-based) sources receiving outliers; ``None``
    contaminates every source.
    """

    p: int = 10
    N: int = 10
    n_per_source: int = 100
    eps_out: float = 0.0
    noise_sd: float = 0.1
    seed: int = 0
    repetitions: int = 20
    contaminated: Optional[tuple] = None
    n_components: int = 2
    band_width: int = 1
    gamma_grid: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    eta_grid: tuple = tuple(np.round(np.arange(0.0, 3.01, 0.25), 10))
    lambda_grid: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    admm: AdmmConfig = field(default_factory=AdmmConfig)

    def __post_init__(self):
        if self.p < 6:
            raise InvalidArgument("p must be at least 6")
        if not 0 <= self.eps_out < 1:
            raise InvalidArgument("eps_out must lie in [0, 1)")
        if self.repetitions < 1 or self.N < 2 or self.n_per_source < 2:
            raise InvalidArgument("need repetitions >= 1, N >= 2, n_per_source >= 2")
        if not 1 <= self.n_components <= self.p:
            raise InvalidArgument("n_components must lie in 1..p")
        if self.contaminated is not None:
            self.contaminated = tuple(int(i) for i in self.contaminated)
            if any(not 0 <= i < self.N for i in self.contaminated):
                raise InvalidArgument("contaminated sources must lie in 0..N-1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gamma_grid"] = list(self.gamma_grid)
        d["eta_grid"] = [float(x) for x in self.eta_grid]
        d["lambda_grid"] = list(self.lambda_grid)
        d["contaminated"] = None if self.contaminated is None else list(self.contaminated)
        return d


@dataclass(frozen=True)
class MethodSpec:
    """How one repetition is fitted.

    ``lam=None`` selects the smoothing weight by the residual criterion;
    ``sparse=False`` fixes ``eta = 0``. ``external`` is a callable
    ``(rep, data) -> (k, p, N) array`` standing in for outside software.
    """

    name: str
    alpha: float = 0.5
    lam: Optional[float] = None
    sparse: bool = True
    external: Optional[Callable] = None


METHODS = {
    "ssmrcd-sparse-robust": MethodSpec("ssmrcd-sparse-robust", alpha=0.5),
    "ssmrcd-sparse-nonrobust": MethodSpec("ssmrcd-sparse-nonrobust", alpha=1.0),
    "ssmrcd-nonsmoothed": MethodSpec("ssmrcd-nonsmoothed", alpha=0.5, lam=0.0),
    "ssmrcd-nonsparse": MethodSpec("ssmrcd-nonsparse", alpha=0.5, sparse=False),
}


def read_external_loadings(path: str, p: int, N: int) -> dict:
    """Read loadings produced elsewhere.

    The CSV has a header ``rep,component,source,variable,value`` with 0-based
    integers. Returns ``{rep: (k, p, N) array}``.
    """
    rows = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            r, k = int(rec["rep"]), int(rec["component"])
            rows.setdefault(r, {}).setdefault(k, np.zeros((p, N)))
            rows[r][k][int(rec["variable"]), int(rec["source"])] = float(rec["value"])
    return {r: np.stack([comps[k] for k in sorted(comps)]) for r, comps in rows.items()}


def method_spec(name: str, external_path: Optional[str] = None, p: int = 10, N: int = 10) -> MethodSpec:
    if name in METHODS:
        return METHODS[name]
    if name == "external-adapter":
        if external_path is None:
            raise InvalidArgument("external-adapter needs a loadings CSV")
        table = read_external_loadings(external_path, p, N)

        def lookup(rep, data):
            if rep not in table:
                raise InvalidArgument(f"no external loadings for repetition {rep}")
            return table[rep]

        return MethodSpec(name, external=lookup)
    raise InvalidArgument(f"unknown method {name!r}")


def _rep_seeds(seed: int, repetitions: int):
    return np.random.SeedSequence(seed).spawn(repetitions)


def generate_repetition(config: ScenarioConfig, rep: int):
    """Data, per-row outlier flags and clean covariances of one repetition."""
    ss = _rep_seeds(config.seed, config.repetitions)[rep]
    rng = np.random.default_rng(ss)
    sigmas = scenario2_covariances(config.N, config.p)
    dirty = range(config.N) if config.contaminated is None else config.contaminated
    blocks, flags = [], []
    for i in range(config.N):
        eps = config.eps_out if i in dirty else 0.0
        X, f = sample_contaminated(sigmas[i], config.n_per_source, eps, rng)
        blocks.append(X)
        flags.append(f)
    return MultiSourceData.from_blocks(blocks), np.concatenate(flags), sigmas


def _fit_method(data: MultiSourceData, config: ScenarioConfig, method: MethodSpec, rep: int):
    W = ssmrcd.band_weights(config.N, config.band_width)
    base = ssmrcd.SsmrcdConfig(alpha=method.alpha, lam=method.lam or 0.0, W=W, seed=rep)
    if method.lam is None:
        cov = ssmrcd.select_lambda(data, base, config.lambda_grid).fit.covset
    else:
        cov = ssmrcd.fit(data, base).covset
    if not method.sparse:
        gamma, eta = 0.5, 0.0
    else:
        gamma, paths, _ = tune_gamma(cov, config.gamma_grid, config.eta_grid, config.admm)
        eta, _ = tune_eta(cov, gamma, config.eta_grid, config.admm, path=paths[gamma])
    res = fit_pca(cov, eta, gamma, config.n_components, config.admm)
    info = {"gamma": gamma, "eta": eta, "converged": res.converged}
    return cov, res.loadings.as_array(), info


def _rep_records(config: ScenarioConfig, method: MethodSpec, rep: int):
    data, flags, sigmas = generate_repetition(config, rep)
    if method.external is not None:
        est = np.asarray(method.external(rep, data), dtype=float)
        cov = CovarianceSet(sigmas, np.zeros((config.N, config.p)))
        info = {"gamma": float("nan"), "eta": float("nan"), "converged": True}
    else:
        cov, est, info = _fit_method(data, config, method, rep)
    truth = true_loadings(sigmas, config.n_components)
    records = []
    for k in sorted({1, config.n_components}):
        T, E = truth[:k], est[:k]
        od = orthogonal_distance(data, cov, E)
        per_source = []
        for i in range(config.N):
            rows = (data.source_of == i) & ~flags
            cm = classification_metrics(T[:, :, i:i + 1], E[:, :, i:i + 1])
            row = {"angle": subspace_angle(T[:, :, i].T, E[:, :, i].T),
                   "od": float(od[rows].mean()) if rows.any() else float("nan")}
            row.update(cm.as_dict())
            per_source.append(row)
            records.append({"rep": rep, "k": k, "source": i, **row})
        pooled = classification_metrics(T, E).as_dict()
        overall = {"angle": float(np.mean([r["angle"] for r in per_source])),
                   "od": float(np.nanmean([r["od"] for r in per_source]))}
        overall.update(pooled)
        records.append({"rep": rep, "k": k, "source": "all", **overall, **info})
    return records


@dataclass
class SimulationReport:
    """Tidy per-repetition records plus repetition-level failures."""

    method: str
    config: dict
    records: list
    errors: list = field(default_factory=list)

    def summary(self) -> list:
        """Mean and standard error of every metric per ``(k, source)``."""
        groups = {}
        for r in self.records:
            groups.setdefault((r["k"], str(r["source"])), []).append(r)
        out = []
        for (k, src), rows in sorted(groups.items(), key=lambda t: (t[0][0], t[0][1] != "all", t[0][1].zfill(6))):
            entry = {"k": k, "source": src, "n_reps": len(rows)}
            for m in _METRICS:
                vals = np.array([r[m] for r in rows], dtype=float)
                vals = vals[np.isfinite(vals)]
                entry[f"{m}_mean"] = float(vals.mean()) if vals.size else float("nan")
                entry[f"{m}_se"] = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else float("nan")
            out.append(entry)
        return out

    def mean(self, metric: str, k: int = 1, source="all") -> float:
        vals = [r[metric] for r in self.records if r["k"] == k and str(r["source"]) == str(source)]
        return float(np.nanmean(vals)) if vals else float("nan")

    def to_json(self, path: str) -> None:
        payload = {"method": self.method, "config": self.config, "summary": self.summary(),
                   "records": self.records, "errors": self.errors}
        from .io import write_json
        write_json(path, payload)

    def to_csv(self, path: str) -> None:
        cols = ["rep", "k", "source", *_METRICS, "gamma", "eta", "converged"]
        from .io import write_records_csv
        write_records_csv(path, self.records, cols)


def run_scenario(config: ScenarioConfig, method: MethodSpec, threads: int = 1) -> SimulationReport:
    """Run every repetition and collect the metrics.

    Repetitions draw from independent seed substreams, so results do not
    depend on ``threads``; failures are recorded and the batch goes on.
    """

    def one(rep):
        try:
            return _rep_records(config, method, rep), None
        except (MspcaError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("repetition %d failed: %s", rep, exc)
            return [], {"rep": rep, "error": f"{type(exc).__name__}: {exc}"}

    reps = range(config.repetitions)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, reps))
    else:
        results = [one(r) for r in reps]
    records = [rec for recs, _ in results for rec in recs]
    errors = [err for _, err in results if err is not None]
    return SimulationReport(method.name, config.to_dict(), records, errors)


def sparsity_recovery_study(p: int = 10, noise_sd: float = 0.1, etas: Sequence[float] = (0.5,),
                            gammas: Sequence[float] = (0.0, 0.5, 1.0), repetitions: int = 20,
                            seed: int = 0, n_components: int = 2,
                            config: Optional[AdmmConfig] = None, threads: int = 1) -> SimulationReport:
    """Two-source design with noisy covariances and known sparse loadings.

    The truth for component ``l`` of source ``i`` is column ``l`` of ``P_i``.
    ``all_zero`` flags repetitions in which every true zero of the first
    component was estimated as zero.
    """
    P1, P2, _ = canonical_loadings(p)
    truth = np.stack([np.column_stack([P1[:, l], P2[:, l]]) for l in range(n_components)])

    def one(rep):
        ss = _rep_seeds(seed, repetitions)[rep]
        S1h, S2h, _, _ = scenario1_covariances(p, noise_sd, np.random.default_rng(ss))
        cov = CovarianceSet.from_covariances([S1h, S2h])
        recs = []
        for eta in etas:
            for gamma in gammas:
                res = fit_pca(cov, float(eta), float(gamma), n_components, config)
                est = res.loadings.as_array()
                for k in sorted({1, n_components}):
                    cm = classification_metrics(truth[:k], est[:k]).as_dict()
                    tz = np.abs(truth[0]) < 1e-8
                    recs.append({
                        "rep": rep, "k": k, "source": "all", "eta": float(eta), "gamma": float(gamma),
                        "angle": float(np.mean([subspace_angle(truth[:k, :, i].T, est[:k, :, i].T)
                                                for i in range(2)])),
                        "od": float("nan"), **cm,
                        "all_zero": bool(np.all(est[0][tz] == 0)),
                        "converged": res.converged,
                    })
        return recs

    reps = range(repetitions)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(one, reps))
    else:
        out = [one(r) for r in reps]
    cfg = {"scenario": 1, "p": p, "noise_sd": noise_sd, "etas": [float(e) for e in etas],
           "gammas": [float(g) for g in gammas], "repetitions": repetitions, "seed": seed,
           "n_components": n_components}
    return SimulationReport("ssmrcd-sparse", cfg, [r for recs in out for r in recs])


def _pick_carry(cands, y0, correlation: bool, tol: float = 1e-4):
    objs = np.array([c.objective for c in cands])
    if not correlation:
        return cands[int(np.argmin(objs))]
    # near-ties among correlation inputs: keep the one closest to the eigenvector
    best = objs.min()
    near = [c for c, o in zip(cands, objs) if o <= best + tol * (1 + abs(best))]
    return max(near, key=lambda c: abs(float(np.sum(c.loadings * y0))))


def starting_value_study(covset: CovarianceSet, gamma_grid: Sequence[float], eta_grid: Sequence[float],
                         n_random: int = 100, seed: int = 0, n_components: int = 4,
                         config: Optional[AdmmConfig] = None) -> list:
    """Objective values reached from the default start and from random starts.

    Random starts have standard-normal entries and are projected onto the
    feasible set; the solver runs with ``rho = p`` and a loose root
    tolerance. After each component the best solution found (over all
    starts) becomes the prior for the next one. Component ``l`` uses the
    same ``eta`` scaling as :func:`~mspca.admm.fit_pca`.

    Returns one dict per ``(gamma, eta, k)``.
    """
    if n_random < 1:
        raise InvalidArgument("n_random must be at least 1")
    config = config or AdmmConfig(rho_override=float(covset.p), eps_root=0.1)
    corr = is_correlation_set(covset)
    rows = []
    for gi, gamma in enumerate(gamma_grid):
        for ei, eta in enumerate(eta_grid):
            rng = np.random.default_rng([seed, gi, ei])
            prior = []
            g1 = eta_scaling(covset)
            for k in range(1, n_components + 1):
                gl = 1.0 if k == 1 or g1 == 0 else eta_scaling(covset, prior) / g1
                eta_k = float(eta) * gl
                proposed = solve_component(covset, eta_k, float(gamma), prior, k, config)
                randoms = []
                for _ in range(n_random):
                    Z = rng.standard_normal((covset.p, covset.N))
                    try:
                        start = project_orthogonal(Z, prior)
                    except MspcaError:
                        continue
                    randoms.append(solve_component(covset, eta_k, float(gamma), prior, k, config,
                                                   start=start))
                robj = np.array([r.objective for r in randoms])
                rows.append({
                    "gamma": float(gamma), "eta": float(eta), "k": k, "eta_k": eta_k,
                    "proposed": proposed.objective,
                    "proposed_converged": proposed.converged,
                    "random_median": float(np.median(robj)),
                    "random_min": float(robj.min()),
                    "random_max": float(robj.max()),
                    "share_random_not_better": float(np.mean(robj >= proposed.objective - 1e-8)),
                    "random": robj.tolist(),
                    "random_converged": float(np.mean([r.converged for r in randoms])),
                })
                carry = _pick_carry([proposed] + randoms, eigen_start(covset, k), corr)
                prior.append(carry.loadings)
    return rows
