"""Command-line interface.

Subcommands ``ssmrcd``, ``fit``, ``tune``, ``simulate`` and ``plot``. Exit
codes: 0 on success, 2 for input errors, 3 when the solver did not converge
(results are still written, with per-component flags).

Options can also come from a ``key=value`` file given with ``--config``;
flags on the command line override it. ``MSPCA_THREADS`` sets the default
for ``--threads``.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import io as mio
from . import plotting, simulation, ssmrcd
from .admm import AdmmConfig, fit_pca
from .core import CovarianceSet, MultiSourceData
from .exceptions import InvalidArgument, MspcaError
from .hyperparams import cpv, select_n_components, tune_eta, tune_gamma
from .metrics import compute_scores

log = logging.getLogger("mspca")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
DEFAULT_SEED = 0


class InputError(InvalidArgument):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def parse_grid(text: str) -> list:
    """``start:end:step`` (end included), a comma list, or a single number."""
    text = str(text).strip()
    if not text:
        raise InputError("empty grid")
    try:
        if ":" in text:
            parts = [float(x) for x in text.split(":")]
            if len(parts) != 3:
                raise InputError(f"grid {text!r} must look like start:end:step")
            start, end, step = parts
            if step <= 0 or end < start:
                raise InputError(f"grid {text!r} is empty")
            n = int(np.floor((end - start) / step + 1e-9)) + 1
            return [float(np.round(start + i * step, 12)) for i in range(n)]
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise InputError(f"cannot parse grid {text!r}") from exc
    if not vals:
        raise InputError("empty grid")
    return vals


def _threads_default() -> int:
    env = os.environ.get("MSPCA_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InputError(f"MSPCA_THREADS must be an integer, got {env!r}")
    return 1


def read_config_file(path: str) -> dict:
    """``key=value`` lines; ``#`` starts a comment. Keys use flag spelling."""
    out = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    for ln, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{ln}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = val
    return out


def _add_common(p, seed=False):
    p.add_argument("--config", help="key=value file with default options")
    p.add_argument("--threads", type=int, default=None, help="worker cap (default MSPCA_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    if seed:
        p.add_argument("--seed", type=int, default=None, help=f"random seed (default {DEFAULT_SEED})")


def _add_ssmrcd_opts(p):
    p.add_argument("--source-col", default="source", help="name of the source-label column")
    p.add_argument("--weights", default="band:1", help="band:W or a header-free CSV matrix")
    p.add_argument("--alpha", type=float, default=0.75)
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--select-lambda", default=None, metavar="GRID",
                   help="choose lambda on this grid by the residual criterion")
    p.add_argument("--standardize", choices=["none", "median-mad"], default="none")
    p.add_argument("--n-starts", type=int, default=5)


def _add_admm_opts(p):
    p.add_argument("--eps-admm", type=float, default=1e-4)
    p.add_argument("--eps-root", type=float, default=1e-2)
    p.add_argument("--eps-thr", type=float, default=5e-3)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--rho", type=float, default=None, help="fixed ADMM penalty")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mspca", description="Sparse multi-source robust PCA")
    parser.add_argument("--version", action="version", version=f"mspca {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ssmrcd", help="robust smoothed covariances of a multi-source CSV")
    p.add_argument("input")
    _add_ssmrcd_opts(p)
    _add_common(p, seed=True)
    p.add_argument("-o", "--output", default="fit.json")
    p.add_argument("--trace-out", default="lambda_trace.csv")

    p = sub.add_parser("fit", help="sparse loadings from a covariance fit or raw data")
    p.add_argument("input", help="fit.json from 'ssmrcd' or a data CSV")
    p.add_argument("--data", help="data CSV for scores when the input is a fit")
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--gamma", type=float, default=0.5)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--k", type=int, default=None)
    g.add_argument("--cpv", type=float, default=None, help="smallest k reaching this share")
    _add_ssmrcd_opts(p)
    _add_admm_opts(p)
    _add_common(p, seed=True)
    p.add_argument("-o", "--output", default="loadings.json")
    p.add_argument("--scores-out", default="scores.csv")

    p = sub.add_parser("tune", help="choose gamma and eta")
    p.add_argument("input", help="fit.json from 'ssmrcd'")
    p.add_argument("--gamma-grid", default="0:1:0.1")
    p.add_argument("--eta-grid", default="0:5:0.25")
    _add_admm_opts(p)
    _add_common(p)
    p.add_argument("-o", "--output", default="params.json")
    p.add_argument("--path-out", default="path.csv")

    p = sub.add_parser("simulate", help="Monte-Carlo studies")
    p.add_argument("--scenario", choices=["1", "2", "starts"], required=True)
    p.add_argument("--profile", choices=["desk", "paper"], default="desk")
    p.add_argument("--n", type=int, default=100, help="observations per source")
    p.add_argument("--N", type=int, default=10, help="number of sources")
    p.add_argument("--p", type=int, default=10, help="number of variables")
    p.add_argument("--eps", type=float, default=0.0, help="outlier fraction")
    p.add_argument("--local", default=None, help="comma list of contaminated sources (0-based)")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--method", default="ssmrcd-sparse-robust",
                   choices=sorted(simulation.METHODS) + ["external-adapter"])
    p.add_argument("--external", default=None, help="loadings CSV for external-adapter")
    p.add_argument("--noise-sd", type=float, default=0.1)
    p.add_argument("--k", type=int, default=None, help="number of components")
    p.add_argument("--etas", default=None, help="eta grid")
    p.add_argument("--gammas", default=None, help="gamma grid")
    p.add_argument("--lambdas", default=None, help="lambda grid")
    p.add_argument("--random", type=int, default=None, help="random starts per grid point")
    _add_common(p, seed=True)
    p.add_argument("-o", "--output", default="report", help="output prefix (.json/.csv added)")

    p = sub.add_parser("plot", help="static SVG figures")
    p.add_argument("input")
    p.add_argument("--kind", choices=plotting.KINDS, required=True)
    p.add_argument("--column", action="append", default=None,
                   help="column(s) for density plots (default: all score columns)")
    _add_common(p)
    p.add_argument("-o", "--output", default="plot.svg")
    return parser


def parse_args(argv: Sequence[str]):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise InputError("a subcommand is required")
    if getattr(args, "config", None):
        conf = read_config_file(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        # keys may use the flag spelling (lambda) or the attribute name (lam)
        known = {a.dest: a for a in sub._actions}
        for a in sub._actions:
            for opt in a.option_strings:
                if opt.startswith("--"):
                    known.setdefault(opt[2:].replace("-", "_"), a)
        unknown = sorted(k for k in conf if k not in known)
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(unknown)}")
        defaults = {}
        for k, v in conf.items():
            act = known[k]
            if act.const is True and act.nargs == 0:
                defaults[act.dest] = v.lower() in ("1", "true", "yes", "on")
            else:
                defaults[act.dest] = v
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if getattr(args, "threads", None) is None and hasattr(args, "threads"):
        args.threads = _threads_default()
    return args


def _validate(args) -> None:
    """Collect every invalid field before any work starts."""
    errs = []

    def check(cond, msg):
        if not cond:
            errs.append(msg)

    if hasattr(args, "threads"):
        check(args.threads >= 1, "--threads must be at least 1")
    if hasattr(args, "alpha"):
        check(0.5 <= args.alpha <= 1, "--alpha must lie in [0.5, 1]")
        check(0 <= args.lam <= 1, "--lambda must lie in [0, 1]")
        check(args.n_starts >= 1, "--n-starts must be positive")
    if hasattr(args, "eps_admm"):
        for name in ("eps_admm", "eps_root", "eps_thr"):
            check(getattr(args, name) > 0, f"--{name.replace('_', '-')} must be positive")
        check(args.max_iter >= 1, "--max-iter must be positive")
        check(args.rho is None or args.rho > 0, "--rho must be positive")
    if args.command == "fit":
        check(args.eta >= 0, "--eta must be non-negative")
        check(0 <= args.gamma <= 1, "--gamma must lie in [0, 1]")
        check(args.k is None or args.k >= 1, "--k must be positive")
        check(args.cpv is None or 0 < args.cpv <= 1, "--cpv must lie in (0, 1]")
    if args.command == "simulate":
        check(0 <= args.eps < 1, "--eps must lie in [0, 1)")
        check(args.reps is None or args.reps >= 1, "--reps must be positive")
        check(args.p >= 6, "--p must be at least 6")
        check(args.N >= 2 and args.n >= 2, "--N and --n must be at least 2")
        check(args.random is None or args.random >= 1, "--random must be positive")
        check(args.method != "external-adapter" or args.external, "--external is required for external-adapter")
    if getattr(args, "seed", None) is not None:
        check(args.seed >= 0, "--seed must be non-negative")
    if errs:
        raise InputError("; ".join(errs))


def _seed(args) -> int:
    if args.seed is None:
        print(f"mspca: using default seed {DEFAULT_SEED}", file=sys.stderr)
        return DEFAULT_SEED
    return args.seed


def _weights(spec: str, N: int) -> np.ndarray:
    if spec.startswith("band:"):
        try:
            width = int(spec[5:])
        except ValueError as exc:
            raise InputError(f"bad band width in {spec!r}") from exc
        return ssmrcd.band_weights(N, width)
    return ssmrcd.check_weights(mio.read_weights_csv(spec), N)


def _load_data(args):
    data, columns, labels = mio.read_data_csv(args.input if args.command == "ssmrcd" else args.data_path,
                                              args.source_col)
    if args.standardize == "median-mad":
        data = MultiSourceData(mio.standardize_median_mad(data.X), data.source_of)
    return data, columns, labels


def _run_ssmrcd(args, data, seed):
    W = _weights(args.weights, data.N)
    cfg = ssmrcd.SsmrcdConfig(alpha=args.alpha, lam=args.lam, W=W, n_starts=args.n_starts, seed=seed)
    trace = None
    if args.select_lambda:
        sel = ssmrcd.select_lambda(data, cfg, parse_grid(args.select_lambda))
        f = sel.fit
        trace = [{"lambda": float(l), "R": float(r), "selected": bool(l == sel.lam)}
                 for l, r in zip(sel.grid, sel.R)]
    else:
        f = ssmrcd.fit(data, cfg)
    return f, W, trace


def cmd_ssmrcd(args) -> int:
    seed = _seed(args)
    data, columns, labels = _load_data(args)
    f, W, trace = _run_ssmrcd(args, data, seed)
    out = mio.fit_to_dict(f)
    out.update({"seed": seed, "weights": W, "variables": columns, "sources": labels,
                "standardize": args.standardize, "input_sha256": mio.file_digest(args.input),
                "version": __version__})
    mio.write_json(args.output, out)
    if trace is not None:
        mio.write_records_csv(args.trace_out, trace, ["lambda", "R", "selected"])
    return EXIT_OK


def _admm_config(args) -> AdmmConfig:
    return AdmmConfig(eps_admm=args.eps_admm, eps_root=args.eps_root, eps_thr=args.eps_thr,
                      m_max=args.max_iter, rho_override=args.rho)


def _read_fit(path):
    d = mio.read_json(path)
    if d.get("kind") != "ssmrcd":
        raise InputError(f"{path} is not a covariance fit")
    return d, mio.covset_from_dict(d["covariances"])


def cmd_fit(args) -> int:
    seed = _seed(args)
    data = None
    if args.input.lower().endswith(".json"):
        meta, cov = _read_fit(args.input)
        names, labels = meta.get("variables"), meta.get("sources")
        if args.data:
            args.data_path = args.data
            data, names, labels = _load_data(args)
    else:
        args.data_path = args.input
        data, names, labels = _load_data(args)
        f, _, _ = _run_ssmrcd(args, data, seed)
        cov = f.covset
    cfg = _admm_config(args)
    if args.cpv is not None:
        fitres = fit_pca(cov, args.eta, args.gamma, cov.p, cfg, cpv_threshold=args.cpv)
    else:
        fitres = fit_pca(cov, args.eta, args.gamma, args.k or 1, cfg)
    table = cpv(fitres.loadings, cov)
    k_sel = select_n_components(table.cumulative, args.cpv) if args.cpv is not None else len(fitres.loadings)
    out = mio.loadings_to_dict(
        fitres.loadings,
        eta=args.eta, gamma=args.gamma, etas=fitres.etas,
        converged=[r.converged for r in fitres.results],
        iterations=[r.iterations for r in fitres.results],
        rho=[r.rho_used for r in fitres.results],
        explained_per_source=table.per_source,
        cpv=table.cumulative, cpv_threshold=args.cpv, n_components_selected=k_sel,
        variables=names, sources=labels, seed=seed,
        input_sha256=mio.file_digest(args.input), version=__version__,
    )
    mio.write_json(args.output, out)
    if data is not None:
        T = compute_scores(data, cov, fitres.loadings)
        recs = [{"source": int(s), **{f"score_{l + 1}": T[r, l] for l in range(T.shape[1])}}
                for r, s in enumerate(data.source_of)]
        mio.write_records_csv(args.scores_out, recs)
    if not fitres.converged:
        print("mspca: ADMM did not converge for some components; results written", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_tune(args) -> int:
    _, cov = _read_fit(args.input)
    gammas, etas = parse_grid(args.gamma_grid), parse_grid(args.eta_grid)
    cfg = _admm_config(args)
    g_star, paths, aucs = tune_gamma(cov, gammas, etas, cfg)
    e_star, _ = tune_eta(cov, g_star, etas, cfg, path=paths[g_star])
    rows = [{"gamma": pt.gamma, "eta": pt.eta, "sparsity_S": pt.sparsity_S,
             "scaled_var": pt.scaled_var, "entrywise_sparsity": pt.entrywise_sparsity, "tpo": pt.tpo}
            for g in gammas for pt in paths[g]]
    mio.write_records_csv(args.path_out, rows)
    mio.write_json(args.output, {"gamma": g_star, "eta": e_star, "gamma_grid": gammas, "eta_grid": etas,
                                 "auc": dict(zip([repr(g) for g in gammas], aucs)),
                                 "input_sha256": mio.file_digest(args.input), "version": __version__})
    return EXIT_OK


def cmd_simulate(args) -> int:
    seed = _seed(args)
    full = args.profile == "paper"
    reps = args.reps or (100 if full else 20)
    if args.scenario == "1":
        etas = parse_grid(args.etas) if args.etas else (parse_grid("0:1.25:0.05") if full else [0.5])
        gammas = parse_grid(args.gammas) if args.gammas else [0.0, 0.5, 1.0]
        cfg = AdmmConfig(eps_root=0.1)
        rep = simulation.sparsity_recovery_study(args.p, args.noise_sd, etas, gammas, reps, seed,
                                                 args.k or 2, cfg, args.threads)
    elif args.scenario == "2":
        kw = {}
        if args.etas or full:
            kw["eta_grid"] = tuple(parse_grid(args.etas or "0:5:0.1"))
        if args.gammas or full:
            kw["gamma_grid"] = tuple(parse_grid(args.gammas or "0:1:0.1"))
        if args.lambdas or full:
            kw["lambda_grid"] = tuple(parse_grid(args.lambdas or "0:1:0.05"))
        local = None if args.local is None else tuple(int(x) for x in args.local.split(","))
        cfg = simulation.ScenarioConfig(p=args.p, N=args.N, n_per_source=args.n, eps_out=args.eps,
                                        noise_sd=args.noise_sd, seed=seed, repetitions=reps,
                                        contaminated=local, n_components=args.k or 2, **kw)
        method = simulation.method_spec(args.method, args.external, args.p, args.N)
        rep = simulation.run_scenario(cfg, method, args.threads)
    else:
        S1h, S2h, _, _ = simulation.scenario1_covariances(args.p, args.noise_sd, seed)
        cov = CovarianceSet.from_covariances([S1h, S2h])
        etas = parse_grid(args.etas) if args.etas else (parse_grid("0:2:0.1") if full else [0, 0.5, 1, 1.5, 2])
        gammas = parse_grid(args.gammas) if args.gammas else [0.0, 0.5, 1.0]
        rows = simulation.starting_value_study(cov, gammas, etas, args.random or (100 if full else 25),
                                               seed, args.k or (4 if full else 2))
        mio.write_json(args.output + ".json", {"scenario": "starts", "seed": seed, "rows": rows,
                                               "version": __version__})
        flat = [{k: v for k, v in r.items() if k != "random"} for r in rows]
        mio.write_records_csv(args.output + ".csv", flat)
        return EXIT_OK
    rep.config["seed"] = seed
    rep.to_json(args.output + ".json")
    rep.to_csv(args.output + ".csv")
    mio.write_records_csv(args.output + "_summary.csv", rep.summary())
    return EXIT_OK


def cmd_plot(args) -> int:
    kind, path = args.kind, args.input
    prov = {"input_sha256": mio.file_digest(path), "version": __version__, "kind": kind}
    if kind in ("loadings-heatmap", "scree-box"):
        if not path.lower().endswith(".json"):
            raise InputError(f"--kind {kind} needs a loadings JSON file")
        d = mio.read_json(path)
        if "components" not in d:
            raise InputError(f"{path} does not hold loadings")
        if kind == "loadings-heatmap":
            L = mio.loadings_from_dict(d)
            fig = plotting.loadings_heatmap(L.components, d.get("variables"), d.get("sources"))
        else:
            if d.get("explained_per_source") is None:
                raise InputError(f"{path} lacks per-source explained variances")
            fig = plotting.scree_box(d["explained_per_source"])
    else:
        if not path.lower().endswith(".csv"):
            raise InputError(f"--kind {kind} needs a CSV file")
        rows = mio.read_records_csv(path)
        if not rows:
            raise InputError(f"{path} has no rows")
        if kind == "path":
            if not {"eta", "gamma", "tpo"} <= set(rows[0]):
                raise InputError(f"{path} is not a tuning path table")
            fig = plotting.path_plot(rows)
        else:
            cols = args.column or [c for c in rows[0] if c.startswith("score_")]
            missing = [c for c in cols if c not in rows[0]]
            if not cols or missing:
                raise InputError(f"{path} lacks columns {missing or 'score_*'}")
            fig = plotting.density_plot({c: [float(r[c]) if r[c] else np.nan for r in rows] for c in cols})
    plotting.save_svg(fig, args.output, prov)
    return EXIT_OK


COMMANDS = {"ssmrcd": cmd_ssmrcd, "fit": cmd_fit, "tune": cmd_tune,
            "simulate": cmd_simulate, "plot": cmd_plot}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        _validate(args)
        return COMMANDS[args.command](args)
    except (InvalidArgument, ValueError, OSError) as exc:
        print(f"mspca: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (MspcaError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"mspca: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
