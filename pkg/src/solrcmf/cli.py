"""Command line driver.

Subcommands::

    solrcmf simulate --scenario sim1 --seed 1 --out sim/
    solrcmf fit      --data sim/manifest.json --lambda1 0.1 --lambda2 0.03 --out fit/
    solrcmf select   --data sim/manifest.json --grid 30,0.02,0.2 --folds 10 --seed 1 --out sel/
    solrcmf evaluate --fit sel/ --truth sim/truth.json --out eval/

Exit codes: 0 on success, 2 for configuration or input errors, 3 for
numerical failures.  Every output directory receives ``provenance.json``
(command, configuration, seeds, library versions) and ``timing.json``; all
other files are reproducible byte for byte.
"""

from __future__ import annotations

import argparse
import logging
import os
import platform
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from . import io as sio
from . import metrics
from .admm import FitResult, Hyperparams, SolverState, fit
from .datamodel import DataCollection, MatrixKey, make_folds, preprocess
from .errors import BadRange, ConfigError, InvalidScenario, SchemaMismatch, SolrCMFError
from .initialization import InitConfig, best_of_restarts, state_from_factors
from .modelselect import StructurePattern, sample_hyperparams, select_model
from .simulate import BUILTIN, build_scenario, builtin_scenario, scenario_from_dict

logger = logging.getLogger("solrcmf")

FIT_FORMAT = "solrcmf-fit"
SELECTION_FORMAT = "solrcmf-selection"


def _versions() -> dict:
    import scipy

    return {
        "solrcmf": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def _write_provenance(out: Path, command: str, config: dict, started: float) -> None:
    sio.write_json(out / "provenance.json", {"command": command, "config": config, "versions": _versions()})
    sio.write_json(out / "timing.json", {"wall_seconds": time.perf_counter() - started})


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise sio.IoError(f"cannot create output directory {out}: {exc}") from exc
    return out


# ---------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    if args.scenario in BUILTIN:
        sc = builtin_scenario(
            args.scenario, seed=args.seed, sparsity=args.sparsity, snr=args.snr, dim_scale=args.dim_scale
        )
    elif Path(args.scenario).is_file():
        sc = scenario_from_dict(sio.read_json(args.scenario), seed=args.seed)
        sc.seed = args.seed
    else:
        raise InvalidScenario(
            f"{args.scenario!r} is neither a built-in scenario ({', '.join(BUILTIN)}) nor a file"
        )
    gt = build_scenario(sc)
    out = _out_dir(args.out)
    sio.save_manifest(gt.data, out)
    meta = {"scenario": sc.name, "seed": sc.seed, "sparsity": sc.sparsity, "snr": sc.snr}
    sio.save_truth(out, gt.V_truth, sc.D_truth, gt.sigma2, sc.matrix_names, meta)
    _write_provenance(out, "simulate", {**meta, "views": sc.views}, started)
    return 0


# ---------------------------------------------------------------- fit reports


def _hyperparams(args) -> Hyperparams:
    h = Hyperparams(
        lambda1=getattr(args, "lambda1", 0.0),
        lambda2=getattr(args, "lambda2", 0.0),
        mu=args.mu,
        rho=args.rho,
        alpha=args.alpha,
        t_max=args.t_max,
    )
    if args.t_max < 1:
        raise BadRange("t-max must be at least 1")
    if h.lambda1 < 0 or h.lambda2 < 0:
        raise BadRange("penalties must be non-negative")
    if h.alpha < 0:
        raise BadRange("alpha must be non-negative")
    if h.mu <= 0:
        raise BadRange("mu must be positive")
    return h


def _load_data(manifest, center=True, scale=True):
    path = Path(manifest).resolve()
    raw = sio.load_manifest(path)
    return path, raw, preprocess(raw, center=center, scale=scale)


def _hyper_dict(h: Hyperparams) -> dict:
    return {
        "lambda1": h.lambda1,
        "lambda2": h.lambda2,
        "mu": h.mu,
        "rho": h.rho,
        "alpha": h.alpha,
        "eps_abs": h.eps_abs,
        "eps_rel": h.eps_rel,
        "eps_primal": h.eps_primal,
        "t_max": h.t_max,
    }


def write_fit_report(out: Path, result: FitResult, data: DataCollection, manifest: Path, extra: dict) -> None:
    """Factor CSVs plus ``fit_report.json`` describing the solution."""
    state = result.state
    factors, sparse = {}, {}
    for v in data.view_ids:
        factors[str(v)] = f"V_{v}.csv"
        sparse[str(v)] = f"U_{v}.csv"
        sio.write_matrix_csv(out / factors[str(v)], state.V[v])
        sio.write_matrix_csv(out / sparse[str(v)], state.U[v])
    report = {
        "format": FIT_FORMAT,
        "manifest": str(manifest),
        "views": {str(v): data.views[v] for v in data.view_ids},
        "matrices": [
            {"key": str(key), "name": data.name(key), "d": state.D[key]} for key in data.keys
        ],
        "k": state.k,
        "hyperparams": _hyper_dict(result.hyperparams),
        "converged": result.converged,
        "iterations": result.iterations,
        "objective": result.objective,
        "primal_residuals": {
            block: {str(k): v for k, v in vals.items()} for block, vals in result.primal_residuals.items()
        },
        "factors": factors,
        "sparse_factors": sparse,
        "lagrangian_trace": result.lagrangian_trace,
        **extra,
    }
    sio.write_json(out / "fit_report.json", report)


def read_fit_report(fit_dir) -> tuple:
    """Return ``(report, state)`` from a fit or selection output directory."""
    fit_dir = Path(fit_dir)
    report = sio.read_json(fit_dir / "fit_report.json")
    if report.get("format") != FIT_FORMAT:
        raise SchemaMismatch(f"{fit_dir} does not contain a fit report")
    try:
        V = {int(v): sio.read_matrix_csv(fit_dir / f) for v, f in report["factors"].items()}
        U = {int(v): sio.read_matrix_csv(fit_dir / f) for v, f in report["sparse_factors"].items()}
        D = {MatrixKey.parse(m["key"]): np.asarray(m["d"], dtype=float) for m in report["matrices"]}
    except (KeyError, ValueError) as exc:
        raise SchemaMismatch(f"malformed fit report in {fit_dir}: {exc}") from exc
    keys = list(D)
    views = {int(v): int(p) for v, p in report["views"].items()}
    state = SolverState(
        V=V,
        D=D,
        U=U,
        Vslack={v: np.zeros_like(x) for v, x in V.items()},
        Z={key: (V[key.row] * D[key]) @ V[key.col].T for key in keys},
        Lambda1={v: np.zeros_like(x) for v, x in V.items()},
        Lambda2={key: np.zeros((views[key.row], views[key.col])) for key in keys},
        k=int(report["k"]),
    )
    return report, state


def _init_config(args) -> InitConfig:
    if args.k < 1:
        raise BadRange("k must be at least 1")
    if args.n_init < 1:
        raise BadRange("n-init must be at least 1")
    return InitConfig(k=args.k, n_init=args.n_init, seed=args.seed, strategy=args.init)


def cmd_fit(args) -> int:
    started = time.perf_counter()
    manifest, _, data = _load_data(args.data, not args.no_center, not args.no_scale)
    h = _hyperparams(args).resolve(data, args.k)
    from .admm import check_rho

    check_rho(h)
    cfg = _init_config(args)
    restarts = best_of_restarts(data, cfg, h, n_jobs=args.threads)
    result = fit(data, h, restarts.warm.state)
    out = _out_dir(args.out)
    extra = {"restart": {"index": restarts.index, "objectives": restarts.objectives}}
    write_fit_report(out, result, data, manifest, extra)
    config = {
        "data": str(manifest),
        "hyperparams": _hyper_dict(h),
        "k": args.k,
        "n_init": args.n_init,
        "init": cfg.strategy.value,
        "seed": args.seed,
        "center": not args.no_center,
        "scale": not args.no_scale,
    }
    _write_provenance(out, "fit", config, started)
    if not result.converged:
        logger.warning("fit stopped at t_max=%d without meeting the tolerance", h.t_max)
    return 0


# ---------------------------------------------------------------- select


def _parse_grid(text: str):
    try:
        n, lo, hi = text.split(",")
        return int(n), float(lo), float(hi)
    except ValueError as exc:
        raise BadRange(f"grid must look like N,LO,HI, got {text!r}") from exc


def _pattern_dict(pattern: StructurePattern) -> dict:
    return {
        "source": list(pattern.source) if pattern.source is not None else None,
        "d_support": {str(k): v.astype(int) for k, v in pattern.d_support.items()},
        "u_support": {str(v): s.astype(int) for v, s in sorted(pattern.u_support.items())},
    }


def cmd_select(args) -> int:
    started = time.perf_counter()
    n, lo, hi = _parse_grid(args.grid)
    if args.folds < 2:
        raise BadRange("at least two folds are required")
    manifest, _, data = _load_data(args.data, not args.no_center, not args.no_scale)
    h = _hyperparams(args).resolve(data, args.k)
    from .admm import check_rho

    check_rho(h)
    cfg = _init_config(args)
    grid_seed, fold_seed = np.random.SeedSequence(args.seed).spawn(2)
    grid = sample_hyperparams(n, lo, hi, grid_seed)
    folds = make_folds(data, args.folds, fold_seed)
    restarts = best_of_restarts(data, cfg, h, n_jobs=args.threads)
    sel = select_model(
        data, grid, folds, restarts.warm.state, h, n_jobs=args.threads, refit=args.refit, cv_start=args.cv_start
    )
    out = _out_dir(args.out)
    extra = {
        "restart": {"index": restarts.index, "objectives": restarts.objectives},
        "selected_lambdas": list(sel.pattern.source),
    }
    write_fit_report(out, sel.fit, data, manifest, extra)
    sio.write_json(out / "pattern.json", _pattern_dict(sel.pattern))
    records = [
        {
            "index": r.index,
            "source": list(r.pattern.source),
            "mean_mse": r.mean_mse,
            "se": r.se,
            "fold_mses": r.fold_mses,
            "sparsity_score": r.sparsity_score,
            "ranks": {str(k): int(v.sum()) for k, v in r.pattern.d_support.items()},
        }
        for r in sel.records
    ]
    sio.write_json(
        out / "selection_report.json",
        {
            "format": SELECTION_FORMAT,
            "grid": [list(g) for g in sel.grid],
            "grid_pattern_index": sel.grid_pattern_index,
            "penalized_objectives": sel.penalized_objectives,
            "records": records,
            "chosen": sel.chosen.index,
            "folds": args.folds,
            "seed": args.seed,
            "monotonicity_violations": sel.monotonicity_violations,
        },
    )
    config = {
        "data": str(manifest),
        "grid": [n, lo, hi],
        "folds": args.folds,
        "hyperparams": _hyper_dict(h),
        "k": args.k,
        "n_init": args.n_init,
        "init": cfg.strategy.value,
        "seed": args.seed,
        "refit": args.refit,
        "cv_start": args.cv_start,
        "center": not args.no_center,
        "scale": not args.no_scale,
    }
    _write_provenance(out, "select", config, started)
    return 0


# ---------------------------------------------------------------- evaluate


def _check_schema(report: dict, state: SolverState, data: DataCollection, truth=None):
    views = {int(v): int(p) for v, p in report["views"].items()}
    if views != data.views:
        raise SchemaMismatch("fit report views differ from the data manifest")
    if set(state.D) != set(data.keys):
        raise SchemaMismatch("fit report matrices differ from the data manifest")
    if truth is None:
        return
    if {v: x.shape[0] for v, x in truth.V.items()} != data.views:
        raise SchemaMismatch("truth sidecar views differ from the fitted data")
    if set(truth.D) != set(data.keys):
        raise SchemaMismatch("truth sidecar matrices differ from the fitted data")
    if truth.k > state.k:
        raise SchemaMismatch(f"truth has {truth.k} factors but the fit only {state.k}")


def cmd_evaluate(args) -> int:
    started = time.perf_counter()
    report, state = read_fit_report(args.fit)
    provenance_path = Path(args.fit) / "provenance.json"
    center = scale = True
    if provenance_path.exists():
        cfg = sio.read_json(provenance_path).get("config", {})
        center, scale = cfg.get("center", True), cfg.get("scale", True)
    _, raw, data = _load_data(report["manifest"], center, scale)
    truth = sio.load_truth(args.truth) if args.truth else None
    _check_schema(report, state, data, truth)
    state = metrics.canonicalize_signs(state)

    out = _out_dir(args.out)
    var = metrics.variation_report(state, data)
    sio.write_json(
        out / "variation.json",
        {
            "proportion_of_variation": {data.name(k): v for k, v in var.proportions.items()},
            "directed_r2": [
                {"dependent": data.name(d), "predictor": data.name(p), "value": v}
                for (d, p), v in var.directed.items()
            ],
            "sigma2_hat": {data.name(k): v for k, v in var.sigma2_hat.items()},
            "snr_hat": {data.name(k): v for k, v in var.snr_hat.items()},
            "ranks": {data.name(k): metrics.estimated_rank(state, k) for k in data.keys},
        },
    )
    graph = metrics.structure_graph(state, data)
    _write_rows(out / "edges.csv", ["dependent", "predictor", "weight"], metrics.edge_list(graph, data))

    if truth is not None:
        _evaluate_truth(out, state, data, raw, truth)
    _write_provenance(
        out, "evaluate", {"fit": str(Path(args.fit).resolve()), "truth": args.truth and str(Path(args.truth).resolve())}, started
    )
    return 0


def _write_rows(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format(x, ".17g") if isinstance(x, float) else str(x) for x in row))
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise sio.IoError(f"cannot write {path}: {exc}") from exc


def _evaluate_truth(out: Path, state: SolverState, data: DataCollection, raw: DataCollection, truth) -> None:
    keys = data.keys
    name = data.name
    rank_rows = [
        (name(k), metrics.estimated_rank(state, k), int(np.count_nonzero(truth.D[k]))) for k in keys
    ]
    _write_rows(out / "ranks.csv", ["matrix", "estimated", "truth"], rank_rows)
    shared_rows = []
    for i, a in enumerate(keys):
        for b in keys[i + 1 :]:
            true_shared = int(np.count_nonzero((truth.D[a] != 0) & (truth.D[b] != 0)))
            shared_rows.append((name(a), name(b), metrics.shared_rank(state, a, b), true_shared))
    _write_rows(out / "shared_ranks.csv", ["matrix_a", "matrix_b", "estimated", "truth"], shared_rows)

    dev_rows = []
    for dep in keys:
        for pred in keys:
            if not metrics.shares_view(dep, pred):
                continue
            expected = metrics.directed_r2_values(truth.D[dep], truth.D[pred], raw[dep].observed_norm2())
            estimate = metrics.directed_r2(state, data, dep, pred)
            dev_rows.append((name(dep), name(pred), 100 * expected, 100 * estimate, 100 * (estimate - expected)))
    _write_rows(
        out / "directed_r2_truth.csv", ["dependent", "predictor", "expected_pct", "estimate_pct", "deviation_pct"], dev_rows
    )

    active = np.any(np.vstack([d != 0 for d in state.D.values()]), axis=0)
    cols = np.flatnonzero(active)
    matching, confusion = {}, []
    for v in data.view_ids:
        m = metrics.match_factors(state.V[v][:, cols], truth.V[v])
        pairs = [(int(cols[i]), j, dot) for i, j, dot in m.pairs]
        matching[str(v)] = [{"estimate": i, "truth": j, "dot": dot} for i, j, dot in pairs]
        remapped = metrics.FactorMatching(pairs, m.threshold)
        for c in metrics.sparsity_confusion(state.U[v] != 0, truth.u_support[v], remapped):
            confusion.append((v, c.estimate, c.truth, c.tpr, c.fpr))
    sio.write_json(out / "matching.json", {"threshold": metrics.MATCH_THRESHOLD, "views": matching})
    _write_rows(out / "confusion.csv", ["view", "estimate", "truth", "tpr", "fpr"], confusion)


# ---------------------------------------------------------------- parser


def _add_solver_args(p):
    p.add_argument("--rho", type=float, default=None, help="ADMM step size (default: 1.01 x convergence bound)")
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=1e-3, help="proximal weight on the manifold blocks")
    p.add_argument("--t-max", dest="t_max", type=int, default=10_000, help="sweep limit per fit")
    p.add_argument("--k", type=int, default=10, help="maximal rank")
    p.add_argument("--n-init", dest="n_init", type=int, default=5, help="random restarts")
    p.add_argument("--init", choices=["random", "multiview"], default="random")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-center", action="store_true", help="skip bicentering")
    p.add_argument("--no-scale", action="store_true", help="skip normalization")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="solrcmf", description=__doc__.split("\n")[0])
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="parallel jobs")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic data collection")
    p.add_argument("--scenario", required=True, help=f"built-in name ({', '.join(BUILTIN)}) or JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--sparsity", type=float, default=None, help="override factor sparsity of a built-in scenario")
    p.add_argument("--snr", type=float, default=None, help="override signal-to-noise ratio (inf for no noise)")
    p.add_argument("--dim-scale", dest="dim_scale", type=float, default=1.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit with fixed penalties")
    p.add_argument("--data", required=True, help="collection manifest")
    p.add_argument("--lambda1", type=float, default=0.0)
    p.add_argument("--lambda2", type=float, default=0.0)
    _add_solver_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="choose penalties by cross-validation and refit")
    p.add_argument("--data", required=True)
    p.add_argument("--grid", default="100,0.05,1", help="N,LO,HI for log-uniform penalty pairs")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--refit", choices=["pattern", "penalized"], default="pattern")
    p.add_argument("--cv-start", dest="cv_start", choices=["restart", "penalized"], default="restart")
    _add_solver_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("evaluate", help="summarize a fit, optionally against ground truth")
    p.add_argument("--fit", required=True, help="output directory of fit or select")
    p.add_argument("--truth", default=None, help="truth.json written by simulate")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except SolrCMFError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
