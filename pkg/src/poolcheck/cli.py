"""Command-line interface.

Every subcommand loads its inputs, makes one library call and prints the
result.  Output is indented JSON, or a single line of canonical JSON with
``--json``.  Exit codes: 0 success, 2 usage error, 3 data error, 4
numerical error.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, inference, io, pooltest, sim, smslasso
from .exceptions import DataError, NumericalError
from .regress import summarize

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _names(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _emit(obj, args):
    obj = io.to_jsonable(obj)
    if args.json:
        print(io.canonical_json(obj))
    else:
        print(json.dumps(obj, indent=2, sort_keys=True))


def _load_sites(args):
    datasets = []
    for path in args.csv:
        with open(path, newline="", encoding="utf-8") as fh:
            header = [h.strip() for h in fh.readline().strip().split(",")]
        roles = io.default_roles(header, response=args.response, confounds=args.confounds,
                                 predictors=args.predictors)
        datasets.append(io.load_csv(path, roles))
    return datasets


def _add_csv_args(p, nargs="+"):
    p.add_argument("csv", nargs=nargs, help="one CSV per site")
    p.add_argument("--response", default="y", help="response column (default y)")
    p.add_argument("--confounds", type=_names, default=[], help="comma-separated confound columns")
    p.add_argument("--predictors", type=_names, default=None,
                   help="comma-separated predictor columns (default: all other columns)")


def _result_dict(res):
    d = res.to_dict()
    d["decision"] = str(res.decision.value)
    return d


# -- subcommands --------------------------------------------------------------

def cmd_fit_site(args):
    (data,) = _load_sites(args)
    if args.site_id:
        data.site_id = args.site_id
    summary = summarize(data)
    out = Path(args.out) if args.out else Path(f"{data.site_id}.json")
    io.write_summary(summary, out)
    _emit({"summary": str(out), **io.summary_payload(summary)}, args)


def _summaries(args):
    summaries = [io.read_summary(p) for p in args.summary]
    if args.reference is not None:
        ref = int(args.reference) if args.reference.isdigit() else args.reference
        summaries = pooltest.rereference(summaries, ref)
    return summaries


def cmd_pool_test(args):
    if args.subset:
        args.csv = args.summary
        datasets = _load_sites(args)
        if args.reference is not None:
            ids = [d.site_id for d in datasets]
            idx = int(args.reference) if args.reference.isdigit() else ids.index(args.reference)
            datasets = [datasets[idx]] + datasets[:idx] + datasets[idx + 1:]
        res = pooltest.subset_pooling_test(datasets, args.significance, args.tau)
    else:
        res = pooltest.pooling_test(_summaries(args), args.significance, args.tau)
    _emit(_result_dict(res), args)


def cmd_mse_bounds(args):
    summaries = _summaries(args)
    tau = pooltest.estimate_tau(summaries) if args.tau is None else args.tau
    b = pooltest.bias_variance_diagnostics(summaries, tau)
    _emit({"bias_bound_factor": b.bias_bound_factor, "var_reduction": b.var_reduction,
           "tau": pooltest._normalize_tau(tau, len(summaries))}, args)


def cmd_lasso_fit(args):
    datasets = _load_sites(args)
    f = smslasso.fit(datasets, args.lam, args.alpha, fit_intercept=args.intercept)
    st = smslasso.support_stats(f.B)
    _emit({"alpha": f.alpha, "lambda": f.lam, "objective": f.objective, "n_iter": f.n_iter,
           "converged": f.converged, "site_ids": [d.site_id for d in datasets],
           "feature_names": datasets[0].feature_names, "B": f.B, "intercepts": f.intercepts,
           "always_active": st.always_active, "s_h": st.s_h, "s_p": st.s_p, "r": st.r}, args)


def cmd_lasso_path(args):
    datasets = _load_sites(args)
    path = smslasso.solution_path(datasets, args.alpha, lambdas=args.lam, n_lambdas=args.n_lambdas,
                                  cv_folds=args.cv_folds, seed=args.seed,
                                  fit_intercept=args.intercept)
    out = {"alpha": path.alpha, "lambdas": path.lambdas, "objectives": path.objectives,
           "always_active": [len(smslasso.support_stats(f.B).always_active) for f in path.fits]}
    if path.cv_errors is not None:
        out.update(cv_errors=path.cv_errors, cv_se=path.cv_se, best_lambda=path.best_lambda,
                   min_cv_error=path.min_cv_error)
    _emit(out, args)


def _select(args, datasets):
    grid = args.alpha_grid if args.alpha_grid else inference.DEFAULT_ALPHA_GRID
    return inference.select_alpha(datasets, alpha_grid=grid, n_splits=args.splits,
                                  alpha_fwer=args.fwer, seed=args.seed, cv=args.cv_folds)


def _report_dict(rep):
    return {"chosen_alpha": rep.chosen_alpha, "similarity_verdict": rep.similarity_verdict.value,
            "similarity": rep.similarity, "lambda_multisite": rep.lambda_multisite,
            "site_lambdas": rep.site_lambdas, "site_active_sets": rep.site_active_sets,
            "always_active_count_by_alpha": {repr(a): c for a, c in rep.table()}}


def cmd_select_alpha(args):
    _emit(_report_dict(_select(args, _load_sites(args))), args)


def cmd_selected_pool_test(args):
    datasets = _load_sites(args)
    rep = _select(args, datasets)
    res = inference.selected_pooling_test(datasets, args.significance, report=rep)
    _emit({"selection": _report_dict(rep), "test": _result_dict(res)}, args)


def cmd_msparse_eigen(args):
    datasets = _load_sites(args)
    r = diagnostics.m_sparse_eigenvalues(diagnostics.build_C(datasets), args.m, budget=args.budget,
                                         seed=args.seed)
    _emit(vars(r), args)


def _simulate_power(args, out_dir):
    spec = sim.ScenarioSpec(scenario=args.scenario, replicates=args.replicates or 100,
                            base_seed=args.seed, significance=args.significance)
    rep = sim.run_power_study(spec)
    (out_dir / "power.csv").write_text(rep.to_csv(), encoding="utf-8")
    ns = rep.column("n")
    (out_dir / "mse.svg").write_text(io.line_chart(
        {"single site": (ns, rep.column("mse_single")), "pooled": (ns, rep.column("mse_pooled")),
         "test-guided": (ns, rep.column("mse_guided"))},
        title=f"{args.scenario}: MSE of beta_1", xlabel="n", ylabel="MSE", logx=True, logy=True),
        encoding="utf-8")
    (out_dir / "acceptance.svg").write_text(io.line_chart(
        {"acceptance rate": (ns, rep.column("acceptance_rate"))},
        title=f"{args.scenario}: acceptance rate", xlabel="n", ylabel="rate", logx=True),
        encoding="utf-8")
    return {"scenario": args.scenario, "files": ["power.csv", "mse.svg", "acceptance.svg"],
            "rows": rep.rows}


def _simulate_lasso(args, out_dir):
    out = sim.run_lasso_paths(args.scenario, seed=args.seed, chosen_alpha=args.alpha,
                              cv_folds=args.cv_folds, n_lambdas=args.n_lambdas)
    path_rows = []
    series = {}
    for a, path in sorted(out["paths"].items()):
        for lam, err, se in zip(path.lambdas, path.cv_errors, path.cv_se):
            path_rows.append({"alpha": a, "lambda": float(lam), "cv_error": float(err), "cv_se": float(se)})
        series[f"alpha={a:g}"] = (path.lambdas, path.cv_errors)
    io.write_table(out_dir / "lasso_paths.csv", ["alpha", "lambda", "cv_error", "cv_se"], path_rows)
    rec = [out["recovery"][a] for a in sorted(out["recovery"])]
    io.write_table(out_dir / "recovery.csv", list(rec[0]), rec)
    (out_dir / "cv_error.svg").write_text(io.line_chart(
        series, title=f"{args.scenario}: CV error (chosen alpha={out['chosen_alpha']:g})",
        xlabel="lambda", ylabel="CV error", logx=True), encoding="utf-8")
    files = ["lasso_paths.csv", "recovery.csv", "cv_error.svg"]
    result = {"scenario": args.scenario, "chosen_alpha": out["chosen_alpha"], "recovery": rec}
    if out["selection"] is not None:
        table = out["selection"].table()
        io.write_table(out_dir / "alpha_selection.csv", ["alpha", "always_active"],
                       [{"alpha": a, "always_active": c} for a, c in table])
        (out_dir / "always_active.svg").write_text(io.bar_chart(
            [f"{a:g}" for a, _ in table], {"always-active features": [c for _, c in table]},
            title=f"{args.scenario}: always-active count ({out['selection'].similarity_verdict.value})",
            xlabel="alpha", ylabel="count"), encoding="utf-8")
        files += ["alpha_selection.csv", "always_active.svg"]
        result["selection"] = _report_dict(out["selection"])
    result["files"] = files
    return result


def cmd_simulate(args):
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario = sim.Scenario(args.scenario)
    if scenario in (sim.Scenario.SHARED_BETA, sim.Scenario.CONFOUNDED_BETA):
        result = _simulate_power(args, out_dir)
    elif scenario in (sim.Scenario.FEW_SHARED, sim.Scenario.MOST_SHARED):
        result = _simulate_lasso(args, out_dir)
    else:
        raise DataError(f"scenario {args.scenario!r} cannot be simulated from the command line")
    result["out_dir"] = str(out_dir)
    _emit(result, args)


# -- parser -------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="poolcheck", description="Multi-site pooling diagnostics.")
    parser.add_argument("--json", action="store_true", help="single-line JSON output")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--json", action="store_true", default=argparse.SUPPRESS,
                       help="single-line JSON output")
        p.set_defaults(func=fn)
        return p

    p = add("fit-site", cmd_fit_site, "fit OLS on one site's CSV and write its summary file")
    _add_csv_args(p, nargs=1)
    p.add_argument("--site-id", default=None, help="site identifier (default: file stem)")
    p.add_argument("--out", "-o", default=None, help="summary path (default: <site-id>.json)")

    p = add("pool-test", cmd_pool_test, "test whether pooling improves the reference site")
    p.add_argument("summary", nargs="+", help="summary files (CSV files with --subset)")
    p.add_argument("--significance", type=float, default=0.05)
    p.add_argument("--reference", default=None, help="reference site id or index (default: first)")
    p.add_argument("--tau", type=_floats, default=None, help="site weights, length k or k-1")
    p.add_argument("--subset", action="store_true",
                   help="inputs are CSVs with confounds; test the shared coefficients only")
    p.add_argument("--response", default="y")
    p.add_argument("--confounds", type=_names, default=[])
    p.add_argument("--predictors", type=_names, default=None)

    p = add("mse-bounds", cmd_mse_bounds, "bias-increase and variance-reduction diagnostics")
    p.add_argument("summary", nargs="+")
    p.add_argument("--reference", default=None)
    p.add_argument("--tau", type=_floats, default=None)

    p = add("lasso-fit", cmd_lasso_fit, "fit the sparse multi-site Lasso at one (alpha, lambda)")
    _add_csv_args(p)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--intercept", action="store_true", help="fit per-site intercepts")

    p = add("lasso-path", cmd_lasso_path, "solution path over lambda, optionally cross-validated")
    _add_csv_args(p)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--lambda", dest="lam", type=_floats, default=None, help="explicit lambda grid")
    p.add_argument("--n-lambdas", type=int, default=100)
    p.add_argument("--cv-folds", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--intercept", action="store_true")

    for name, fn, help_ in (("select-alpha", cmd_select_alpha, "choose the mixing weight alpha"),
                            ("selected-pool-test", cmd_selected_pool_test,
                             "select a shared support, then run the pooling test on it")):
        p = add(name, fn, help_)
        _add_csv_args(p)
        p.add_argument("--alpha-grid", type=_floats, default=None)
        p.add_argument("--splits", type=int, default=50, help="multi sample-splitting repetitions")
        p.add_argument("--fwer", type=float, default=0.05)
        p.add_argument("--cv-folds", type=int, default=10)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--significance", type=float, default=0.05)

    p = add("simulate", cmd_simulate, "run a simulation study and write CSV tables and SVG plots")
    p.add_argument("--scenario", required=True,
                   choices=["shared-beta", "confounded-beta", "few-shared", "most-shared"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replicates", type=int, default=None, help="replicates per n (power scenarios)")
    p.add_argument("--significance", type=float, default=0.05)
    p.add_argument("--alpha", type=float, default=None,
                   help="Lasso scenarios: skip alpha selection and use this alpha")
    p.add_argument("--cv-folds", type=int, default=10)
    p.add_argument("--n-lambdas", type=int, default=100)
    p.add_argument("--out-dir", default="simulation")

    p = add("msparse-eigen", cmd_msparse_eigen, "m-sparse eigenvalues of the block Gram matrix")
    _add_csv_args(p)
    p.add_argument("--m", type=float, required=True)
    p.add_argument("--budget", type=int, default=diagnostics.ENUMERATION_BUDGET)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        args.func(args)
    except DataError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, UnicodeDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
