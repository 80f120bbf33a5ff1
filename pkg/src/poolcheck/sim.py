"""Seeded generators and Monte Carlo studies.

Every replicate draws from its own Philox stream keyed by
``(base_seed, scenario tag, n, replicate)``, so results do not depend on
the number of workers or the order in which replicates finish.
"""

import csv
import enum
import io
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import smslasso
from .exceptions import DataError
from .pooltest import build_G, estimate_tau, pooled_ols, pooling_test
from .regress import SiteDataset, SiteSummary, ols_fit, site_summary

SHARED_COV = 0.5 * (np.eye(3) + np.ones((3, 3)))
CONFOUND_COV = np.block([
    [0.5 * np.eye(3) + 0.5 * np.ones((3, 3)), 0.2 * np.ones((3, 5))],
    [0.2 * np.ones((5, 3)), 0.8 * np.eye(5) + 0.2 * np.ones((5, 5))],
])
GAMMA_1 = np.array([1.0, 1.0, 2.0, 2.0, 2.0])
GAMMA_2 = np.array([2.0, 2.0, 2.0, 1.0, 1.0])
NOISE_SD = (np.sqrt(3.0), np.sqrt(0.5))
BETA_SHIFT = 0.1
N_GRID = tuple(2 ** b for b in range(4, 13))


class Scenario(str, enum.Enum):
    SHARED_BETA = "shared-beta"
    CONFOUNDED_BETA = "confounded-beta"
    FEW_SHARED = "few-shared"
    MOST_SHARED = "most-shared"
    CUSTOM = "custom"

    def __str__(self):
        return self.value


_TAGS = {Scenario.SHARED_BETA: 1, Scenario.CONFOUNDED_BETA: 2,
         Scenario.FEW_SHARED: 3, Scenario.MOST_SHARED: 4, Scenario.CUSTOM: 5}


def replicate_rng(base_seed, *keys):
    """Counter-based generator for one replicate."""
    ss = np.random.SeedSequence([int(base_seed), *(int(k) for k in keys)])
    return np.random.Generator(np.random.Philox(ss))


def _as_rng(seed):
    return seed if isinstance(seed, np.random.Generator) else replicate_rng(seed)


def equicorrelated_normal(rng, n, p, diag, off):
    """Rows ~ N(0, (diag - off) I + off E) without forming a p x p factor."""
    g = rng.standard_normal((n, p))
    c = rng.standard_normal((n, 1))
    return np.sqrt(diag - off) * g + np.sqrt(off) * c


def generate_shared_beta(n, seed):
    """Two sites sharing beta up to a shift of 0.1 per coordinate.

    Returns ``(datasets, beta_1, beta_2)``.
    """
    if n < 4:
        raise DataError("n must be at least 4")
    rng = _as_rng(seed)
    b1 = rng.uniform(0.0, 4.0, 3)
    b2 = b1 + BETA_SHIFT
    names = ["x1", "x2", "x3"]
    out = []
    for i, (b, sd) in enumerate(zip((b1, b2), NOISE_SD)):
        X = equicorrelated_normal(rng, n, 3, 1.0, 0.5)
        y = X @ b + sd * rng.standard_normal(n)
        out.append(SiteDataset(X=X, y=y, site_id=f"site{i + 1}", feature_names=names))
    return out, b1, b2


def generate_confounded(n, seed):
    """Two sites with confounds Z whose coefficients differ between sites.

    Returns ``(datasets, truths)`` with truths holding beta_1, beta_2,
    gamma_1, gamma_2.
    """
    if n < 9:
        raise DataError("n must exceed p + q = 8")
    rng = _as_rng(seed)
    b1 = rng.uniform(0.0, 4.0, 3)
    b2 = b1 + BETA_SHIFT
    L = np.linalg.cholesky(CONFOUND_COV)
    out = []
    for i, (b, g, sd) in enumerate(zip((b1, b2), (GAMMA_1, GAMMA_2), NOISE_SD)):
        W = rng.standard_normal((n, 8)) @ L.T
        X, Z = W[:, :3], W[:, 3:]
        y = X @ b + Z @ g + sd * rng.standard_normal(n)
        out.append(SiteDataset(X=X, y=y, Z=Z, site_id=f"site{i + 1}",
                               feature_names=["x1", "x2", "x3"],
                               confound_names=[f"z{j + 1}" for j in range(5)]))
    truths = {"beta_1": b1, "beta_2": b2, "gamma_1": GAMMA_1.copy(), "gamma_2": GAMMA_2.copy()}
    return out, truths


def generate_sparse(scenario, seed, n=150, p=400, k=4, noise_sd=1.0):
    """High-dimensional multi-site data with partly shared supports.

    few-shared: 6 features active at every site (U(0,4) at the first two
    sites, U(0,0.5) at the rest) plus 14 site-specific features per site.
    most-shared: 16 shared and 4 site-specific features, all U(0,4).
    Supports are disjoint draws without replacement; X rows are
    N(0, 0.8 I + 0.2 E).

    Returns ``(datasets, B_true)``.
    """
    scenario = Scenario(scenario)
    rng = _as_rng(seed)
    if scenario is Scenario.FEW_SHARED:
        n_shared, n_specific = 6, 14
    elif scenario is Scenario.MOST_SHARED:
        n_shared, n_specific = 16, 4
    else:
        raise DataError(f"generate_sparse does not handle scenario {scenario}")
    if n_shared + k * n_specific > p:
        raise DataError("p too small for the requested supports")
    idx = rng.choice(p, n_shared + k * n_specific, replace=False)
    shared = idx[:n_shared]
    B = np.zeros((k, p))
    for i in range(k):
        hi = 4.0 if (scenario is Scenario.MOST_SHARED or i < 2) else 0.5
        B[i, shared] = rng.uniform(0.0, hi, n_shared)
        spec = idx[n_shared + i * n_specific: n_shared + (i + 1) * n_specific]
        B[i, spec] = rng.uniform(0.0, 4.0, n_specific)
    names = [f"x{j + 1}" for j in range(p)]
    out = []
    for i in range(k):
        X = equicorrelated_normal(rng, n, p, 1.0, 0.2)
        y = X @ B[i] + noise_sd * rng.standard_normal(n)
        out.append(SiteDataset(X=X, y=y, site_id=f"site{i + 1}", feature_names=names))
    return out, B


@dataclass
class ScenarioSpec:
    scenario: Scenario = Scenario.SHARED_BETA
    n_grid: tuple = N_GRID
    replicates: int = 100
    base_seed: int = 0
    significance: float = 0.05
    k: int = 2
    p: int = 3
    q: int = 0

    def __post_init__(self):
        self.scenario = Scenario(self.scenario)
        if self.replicates < 1:
            raise DataError("replicates must be >= 1")
        if self.scenario is Scenario.CONFOUNDED_BETA:
            self.q = 5


@dataclass
class Replicate:
    se_single: float
    se_pooled: float
    accepted: bool
    statistic: float
    true_ncp: float


@dataclass
class SimulationReport:
    spec: ScenarioSpec
    rows: list
    wall_time: float = field(default=0.0, compare=False)

    COLUMNS = ("n", "mse_single", "mse_pooled", "mse_guided", "acceptance_rate",
               "condition_value_mean", "true_condition_value_mean", "power", "n_power",
               "type1", "n_type1")

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in self.COLUMNS])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def true_ncp(summaries, betas, sigmas):
    """Non-centrality of the test statistic given the true coefficients and noise levels."""
    tau = sigmas[0] / np.asarray(sigmas)
    G = build_G(summaries, tau)
    d = np.concatenate([b - betas[0] for b in betas[1:]])
    return float(d @ np.linalg.solve(G, d)) / sigmas[0] ** 2


def _power_replicate(scenario, n, r, base_seed, significance):
    rng = replicate_rng(base_seed, _TAGS[scenario], n, r)
    if scenario is Scenario.SHARED_BETA:
        datasets, b1, b2 = generate_shared_beta(n, rng)
    else:
        datasets, truths = generate_confounded(n, rng)
        b1, b2 = truths["beta_1"], truths["beta_2"]
    fits = [ols_fit(d) for d in datasets]
    summaries = [site_summary(f, d) for f, d in zip(fits, datasets)]
    res = pooling_test(summaries, significance)
    beta_pooled, _ = pooled_ols(datasets, estimate_tau(summaries))
    return Replicate(
        se_single=float(np.sum((fits[0].beta_hat - b1) ** 2)),
        se_pooled=float(np.sum((beta_pooled - b1) ** 2)),
        accepted=res.accepted,
        statistic=res.statistic,
        true_ncp=true_ncp(summaries, [b1, b2], NOISE_SD),
    )


def n_workers(n_jobs=None):
    env = os.environ.get("POOLCHECK_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, n_jobs or cap))


def _map(fn, tasks, n_jobs):
    workers = n_workers(n_jobs)
    if workers == 1:
        return [fn(*t) for t in tasks]
    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(lambda t: fn(*t), tasks))


def _rate(mask):
    return float(np.mean(mask)) if len(mask) else float("nan")


def run_power_study(spec, n_jobs=None):
    """MSE and acceptance-rate curves of the pooling test over a grid of n.

    For each n and replicate: per-site OLS, the pooling test, and the pooled
    fit with estimated weights.  ``mse_guided`` uses the pooled estimate only
    when the test accepts.  Type-I error is the rejection rate among
    replicates whose true non-centrality is at most 1; power is the rejection
    rate among replicates where the single-site estimate beats the pooled one.
    """
    spec = ScenarioSpec(**vars(spec)) if isinstance(spec, ScenarioSpec) else ScenarioSpec(**spec)
    if spec.scenario not in (Scenario.SHARED_BETA, Scenario.CONFOUNDED_BETA):
        raise DataError(f"power study does not handle scenario {spec.scenario}")
    t0 = time.perf_counter()
    tasks = [(spec.scenario, n, r, spec.base_seed, spec.significance)
             for n in spec.n_grid for r in range(spec.replicates)]
    reps = _map(_power_replicate, tasks, n_jobs)
    rows = []
    for i, n in enumerate(spec.n_grid):
        block = reps[i * spec.replicates:(i + 1) * spec.replicates]
        se_s = np.array([x.se_single for x in block])
        se_p = np.array([x.se_pooled for x in block])
        acc = np.array([x.accepted for x in block])
        ncp = np.array([x.true_ncp for x in block])
        stat = np.array([x.statistic for x in block])
        null = ncp <= 1.0
        worse = se_s < se_p
        rows.append({
            "n": int(n),
            "mse_single": float(se_s.mean()),
            "mse_pooled": float(se_p.mean()),
            "mse_guided": float(np.where(acc, se_p, se_s).mean()),
            "acceptance_rate": float(acc.mean()),
            "condition_value_mean": float(np.sqrt(stat).mean()),
            "true_condition_value_mean": float(np.sqrt(ncp).mean()),
            "power": _rate(~acc[worse]),
            "n_power": int(worse.sum()),
            "type1": _rate(~acc[null]),
            "n_type1": int(null.sum()),
        })
    return SimulationReport(spec=spec, rows=rows, wall_time=time.perf_counter() - t0)


def boundary_type1(n=64, replicates=1000, significance=0.05, base_seed=0, ncp=1.0):
    """Rejection rate when the true non-centrality equals ``ncp`` exactly.

    Each replicate draws the two-site design, then sets
    ``beta_2 = beta_1 + c * u`` for a random direction u, with c chosen so the
    realised G gives the requested non-centrality.
    """
    rejects = np.empty(replicates, dtype=bool)
    for r in range(replicates):
        rng = replicate_rng(base_seed, 99, n, r)
        b1 = rng.uniform(0.0, 4.0, 3)
        Xs = [equicorrelated_normal(rng, n, 3, 1.0, 0.5) for _ in range(2)]
        design = [SiteSummary(f"site{i + 1}", n, np.zeros(3), 1.0, X.T @ X / n) for i, X in enumerate(Xs)]
        u = rng.standard_normal(3)
        u /= np.linalg.norm(u)
        base = true_ncp(design, [np.zeros(3), u], NOISE_SD)
        b2 = b1 + np.sqrt(ncp / base) * u
        datasets = []
        for i, (X, b, sd) in enumerate(zip(Xs, (b1, b2), NOISE_SD)):
            datasets.append(SiteDataset(X=X, y=X @ b + sd * rng.standard_normal(n), site_id=f"site{i + 1}"))
        summaries = [site_summary(ols_fit(d), d) for d in datasets]
        rejects[r] = not pooling_test(summaries, significance).accepted
    return float(rejects.mean())


def run_lasso_paths(scenario, seed=0, alpha_list=(0.0, 0.05, 0.95, 1.0), chosen_alpha=None,
                    cv_folds=10, n_lambdas=100, n=150, p=400, select_kw=None, fit_kw=None):
    """Cross-validated solution paths for several alphas, plus support recovery.

    When ``chosen_alpha`` is None it is picked by
    :func:`poolcheck.inference.select_alpha` on the same data.

    Returns a dict with ``paths`` (alpha -> SolutionPath), ``recovery``
    (alpha -> metrics at the CV-optimal lambda), ``chosen_alpha``,
    ``selection`` (the AlphaSelectionReport or None) and ``B_true``.
    """
    from .inference import select_alpha

    datasets, B_true = generate_sparse(scenario, seed, n=n, p=p)
    report = None
    if chosen_alpha is None:
        report = select_alpha(datasets, seed=seed, **(select_kw or {}))
        chosen_alpha = report.chosen_alpha
    alphas = sorted(set(float(a) for a in alpha_list) | {float(chosen_alpha)})
    true_stats = smslasso.support_stats(B_true)
    truth = np.abs(B_true) > 0
    paths, recovery = {}, {}
    for a in alphas:
        path = smslasso.solution_path(datasets, a, n_lambdas=n_lambdas, cv_folds=cv_folds,
                                      seed=seed, **(fit_kw or {}))
        paths[a] = path
        B = path.fits[path.best_index].B
        st = smslasso.support_stats(B)
        found = np.abs(B) > smslasso.SUPPORT_TOL
        n_found = int(found.sum())
        recovery[a] = {
            "alpha": a,
            "best_lambda": path.best_lambda,
            "min_cv_error": path.min_cv_error,
            "cv_se": float(path.cv_se[path.best_index]),
            "always_active_found": len(st.always_active),
            "always_active_correct": len(st.always_active & true_stats.always_active),
            "always_active_true": len(true_stats.always_active),
            "precision": float((found & truth).sum() / n_found) if n_found else float("nan"),
            "recall": float((found & truth).sum() / truth.sum()),
            "l2_error": float(np.sum((B - B_true) ** 2) / B.shape[0]),
        }
    return {"paths": paths, "recovery": recovery, "chosen_alpha": float(chosen_alpha),
            "selection": report, "B_true": B_true, "datasets": datasets}
