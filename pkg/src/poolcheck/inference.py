"""Simultaneous inference and the data-driven choice of alpha.

Per-site feature significance comes from multi sample-splitting: each split
selects features by a cross-validated Lasso on one half, tests them by OLS
on the other half with a Bonferroni correction, and the per-split p-values
are aggregated by the median rule ``min(1, 2 * median_b p_b)``.
"""

import enum
import warnings
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import stats
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LassoCV

from . import smslasso
from .exceptions import DataError, DegenerateSplit, EmptyActiveSets, SupportTooLarge
from .pooltest import pooling_test
from .regress import SiteDataset, ols_fit, site_summary

DEFAULT_ALPHA_GRID = tuple(np.round(np.arange(0.0, 0.951, 0.05), 2)) + (0.97, 0.99, 1.0)
QUANTILE_GAMMA = 0.5
MAX_RESPLITS = 10
SIMILARITY_THRESHOLD = 0.5
SUPPORT_MARGIN = 5


class Verdict(str, enum.Enum):
    SIMILAR = "Similar"
    DIFFERENT = "Different"

    def __str__(self):
        return self.value


@dataclass
class SimultaneousInferenceResult:
    p_values: np.ndarray
    selected: set
    n_splits: int
    seed: int
    alpha_fwer: float
    split_p_values: np.ndarray = field(repr=False, default=None)


@dataclass
class AlphaSelectionReport:
    site_active_sets: list
    always_active_count_by_alpha: dict
    chosen_alpha: float
    similarity_verdict: str
    lambda_multisite: float
    site_lambdas: list
    similarity: float
    fits: dict = field(repr=False, default_factory=dict)

    def table(self):
        """(alpha, always-active count) rows, for plotting."""
        return sorted(self.always_active_count_by_alpha.items())


def _lasso_cv(X, y, cv, n_alphas, seed):
    model = LassoCV(fit_intercept=False, cv=cv, alphas=n_alphas, random_state=seed,
                    max_iter=5000, tol=1e-4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        model.fit(X, y)
    return model


def site_lambda(data, cv=10, n_alphas=100, seed=0):
    """CV-optimal Lasso penalty for one site, on the ``||y - Xb||^2 + lam ||b||_1`` scale."""
    folds = min(cv, data.n)
    model = _lasso_cv(data.X, data.y, folds, n_alphas, seed)
    return 2.0 * data.n * float(model.alpha_)


def _ols_pvalues(X, y):
    n, s = X.shape
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = n - s
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(X.T @ X)
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef / se, 0.0)
    return 2.0 * stats.t.sf(np.abs(t), dof)


def _one_split(X, y, rng, cap, cv, n_alphas):
    n, p = X.shape
    for _ in range(MAX_RESPLITS):
        perm = rng.permutation(n)
        a, b = perm[: n // 2], perm[n // 2:]
        model = _lasso_cv(X[a], y[a], min(cv, len(a)), n_alphas, int(rng.integers(2**31)))
        coef = model.coef_
        sel = np.flatnonzero(coef != 0)
        if len(sel) > cap:
            sel = sel[np.argsort(-np.abs(coef[sel]), kind="stable")[:cap]]
            sel.sort()
        pv = np.ones(p)
        if len(sel) == 0:
            return pv
        if len(b) - len(sel) < 1 or np.linalg.matrix_rank(X[np.ix_(b, sel)]) < len(sel):
            continue
        raw = _ols_pvalues(X[np.ix_(b, sel)], y[b])
        pv[sel] = np.minimum(1.0, raw * len(sel))
        return pv
    raise DegenerateSplit(f"selection exhausted the test half in {MAX_RESPLITS} resplits")


def aggregate_pvalues(P, gamma=QUANTILE_GAMMA):
    """Quantile aggregation of per-split p-values (rows = splits)."""
    P = np.atleast_2d(P)
    if P.shape[0] == 1:
        return P[0].copy()
    return np.minimum(1.0, np.quantile(P / gamma, gamma, axis=0))


def multi_sample_splitting(data, n_splits=50, alpha_fwer=0.05, seed=0, cv=5, n_alphas=50):
    """FWER-controlling p-values for every feature of one site.

    Parameters
    ----------
    data : SiteDataset
        ``n >= 20``; p may exceed n.
    n_splits : int
    alpha_fwer : float
        Family-wise error level defining ``selected``.
    seed : int
    cv, n_alphas : int
        Cross-validation folds and grid size of the selecting Lasso.
    """
    if data.n < 20:
        raise DataError(f"multi sample-splitting needs n >= 20, site {data.site_id!r} has {data.n}")
    cap = data.n // 4
    P = np.empty((n_splits, data.p))
    for b in range(n_splits):
        rng = np.random.default_rng([seed, b])
        P[b] = _one_split(data.X, data.y, rng, cap, cv, n_alphas)
    pv = aggregate_pvalues(P)
    return SimultaneousInferenceResult(
        p_values=pv, selected=set(np.flatnonzero(pv <= alpha_fwer).tolist()),
        n_splits=n_splits, seed=seed, alpha_fwer=alpha_fwer, split_p_values=P)


def jaccard_similarity(sets):
    """Mean pairwise Jaccard index; pairs of empty sets count as identical."""
    vals = []
    for a, b in combinations(sets, 2):
        u = a | b
        vals.append(len(a & b) / len(u) if u else 1.0)
    return float(np.mean(vals)) if vals else 1.0


def choose_alpha(counts, verdict):
    """Pick alpha from an {alpha: always-active count} table.

    Different supports: smallest alpha reaching the minimum count.
    Similar supports: largest alpha reaching the maximum count.
    """
    alphas = sorted(counts)
    if verdict == Verdict.DIFFERENT:
        target = min(counts.values())
        return min(a for a in alphas if counts[a] == target)
    target = max(counts.values())
    return max(a for a in alphas if counts[a] == target)


def select_alpha(datasets, alpha_grid=DEFAULT_ALPHA_GRID, n_splits=50, alpha_fwer=0.05,
                 seed=0, cv=10, similarity_threshold=SIMILARITY_THRESHOLD, site_active_sets=None,
                 msplit_cv=5, fit_kw=None):
    """Three-step choice of the sparse multi-site Lasso mixing weight.

    1. Multi sample-splitting at every site gives its site-active features.
    2. Each site's CV-optimal Lasso lambda is computed and the smallest is
       used to fit the multi-site model at every grid alpha, counting the
       always-active features.
    3. Mean pairwise Jaccard similarity of the site-active sets decides
       whether supports are Similar or Different, and :func:`choose_alpha`
       reads the chosen alpha off the count table.

    ``site_active_sets`` may be supplied to skip step 1 (e.g. from another
    simultaneous-inference method).
    """
    if len(datasets) < 2:
        raise DataError("alpha selection needs at least two sites")
    if site_active_sets is None:
        site_active_sets = [
            multi_sample_splitting(d, n_splits, alpha_fwer, seed=seed + 1000 * i, cv=msplit_cv).selected
            for i, d in enumerate(datasets)
        ]
    site_active_sets = [set(s) for s in site_active_sets]
    if not any(site_active_sets):
        raise EmptyActiveSets("no site has any significant feature; nothing to pool")

    lams = [site_lambda(d, cv=cv, seed=seed + i) for i, d in enumerate(datasets)]
    lam = min(lams)
    counts, fits = {}, {}
    B = None
    for a in sorted(float(a) for a in alpha_grid):
        f = smslasso.fit(datasets, lam, a, B0=B, **(fit_kw or {}))
        B = f.B
        fits[a] = f
        counts[a] = len(smslasso.support_stats(f.B).always_active)

    sim = jaccard_similarity(site_active_sets)
    verdict = Verdict.SIMILAR if sim >= similarity_threshold else Verdict.DIFFERENT
    return AlphaSelectionReport(
        site_active_sets=site_active_sets, always_active_count_by_alpha=counts,
        chosen_alpha=choose_alpha(counts, verdict), similarity_verdict=verdict,
        lambda_multisite=lam, site_lambdas=lams, similarity=sim, fits=fits)


def selected_pooling_test(datasets, significance=0.05, report=None, **select_kw):
    """Select a shared support with the multi-site Lasso, then run the pooling test on it.

    The tested support is the set of features active at every site in the
    fit at the chosen alpha.  Each site refits OLS on those columns only,
    which must leave at least ``max(5, s_p)`` residual degrees of freedom at
    the smallest site.
    Pass a precomputed ``report`` from :func:`select_alpha` to reuse it.
    """
    if report is None:
        report = select_alpha(datasets, **select_kw)
    f = report.fits.get(report.chosen_alpha)
    if f is None:
        f = smslasso.fit(datasets, report.lambda_multisite, report.chosen_alpha)
    stats_ = smslasso.support_stats(f.B)
    support = sorted(stats_.always_active)
    if not support:
        raise EmptyActiveSets(f"no feature is active at every site at alpha={report.chosen_alpha}")
    n_min = min(d.n for d in datasets)
    margin = max(SUPPORT_MARGIN, stats_.s_p)
    if n_min - len(support) < margin:
        raise SupportTooLarge(
            f"shared support of {len(support)} features leaves fewer than {margin} "
            f"residual degrees of freedom at the smallest site (n={n_min}); raise lambda")
    summaries = []
    for d in datasets:
        sub = SiteDataset(X=d.X[:, support], y=d.y, site_id=d.site_id,
                          feature_names=[d.feature_names[j] for j in support])
        summaries.append(site_summary(ols_fit(sub), sub))
    result = pooling_test(summaries, significance)
    result.support = support
    return result
