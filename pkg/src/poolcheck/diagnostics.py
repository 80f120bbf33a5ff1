"""Diagnostics for the sparse multi-site Lasso.

m-sparse eigenvalues of the block Gram matrix, effective sparsity levels,
and an empirical check of how the estimation error scales with n.
"""

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.linalg import block_diag

from . import sim, smslasso
from .exceptions import DataError

ENUMERATION_BUDGET = 100_000


@dataclass
class MSparseEigenReport:
    m: float
    phi_min: float
    phi_max: float
    exhaustive: bool
    n_supports: int = 0


def build_C(datasets):
    """Block-diagonal Gram matrix ``diag(X_1'X_1, ..., X_k'X_k) / max_i n_i``."""
    p = datasets[0].p
    if any(d.p != p for d in datasets):
        raise DataError("all sites must share p")
    n_bar = max(d.n for d in datasets)
    return block_diag(*[d.X.T @ d.X for d in datasets]) / n_bar


def _extremes(C, idx):
    # sorted so a support gives bit-identical values however it was reached
    idx = sorted(idx)
    w = np.linalg.eigvalsh(C[np.ix_(idx, idx)])
    return w[0], w[-1]


def _greedy(C, s, start, find_min):
    support = [start]
    rest = set(range(C.shape[0])) - {start}
    while len(support) < s:
        best, best_val = None, None
        for j in sorted(rest):
            lo, hi = _extremes(C, support + [j])
            val = lo if find_min else -hi
            if best_val is None or val < best_val:
                best, best_val = j, val
        support.append(best)
        rest.remove(best)
    return support


def _swap_search(C, support, find_min, max_rounds=20):
    """Single-swap local search from a support."""
    support = list(support)
    d = C.shape[0]
    lo, hi = _extremes(C, support)
    cur = lo if find_min else -hi
    for _ in range(max_rounds):
        improved = False
        for pos in range(len(support)):
            for j in range(d):
                if j in support:
                    continue
                cand = support[:pos] + [j] + support[pos + 1:]
                lo, hi = _extremes(C, cand)
                val = lo if find_min else -hi
                if val < cur - 1e-15:
                    support, cur, improved = cand, val, True
        if not improved:
            break
    return cur if find_min else -cur


def m_sparse_eigenvalues(C, m, budget=ENUMERATION_BUDGET, n_restarts=10, seed=0):
    """Smallest and largest Rayleigh quotients of C over ceil(m)-sparse vectors.

    All supports of size ``ceil(m)`` are enumerated when there are at most
    ``budget`` of them.  Otherwise greedy forward selection from every
    coordinate plus random restarts, each refined by swap search, give an
    inner bracket (``phi_min`` too high, ``phi_max`` too low at worst) and
    ``exhaustive`` is False.
    """
    C = np.asarray(C, dtype=float)
    d = C.shape[0]
    s = int(math.ceil(m))
    if s < 1 or s > d:
        raise DataError(f"ceil(m)={s} must lie in [1, {d}]")
    n_sup = math.comb(d, s)
    if n_sup <= budget:
        lo, hi = np.inf, -np.inf
        for idx in combinations(range(d), s):
            a, b = _extremes(C, list(idx))
            lo, hi = min(lo, a), max(hi, b)
        return MSparseEigenReport(m=m, phi_min=float(lo), phi_max=float(hi),
                                  exhaustive=True, n_supports=n_sup)

    rng = np.random.default_rng(seed)
    diag = np.diag(C)
    starts = sorted(set(np.argsort(diag)[:n_restarts].tolist()) | set(np.argsort(-diag)[:n_restarts].tolist()))
    lo, hi = np.inf, -np.inf
    for find_min in (True, False):
        cands = [_greedy(C, s, st, find_min) for st in starts]
        cands += [sorted(rng.choice(d, s, replace=False).tolist()) for _ in range(n_restarts)]
        for sup in cands:
            val = _swap_search(C, sup, find_min)
            if find_min:
                lo = min(lo, val)
            else:
                hi = max(hi, val)
    return MSparseEigenReport(m=m, phi_min=float(lo), phi_max=float(hi), exhaustive=False,
                              n_supports=n_sup)


def effective_sparsity(s_h, s_p, alpha, k, corrected=False):
    """Effective sparsity in the error rate of the multi-site Lasso.

    ``corrected=False``: ``((1 - a) sqrt(s_p) + a sqrt(s_h / k))^2``.
    ``corrected=True`` uses the rescaled weight ``a~ = a / ((1 - a) sqrt(k) + a)``
    in ``((1 - a~) sqrt(s_p / k) + a~ sqrt(s_h / k))^2``.
    """
    if s_h < 0 or s_p < 0:
        raise DataError("support sizes must be nonnegative")
    if corrected:
        a = smslasso.corrected_alpha(alpha, k)
        return float(((1 - a) * np.sqrt(s_p / k) + a * np.sqrt(s_h / k)) ** 2)
    return float(((1 - alpha) * np.sqrt(s_p) + alpha * np.sqrt(s_h / k)) ** 2)


@dataclass
class RateRow:
    n: int
    mean_error: float
    se_error: float
    rate: float
    ratio: float


def rate_report(scenario="few-shared", n_grid=(50, 100, 150, 300), seeds=range(20), alpha=0.95,
                cv_folds=5, n_lambdas=20, p=400, noise_sd=1.0, fit_kw=None):
    """Mean per-site squared error ``||B_hat - B*||_F^2 / k`` at the CV-chosen lambda.

    Each row carries the reference rate ``s_bar log(kp) / n``, with ``s_bar``
    computed from the true supports at ``alpha``, and the ratio error/rate.
    The constant in front of the rate is unknown, so only the ratio's
    spread across n is informative.

    Returns ``(rows, monotone)`` where ``monotone`` says whether the mean
    error decreases along ``n_grid`` up to one Monte Carlo standard error.
    """
    rows = []
    for n in n_grid:
        errs, rates = [], []
        for s in seeds:
            datasets, B_true = sim.generate_sparse(scenario, sim.replicate_rng(s, 7, n), n=n, p=p,
                                                   noise_sd=noise_sd)
            k = len(datasets)
            path = smslasso.solution_path(datasets, alpha, n_lambdas=n_lambdas, cv_folds=cv_folds,
                                          seed=s, **(fit_kw or {}))
            B = path.fits[path.best_index].B
            errs.append(float(np.sum((B - B_true) ** 2)) / k)
            st = smslasso.support_stats(B_true)
            s_bar = effective_sparsity(st.s_h, st.s_p, alpha, k)
            rates.append(s_bar * np.log(k * p) / max(d.n for d in datasets))
        errs = np.array(errs)
        rate = float(np.mean(rates))
        mean = float(errs.mean())
        se = float(errs.std(ddof=1) / np.sqrt(len(errs))) if len(errs) > 1 else 0.0
        rows.append(RateRow(n=int(n), mean_error=mean, se_error=se, rate=rate, ratio=mean / rate))
    monotone = all(b.mean_error <= a.mean_error + max(a.se_error, b.se_error)
                   for a, b in zip(rows, rows[1:]))
    return rows, monotone
