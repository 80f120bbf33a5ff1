"""Sparse multi-site Lasso.

Estimates a k x p coefficient matrix B (row i = site i) by minimising

    sum_i ||y_i - X_i b_i||^2 + lam * (alpha * sum_j ||B[:, j]||_1
                                        + (1 - alpha) * sqrt(k) * sum_j ||B[:, j]||_2)

with accelerated proximal gradient (FISTA) and adaptive restart.  The
penalty acts column by column, and its proximal operator has a closed form:
soft-threshold, then shrink the column as a group.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_is_fitted

from .exceptions import DataError
from .regress import SiteDataset

MAX_ITER = 50_000
OBJ_TOL = 1e-10
RESID_TOL = 1e-7
SUPPORT_TOL = 1e-8


@dataclass
class PenaltySpec:
    lam: float
    alpha: float
    k: int

    def __post_init__(self):
        if self.lam < 0:
            raise DataError(f"lambda must be nonnegative, got {self.lam}")
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError(f"alpha must lie in [0, 1], got {self.alpha}")

    def value(self, B):
        return self.lam * penalty(B, self.alpha)


@dataclass
class LassoFit:
    B: np.ndarray
    intercepts: np.ndarray
    objective: float
    n_iter: int
    converged: bool
    lam: float
    alpha: float


@dataclass
class SolutionPath:
    lambdas: np.ndarray
    fits: list
    alpha: float
    objectives: np.ndarray = None
    cv_errors: np.ndarray = None
    cv_se: np.ndarray = None
    cv_fold_errors: np.ndarray = None

    @property
    def best_index(self):
        if self.cv_errors is None:
            raise ValueError("path was computed without cross-validation")
        return int(np.argmin(self.cv_errors))

    @property
    def best_lambda(self):
        return float(self.lambdas[self.best_index])

    @property
    def min_cv_error(self):
        return float(self.cv_errors[self.best_index])


@dataclass
class SupportStats:
    site_active: list
    always_active: set
    s_h: int
    s_p: int
    r: float
    union: set = field(default_factory=set)


def penalty(B, alpha):
    """Penalty value without the lambda factor."""
    B = np.atleast_2d(B)
    k = B.shape[0]
    return float(alpha * np.abs(B).sum()
                 + (1.0 - alpha) * np.sqrt(k) * np.linalg.norm(B, axis=0).sum())


def soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def composite_prox(v, t1, t2):
    """Proximal operator of ``t1 ||b||_1 + t2 ||b||_2`` at ``v``.

    ``v`` may be a vector (one column) or a k x p matrix, in which case the
    operator is applied to each column.
    """
    u = soft_threshold(np.asarray(v, dtype=float), t1)
    norm = np.linalg.norm(u, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norm > t2, 1.0 - t2 / np.where(norm > 0, norm, 1.0), 0.0)
    return u * scale


def corrected_alpha(alpha, k):
    """Map (alpha) to the rescaled mixing weight used when supports rarely overlap."""
    return alpha / ((1.0 - alpha) * np.sqrt(k) + alpha)


def corrected_lambda(lam, alpha, k):
    return ((1.0 - alpha) * np.sqrt(k) + alpha) * lam


def uncorrected(alpha_c, lam_c, k):
    """Inverse of (:func:`corrected_alpha`, :func:`corrected_lambda`)."""
    rk = np.sqrt(k)
    alpha = alpha_c * rk / (1.0 - alpha_c + alpha_c * rk)
    return alpha, lam_c / ((1.0 - alpha) * rk + alpha)


def _largest_eig(X, tol=1e-12, max_iter=10_000, seed=0):
    """Largest eigenvalue of X'X by power iteration."""
    n, p = X.shape
    if n == 0 or p == 0 or not np.any(X):
        return 0.0
    v = np.random.default_rng(seed).standard_normal(p)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = X.T @ (X @ v)
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= tol * lam_new:
            lam = lam_new
            break
        lam = lam_new
    # Rayleigh quotients approach from below; nudge up to keep 1/L a safe step
    return lam * (1.0 + 1e-8)


def lipschitz_constant(Xs):
    return 2.0 * max(_largest_eig(X) for X in Xs)


class _Problem:
    """Preprocessed site data: optional centring and column scaling."""

    def __init__(self, datasets, fit_intercept=False, standardize=False):
        if not datasets:
            raise DataError("no sites given")
        p = datasets[0].p
        for d in datasets:
            if d.p != p:
                raise DataError(f"site {d.site_id!r} has p={d.p}, expected {p}")
        self.k, self.p = len(datasets), p
        self.fit_intercept, self.standardize = fit_intercept, standardize
        self.Xs, self.ys, self.x_mean, self.y_mean, self.scale = [], [], [], [], []
        for d in datasets:
            X, y = d.X, d.y
            xm = X.mean(axis=0) if fit_intercept else np.zeros(p)
            ym = y.mean() if fit_intercept else 0.0
            X = X - xm
            y = y - ym
            if standardize:
                sc = np.sqrt((X ** 2).mean(axis=0))
                sc[sc == 0] = 1.0
                X = X / sc
            else:
                sc = np.ones(p)
            self.Xs.append(X)
            self.ys.append(y)
            self.x_mean.append(xm)
            self.y_mean.append(ym)
            self.scale.append(sc)
        self.scale = np.vstack(self.scale)
        self._L = None

    @property
    def L(self):
        if self._L is None:
            self._L = lipschitz_constant(self.Xs)
        return self._L

    def residuals(self, B):
        return [y - X @ b for X, y, b in zip(self.Xs, self.ys, B)]

    def loss(self, B):
        return float(sum(r @ r for r in self.residuals(B)))

    def loss_grad(self, B):
        res = self.residuals(B)
        grad = np.vstack([-2.0 * (X.T @ r) for X, r in zip(self.Xs, res)])
        return float(sum(r @ r for r in res)), grad

    def zero_gradient(self):
        return np.vstack([-2.0 * (X.T @ y) for X, y in zip(self.Xs, self.ys)])

    def to_original(self, B):
        """Coefficients and intercepts on the caller's (unscaled) columns."""
        coef = B / self.scale
        intercepts = np.array([ym - xm @ c for xm, ym, c in zip(self.x_mean, self.y_mean, coef)])
        return coef, intercepts

    def from_original(self, coef):
        return coef * self.scale


def lambda_max(datasets, alpha, fit_intercept=False, standardize=False, _problem=None):
    """Smallest lambda for which B = 0 solves the problem.

    B = 0 is optimal iff, for every column j with ``c_j = -grad_j(0)``,
    ``||S(c_j, lam * alpha)||_2 <= lam * (1 - alpha) * sqrt(k)``.  The left side
    minus the right side decreases in lam, so the threshold is found by
    bisection.
    """
    prob = _problem or _Problem(datasets, fit_intercept, standardize)
    C = -prob.zero_gradient()
    k = prob.k
    rk = np.sqrt(k)
    if not np.any(C):
        return 0.0

    def excess(lam):
        u = soft_threshold(C, lam * alpha)
        return np.linalg.norm(u, axis=0).max() - lam * (1.0 - alpha) * rk

    bounds = []
    if alpha > 0:
        bounds.append(np.abs(C).max() / alpha)
    if alpha < 1:
        bounds.append(np.linalg.norm(C, axis=0).max() / ((1.0 - alpha) * rk))
    hi = min(bounds)
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * hi:
            break
    return hi * (1.0 + 1e-9)


def _fista(prob, lam, alpha, B0, max_iter, obj_tol, resid_tol):
    L = prob.L
    k = prob.k
    rk = np.sqrt(k)
    if L == 0:
        B = np.zeros((k, prob.p))
        return B, prob.loss(B), 0, True
    t1 = lam * alpha / L
    t2 = lam * (1.0 - alpha) * rk / L

    def obj(B, loss=None):
        return (prob.loss(B) if loss is None else loss) + lam * penalty(B, alpha)

    def step(Y):
        _, g = prob.loss_grad(Y)
        return composite_prox(Y - g / L, t1, t2)

    B = np.array(B0, dtype=float, copy=True)
    F = obj(B)
    Y, t = B.copy(), 1.0
    best = (F, B)
    for it in range(1, max_iter + 1):
        B_new = step(Y)
        F_new = obj(B_new)
        if F_new > F:
            # momentum overshot: fall back to a plain (monotone) proximal step
            B_new = step(B)
            F_new = obj(B_new)
            t = 1.0
            Y = B_new.copy()
        else:
            restart = np.vdot(Y - B_new, B_new - B) > 0
            if restart:
                t = 1.0
                Y = B_new.copy()
            else:
                t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
                Y = B_new + ((t - 1.0) / t_new) * (B_new - B)
                t = t_new
        decrease = F - F_new
        B, F = B_new, min(F_new, F)
        if F_new <= best[0]:
            best = (F_new, B_new)
        if decrease <= obj_tol * max(abs(F_new), 1e-300):
            resid = np.linalg.norm(B - step(B)) / max(1.0, np.linalg.norm(B))
            if resid <= resid_tol:
                return B, F_new, it, True
    return best[1], best[0], max_iter, False


def fit(datasets, lam, alpha, B0=None, fit_intercept=False, standardize=False,
        max_iter=MAX_ITER, obj_tol=OBJ_TOL, resid_tol=RESID_TOL, _problem=None):
    """Fit the sparse multi-site Lasso at one (lam, alpha).

    Parameters
    ----------
    datasets : list of SiteDataset
        Sites sharing the same p; row counts are arbitrary.
    lam : float
        Overall penalty weight.
    alpha : float
        Mix between the l1 part (alpha=1, per-site Lasso) and the column
        group part (alpha=0, multi-task group Lasso).
    B0 : ndarray (k, p), optional
        Warm start on the caller's coefficient scale.

    Returns
    -------
    LassoFit
        ``converged`` is False (and a ConvergenceWarning is issued) if
        ``max_iter`` was hit; ``B`` is then the best iterate seen.
    """
    prob = _problem or _Problem(datasets, fit_intercept, standardize)
    PenaltySpec(lam, alpha, prob.k)
    B0 = np.zeros((prob.k, prob.p)) if B0 is None else prob.from_original(np.asarray(B0, dtype=float))
    B, F, n_iter, ok = _fista(prob, lam, alpha, B0, max_iter, obj_tol, resid_tol)
    if not ok:
        warnings.warn(f"sparse multi-site Lasso hit max_iter={max_iter} (lam={lam:.4g}, alpha={alpha})",
                      ConvergenceWarning, stacklevel=2)
    coef, intercepts = prob.to_original(B)
    return LassoFit(B=coef, intercepts=intercepts, objective=F, n_iter=n_iter,
                    converged=ok, lam=float(lam), alpha=float(alpha))


def objective(datasets, B, lam, alpha, intercepts=None):
    """Loss plus penalty, recomputed from raw data."""
    loss = 0.0
    for i, (d, b) in enumerate(zip(datasets, B)):
        r = d.y - d.X @ b - (0.0 if intercepts is None else intercepts[i])
        loss += float(r @ r)
    return loss + lam * penalty(B, alpha)


def lambda_grid(lmax, n_lambdas=100, eps=1e-3):
    if lmax <= 0:
        raise DataError("lambda_max is zero: every response is orthogonal to its design")
    return np.geomspace(lmax, eps * lmax, n_lambdas)


def _path_fits(prob, lambdas, alpha, **kw):
    B = np.zeros((prob.k, prob.p))
    fits = []
    for lam in lambdas:
        f = fit(None, lam, alpha, B0=B, _problem=prob, **kw)
        B = f.B
        fits.append(f)
    return fits


def site_folds(datasets, n_folds, seed):
    """Per-site fold labels so every fold holds rows from every site."""
    rng = np.random.default_rng(seed)
    labels = []
    for d in datasets:
        if d.n < n_folds:
            raise DataError(f"site {d.site_id!r} has {d.n} rows, fewer than {n_folds} folds")
        lab = np.empty(d.n, dtype=int)
        for f, idx in enumerate(np.array_split(rng.permutation(d.n), n_folds)):
            lab[idx] = f
        labels.append(lab)
    return labels


def _subset(datasets, masks):
    return [SiteDataset(X=d.X[m], y=d.y[m], site_id=d.site_id, feature_names=d.feature_names)
            for d, m in zip(datasets, masks)]


def solution_path(datasets, alpha, lambdas=None, n_lambdas=100, eps=1e-3, cv_folds=None,
                  seed=0, fit_intercept=False, standardize=False, **fit_kw):
    """Warm-started fits along a decreasing lambda grid, optionally cross-validated.

    Without ``lambdas`` the grid is ``n_lambdas`` log-spaced points from
    ``lambda_max`` down to ``eps * lambda_max``.  With ``cv_folds``, each site's
    rows are split into that many folds, and fold f holds out fold f of every
    site; the CV error is the squared prediction error pooled over the
    held-out rows of all sites, averaged over folds.
    """
    prob = _Problem(datasets, fit_intercept, standardize)
    if lambdas is None:
        lambdas = lambda_grid(lambda_max(datasets, alpha, _problem=prob), n_lambdas, eps)
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.ndim != 1 or np.any(np.diff(lambdas) >= 0):
        raise DataError("lambda grid must be strictly decreasing")
    fits = _path_fits(prob, lambdas, alpha, **fit_kw)
    path = SolutionPath(lambdas=lambdas, fits=fits, alpha=float(alpha),
                        objectives=np.array([f.objective for f in fits]))
    if cv_folds:
        folds = site_folds(datasets, cv_folds, seed)
        errs = np.empty((cv_folds, len(lambdas)))
        for f in range(cv_folds):
            train = _subset(datasets, [lab != f for lab in folds])
            test = _subset(datasets, [lab == f for lab in folds])
            tprob = _Problem(train, fit_intercept, standardize)
            tfits = _path_fits(tprob, lambdas, alpha, **fit_kw)
            n_test = sum(d.n for d in test)
            for j, tf in enumerate(tfits):
                sse = 0.0
                for i, d in enumerate(test):
                    r = d.y - d.X @ tf.B[i] - tf.intercepts[i]
                    sse += float(r @ r)
                errs[f, j] = sse / n_test
        path.cv_fold_errors = errs
        path.cv_errors = errs.mean(axis=0)
        path.cv_se = errs.std(axis=0, ddof=1) / np.sqrt(cv_folds)
    return path


def support_stats(B, tol=SUPPORT_TOL):
    """Site-level and union support sizes of a coefficient matrix."""
    active = np.abs(np.atleast_2d(B)) > tol
    site_active = [set(np.flatnonzero(row).tolist()) for row in active]
    union = set(np.flatnonzero(active.any(axis=0)).tolist())
    always = set(np.flatnonzero(active.all(axis=0)).tolist())
    s_h = int(active.sum())
    s_p = len(union)
    return SupportStats(site_active=site_active, always_active=always, s_h=s_h, s_p=s_p,
                        r=s_h / s_p if s_p else 0.0, union=union)


def _datasets_from(X, y, sites):
    from .pooltest import split_sites

    return split_sites(X, y, sites)


class SparseMultiSiteLasso(RegressorMixin, BaseEstimator):
    """Sparse multi-site Lasso estimator.

    Rows of ``X`` are tagged with their site through the ``sites`` argument
    of ``fit`` and ``predict``.

    Parameters
    ----------
    lam : float
        Penalty weight.
    alpha : float in [0, 1]
        1 gives independent per-site Lassos, 0 a group Lasso over sites.
    fit_intercept : bool, default False
        Unpenalised per-site intercepts.
    standardize : bool, default False
        Scale each site's columns to unit RMS before fitting.  This changes
        the penalty geometry; coefficients are reported on the original scale.

    Attributes
    ----------
    coef_ : ndarray of shape (k, p)
    intercept_ : ndarray of shape (k,)
    sites_ : list of site labels, in row order of ``coef_``
    """

    def __init__(self, lam=1.0, alpha=0.5, fit_intercept=False, standardize=False,
                 max_iter=MAX_ITER, tol=OBJ_TOL):
        self.lam = lam
        self.alpha = alpha
        self.fit_intercept = fit_intercept
        self.standardize = standardize
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y, sites):
        return self.fit_sites(_datasets_from(X, y, sites))

    def fit_sites(self, datasets):
        res = fit(datasets, self.lam, self.alpha, fit_intercept=self.fit_intercept,
                  standardize=self.standardize, max_iter=self.max_iter, obj_tol=self.tol)
        self.coef_ = res.B
        self.intercept_ = res.intercepts
        self.objective_ = res.objective
        self.n_iter_ = res.n_iter
        self.converged_ = res.converged
        self.sites_ = [d.site_id for d in datasets]
        self.n_features_in_ = datasets[0].p
        return self

    def predict(self, X, sites):
        check_is_fitted(self, "coef_")
        X = np.asarray(X, dtype=float)
        sites = np.asarray(sites).astype(str)
        out = np.empty(X.shape[0])
        for i, s in enumerate(self.sites_):
            m = sites == s
            out[m] = X[m] @ self.coef_[i] + self.intercept_[i]
        unknown = ~np.isin(sites, self.sites_)
        if unknown.any():
            raise DataError(f"unknown sites {np.unique(sites[unknown]).tolist()}")
        return out

    def score(self, X, y, sites):
        from sklearn.metrics import r2_score

        return r2_score(y, self.predict(X, sites))

    def support(self, tol=SUPPORT_TOL):
        check_is_fitted(self, "coef_")
        return support_stats(self.coef_, tol)


class SparseMultiSiteLassoCV(SparseMultiSiteLasso):
    """Sparse multi-site Lasso with lambda chosen by site-stratified K-fold CV."""

    def __init__(self, alpha=0.5, n_lambdas=100, eps=1e-3, cv=10, random_state=0,
                 fit_intercept=False, standardize=False, max_iter=MAX_ITER, tol=OBJ_TOL):
        self.alpha = alpha
        self.n_lambdas = n_lambdas
        self.eps = eps
        self.cv = cv
        self.random_state = random_state
        self.fit_intercept = fit_intercept
        self.standardize = standardize
        self.max_iter = max_iter
        self.tol = tol

    def fit_sites(self, datasets):
        self.path_ = solution_path(datasets, self.alpha, n_lambdas=self.n_lambdas, eps=self.eps,
                                   cv_folds=self.cv, seed=self.random_state,
                                   fit_intercept=self.fit_intercept, standardize=self.standardize,
                                   max_iter=self.max_iter, obj_tol=self.tol)
        best = self.path_.fits[self.path_.best_index]
        self.lam_ = self.path_.best_lambda
        self.coef_ = best.B
        self.intercept_ = best.intercepts
        self.objective_ = best.objective
        self.sites_ = [d.site_id for d in datasets]
        self.n_features_in_ = datasets[0].p
        return self
