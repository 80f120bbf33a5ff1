"""Per-site least squares and the summaries a site shares with the others.

Second moments are uncentered and normalised by ``n`` (``n * Sigma = X'X``),
and no intercept is added implicitly: append a column of ones if one is
wanted.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import (
    DataError,
    DegenerateDF,
    RankDeficient,
    SingularConfoundCovariance,
    Underdetermined,
)

COND_CAP = 1e10
# relative eigenvalue floor below which the conditional covariance is
# considered to have lost rank to the confounds
CONFOUND_RANK_FLOOR = 1e-10


def _as_matrix(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DataError(f"{name} must be 2-dimensional, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        bad = np.unique(np.nonzero(~np.isfinite(a))[0])
        raise DataError(f"{name} has non-finite entries in rows {bad[:10].tolist()}")
    return a


@dataclass
class SiteDataset:
    """Row-level data held by one site.

    ``X`` holds the predictors shared across sites, ``Z`` (optional) the
    site-specific confounds whose coefficients are not pooled.
    """

    X: np.ndarray
    y: np.ndarray
    Z: np.ndarray = None
    site_id: str = "site"
    feature_names: list = None
    confound_names: list = None

    def __post_init__(self):
        self.X = _as_matrix(self.X, "X")
        self.y = np.asarray(self.y, dtype=float).ravel()
        if not np.all(np.isfinite(self.y)):
            raise DataError("y has non-finite entries")
        if self.X.shape[0] != self.y.shape[0]:
            raise DataError(f"X has {self.X.shape[0]} rows but y has {self.y.shape[0]}")
        if self.Z is not None:
            self.Z = _as_matrix(self.Z, "Z")
            if self.Z.shape[0] != self.y.shape[0]:
                raise DataError(f"Z has {self.Z.shape[0]} rows but y has {self.y.shape[0]}")
        if self.feature_names is None:
            self.feature_names = [f"x{j}" for j in range(self.p)]
        if len(self.feature_names) != self.p:
            raise DataError("feature_names length does not match X")
        self.feature_names = [str(f) for f in self.feature_names]
        if self.Z is not None:
            if self.confound_names is None:
                self.confound_names = [f"z{j}" for j in range(self.q)]
            if len(self.confound_names) != self.q:
                raise DataError("confound_names length does not match Z")
        self.site_id = str(self.site_id)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def q(self):
        return 0 if self.Z is None else self.Z.shape[1]


@dataclass
class SiteFit:
    beta_hat: np.ndarray
    sigma_hat: float
    Sigma_hat: np.ndarray
    n: int
    gamma_hat: np.ndarray = None
    used_conditional: bool = False
    rss: float = 0.0


@dataclass
class SiteSummary:
    """What a site shares for the pooling test. Size is O(p^2), independent of n."""

    site_id: str
    n: int
    beta_hat: np.ndarray
    sigma_hat: float
    Sigma_hat: np.ndarray
    used_conditional: bool = False
    feature_names: list = field(default=None)

    def __post_init__(self):
        self.beta_hat = np.asarray(self.beta_hat, dtype=float).ravel()
        self.Sigma_hat = np.atleast_2d(np.asarray(self.Sigma_hat, dtype=float))
        self.n = int(self.n)
        self.sigma_hat = float(self.sigma_hat)
        if self.feature_names is None:
            self.feature_names = [f"x{j}" for j in range(self.p)]
        self.feature_names = [str(f) for f in self.feature_names]

    @property
    def p(self):
        return self.beta_hat.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SiteSummary):
            return NotImplemented
        return (
            self.site_id == other.site_id
            and self.n == other.n
            and self.sigma_hat == other.sigma_hat
            and self.used_conditional == other.used_conditional
            and self.feature_names == other.feature_names
            and np.array_equal(self.beta_hat, other.beta_hat)
            and np.array_equal(self.Sigma_hat, other.Sigma_hat)
        )


def _qr_checked(D, cond_cap, exc):
    Q, R = np.linalg.qr(D)
    sv = np.linalg.svd(R, compute_uv=False)
    if sv[-1] == 0 or sv[0] / sv[-1] > cond_cap:
        cond = np.inf if sv[-1] == 0 else sv[0] / sv[-1]
        raise exc(f"design condition number {cond:.3g} exceeds cap {cond_cap:.3g}")
    return Q, R


def conditional_covariance(data, cond_cap=COND_CAP):
    """Covariance of X after partialling out the confounds Z.

    Returns the Schur complement ``Sxx - Sxz Szz^{-1} Szx`` of the joint
    second-moment matrix, formed as ``X_res' X_res / n`` with ``X_res`` the
    residual of X on Z so that the result is PSD by construction.
    """
    if data.Z is None:
        raise DataError("conditional_covariance requires confounds Z")
    Qz, _ = _qr_checked(data.Z, cond_cap, SingularConfoundCovariance)
    X_res = data.X - Qz @ (Qz.T @ data.X)
    S = X_res.T @ X_res / data.n
    return 0.5 * (S + S.T)


def ols_fit(data, cond_cap=COND_CAP):
    """Least squares fit of one site.

    With confounds present, ``[X Z]`` is fitted jointly and ``Sigma_hat`` is
    the conditional covariance of X given Z.

    Raises
    ------
    Underdetermined
        n < p + q.
    DegenerateDF
        n == p + q; the interpolating coefficients are attached to the
        exception as ``beta_hat``.
    RankDeficient
        The design's condition number exceeds ``cond_cap``.
    SingularConfoundCovariance
        Z is singular, or Z spans directions of X.
    """
    X, y, Z = data.X, data.y, data.Z
    n, p, q = data.n, data.p, data.q
    m = p + q
    if n < m:
        raise Underdetermined(
            f"n={n} < p+q={m}; classical OLS is not identifiable, use the sparse multi-site Lasso"
        )
    if Z is not None:
        Sigma = conditional_covariance(data, cond_cap)
        floor = CONFOUND_RANK_FLOOR * max(np.linalg.eigvalsh(X.T @ X / n).max(), np.finfo(float).tiny)
        if np.linalg.eigvalsh(Sigma).min() <= floor:
            raise SingularConfoundCovariance("confounds Z span directions of the predictors X")
        D = np.hstack([X, Z])
    else:
        Sigma = X.T @ X / n
        Sigma = 0.5 * (Sigma + Sigma.T)
        D = X
    Q, R = _qr_checked(D, cond_cap, RankDeficient)
    coef = solve_triangular(R, Q.T @ y)
    if n == m:
        err = DegenerateDF(f"n == p+q == {n}: zero residual degrees of freedom, noise level undefined")
        err.beta_hat = coef[:p]
        raise err
    resid = y - D @ coef
    rss = float(resid @ resid)
    sigma = np.sqrt(rss / (n - m))
    return SiteFit(
        beta_hat=coef[:p],
        gamma_hat=coef[p:] if Z is not None else None,
        sigma_hat=float(sigma),
        Sigma_hat=Sigma,
        n=n,
        used_conditional=Z is not None,
        rss=rss,
    )


def site_summary(fit, data):
    return SiteSummary(
        site_id=data.site_id,
        n=fit.n,
        beta_hat=fit.beta_hat.copy(),
        sigma_hat=fit.sigma_hat,
        Sigma_hat=fit.Sigma_hat.copy(),
        used_conditional=fit.used_conditional,
        feature_names=list(data.feature_names),
    )


def summarize(data, cond_cap=COND_CAP):
    """Fit a site and return its shareable summary in one call."""
    return site_summary(ols_fit(data, cond_cap), data)


class SiteOLS(RegressorMixin, BaseEstimator):
    """Single-site least squares estimator with optional confounds.

    Parameters
    ----------
    cond_cap : float
        Largest accepted condition number of the design.

    Attributes
    ----------
    coef_ : ndarray of shape (p,)
    gamma_ : ndarray of shape (q,) or None
    sigma_ : float
        Residual noise standard deviation, ``RSS / (n - p - q)``.
    covariance_ : ndarray of shape (p, p)
        ``X'X / n``, or the conditional covariance when ``Z`` is given.
    """

    def __init__(self, cond_cap=COND_CAP):
        self.cond_cap = cond_cap

    def fit(self, X, y, Z=None):
        data = SiteDataset(X=X, y=y, Z=Z)
        fit = ols_fit(data, self.cond_cap)
        self.coef_ = fit.beta_hat
        self.gamma_ = fit.gamma_hat
        self.sigma_ = fit.sigma_hat
        self.covariance_ = fit.Sigma_hat
        self.n_samples_ = fit.n
        self.n_features_in_ = data.p
        self.fit_ = fit
        return self

    def predict(self, X, Z=None):
        check_is_fitted(self, "coef_")
        pred = _as_matrix(X, "X") @ self.coef_
        if self.gamma_ is not None:
            if Z is None:
                raise DataError("model was fitted with confounds; pass Z")
            pred = pred + _as_matrix(Z, "Z") @ self.gamma_
        return pred

    def summary(self, site_id="site", feature_names=None):
        check_is_fitted(self, "coef_")
        return SiteSummary(
            site_id=site_id,
            n=self.n_samples_,
            beta_hat=self.coef_.copy(),
            sigma_hat=self.sigma_,
            Sigma_hat=self.covariance_.copy(),
            used_conditional=self.gamma_ is not None,
            feature_names=feature_names,
        )
