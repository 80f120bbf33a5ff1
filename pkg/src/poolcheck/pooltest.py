"""Hypothesis test for whether pooling sites reduces the MSE of beta.

Site 1 (the first summary) is the reference.  For k sites with OLS
estimates ``b_i``, the stacked differences ``d = (b_2 - b_1, ..., b_k - b_1)``
have covariance ``sigma_1^2 G`` where

    G_ii = (n_1 S_1)^-1 + (n_i tau_i^2 S_i)^-1,    G_ij = (n_1 S_1)^-1.

``d' G^-1 d / sigma_1^2`` is non-central chi-square with ``(k-1) p`` degrees
of freedom, and pooling is guaranteed to help whenever the non-centrality is
at most 1.  The test rejects pooling when the statistic exceeds the
``1 - significance`` quantile of the law at non-centrality exactly 1.
"""

import enum
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .distributions import noncentral_chisq_quantile, noncentral_chisq_sf
from .exceptions import DataError, IncompatibleSummaries, SingularSiteCovariance, ZeroNoise
from .regress import COND_CAP, SiteDataset, SiteSummary, _as_matrix, ols_fit, site_summary

EIG_FLOOR = 1e-12
BOUNDARY_NCP = 1.0


class Decision(str, enum.Enum):
    ACCEPT = "AcceptPooling"
    REJECT = "RejectPooling"

    def __str__(self):
        return self.value


@dataclass
class BiasVarianceBounds:
    bias_bound_factor: float
    var_reduction: float


@dataclass
class PoolingTestResult:
    statistic: float
    df: int
    threshold: float
    p_value: float
    condition_value_hat: float
    decision: Decision
    tau: np.ndarray
    diagnostics: BiasVarianceBounds
    significance: float
    used_conditional: bool = False
    reference: str = None
    site_ids: list = field(default_factory=list)
    support: list = None

    @property
    def accepted(self):
        return self.decision is Decision.ACCEPT

    def to_dict(self):
        d = asdict(self)
        d["decision"] = self.decision.value
        d["tau"] = [float(t) for t in self.tau]
        return d


def check_summaries(summaries):
    summaries = list(summaries)
    if len(summaries) < 2:
        raise IncompatibleSummaries("at least two site summaries are required")
    ref = summaries[0]
    for s in summaries[1:]:
        if s.p != ref.p:
            raise IncompatibleSummaries(
                f"site {s.site_id!r} has p={s.p}, reference {ref.site_id!r} has p={ref.p}"
            )
        if s.feature_names != ref.feature_names:
            raise IncompatibleSummaries(
                f"feature_names of site {s.site_id!r} differ from reference {ref.site_id!r}"
            )
    for s in summaries:
        if s.Sigma_hat.shape != (s.p, s.p):
            raise IncompatibleSummaries(f"site {s.site_id!r}: Sigma_hat is not {s.p}x{s.p}")
    return summaries


def rereference(summaries, reference):
    """Move the site named ``reference`` (or at index ``reference``) to the front."""
    summaries = list(summaries)
    if isinstance(reference, (int, np.integer)):
        idx = int(reference)
    else:
        ids = [s.site_id for s in summaries]
        if reference not in ids:
            raise DataError(f"unknown reference site {reference!r}; have {ids}")
        idx = ids.index(reference)
    return [summaries[idx]] + summaries[:idx] + summaries[idx + 1:]


def estimate_tau(summaries):
    """Variance-optimal site weights ``tau_i = sigma_1 / sigma_i``."""
    sig = np.array([s.sigma_hat for s in summaries], dtype=float)
    if len(sig) < 2:
        raise IncompatibleSummaries("at least two site summaries are required")
    if np.any(sig <= 0):
        bad = [s.site_id for s in summaries if s.sigma_hat <= 0]
        raise ZeroNoise(f"zero residual noise at sites {bad}")
    return sig[0] / sig


def _normalize_tau(tau, k):
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if tau.shape == (k - 1,):
        tau = np.concatenate([[1.0], tau])
    if tau.shape != (k,):
        raise DataError(f"tau must have length {k} or {k - 1}, got {tau.shape[0]}")
    if tau[0] != 1.0:
        raise DataError("tau for the reference site must be 1")
    if np.any(tau < 0):
        raise DataError("tau must be nonnegative")
    return tau


def _spd_inverse(A, what):
    A = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(A)
    if w[-1] <= 0 or w[0] <= EIG_FLOOR * w[-1]:
        raise SingularSiteCovariance(f"{what} is singular or not positive definite")
    return (V / w) @ V.T


def build_G(summaries, tau):
    """Covariance (in units of sigma_1^2) of the stacked coefficient differences."""
    summaries = check_summaries(summaries)
    k, p = len(summaries), summaries[0].p
    tau = _normalize_tau(tau, k)
    if np.any(tau[1:] == 0):
        raise SingularSiteCovariance("tau_i = 0 gives a site infinite variance")
    A1 = _spd_inverse(summaries[0].n * summaries[0].Sigma_hat, f"n*Sigma of site {summaries[0].site_id!r}")
    G = np.tile(A1, (k - 1, k - 1))
    for i, s in enumerate(summaries[1:]):
        Ai = _spd_inverse(s.n * tau[i + 1] ** 2 * s.Sigma_hat, f"n*Sigma of site {s.site_id!r}")
        G[i * p:(i + 1) * p, i * p:(i + 1) * p] += Ai
    return 0.5 * (G + G.T)


def inverse_sqrt(G):
    """Symmetric inverse square root by eigendecomposition."""
    w, V = np.linalg.eigh(G)
    if w[-1] <= 0 or w[0] < EIG_FLOOR * w[-1]:
        raise SingularSiteCovariance("G is singular to working precision")
    return (V / np.sqrt(w)) @ V.T


def stacked_differences(summaries):
    b1 = summaries[0].beta_hat
    return np.concatenate([s.beta_hat - b1 for s in summaries[1:]])


def bias_variance_diagnostics(summaries, tau):
    """Bias-increase factor and variance reduction from pooling.

    ``bias_bound_factor`` multiplies ``||G^-1/2 dbeta||^2`` in the bound on the
    squared bias; ``var_reduction`` is the exact drop in total variance of
    beta-hat.  Both use nuclear norms.
    """
    summaries = check_summaries(summaries)
    k = len(summaries)
    tau = _normalize_tau(tau, k)
    s1 = summaries[0]
    A = s1.n * s1.Sigma_hat
    A_inv = _spd_inverse(A, f"n*Sigma of site {s1.site_id!r}")
    S2 = sum(s.n * t ** 2 * s.Sigma_hat for s, t in zip(summaries[1:], tau[1:]))
    S1k_inv = _spd_inverse(A + S2, "pooled n*Sigma")
    bias_mat = S1k_inv @ S1k_inv @ (S2 @ A_inv @ S2 + S2)
    var_mat = A_inv - S1k_inv
    nuc = lambda M: float(np.linalg.svd(M, compute_uv=False).sum())  # noqa: E731
    return BiasVarianceBounds(
        bias_bound_factor=nuc(bias_mat),
        var_reduction=s1.sigma_hat ** 2 * nuc(0.5 * (var_mat + var_mat.T)),
    )


def _result(statistic, df, significance, tau, summaries, diagnostics):
    threshold = noncentral_chisq_quantile(1.0 - significance, df, BOUNDARY_NCP)
    accept = statistic <= threshold
    return PoolingTestResult(
        statistic=float(statistic),
        df=int(df),
        threshold=threshold,
        p_value=noncentral_chisq_sf(statistic, df, BOUNDARY_NCP),
        condition_value_hat=float(np.sqrt(statistic)),
        decision=Decision.ACCEPT if accept else Decision.REJECT,
        tau=np.asarray(tau, dtype=float),
        diagnostics=diagnostics,
        significance=float(significance),
        used_conditional=all(s.used_conditional for s in summaries),
        reference=summaries[0].site_id,
        site_ids=[s.site_id for s in summaries],
    )


def _check_significance(significance):
    if not 0.0 < significance < 1.0:
        raise DataError(f"significance must lie in (0, 1), got {significance}")


def condition_value(summaries, tau=None):
    """Estimated condition value ``||G^-1/2 dbeta_hat|| / sigma_hat_1``.

    Pooling is guaranteed to lower the reference site's MSE when the true
    condition value is at most 1.
    """
    summaries = check_summaries(summaries)
    tau = estimate_tau(summaries) if tau is None else _normalize_tau(tau, len(summaries))
    if summaries[0].sigma_hat <= 0:
        raise ZeroNoise(f"zero residual noise at reference site {summaries[0].site_id!r}")
    z = inverse_sqrt(build_G(summaries, tau)) @ stacked_differences(summaries)
    return float(np.linalg.norm(z)) / summaries[0].sigma_hat


def pooling_test(summaries, significance=0.05, tau=None):
    """Test whether pooling all sites improves estimation at the first site.

    Parameters
    ----------
    summaries : list of SiteSummary
        Reference site first.
    significance : float
    tau : array-like, optional
        Site weights; defaults to :func:`estimate_tau`.

    Returns
    -------
    PoolingTestResult
    """
    _check_significance(significance)
    summaries = check_summaries(summaries)
    k, p = len(summaries), summaries[0].p
    tau = estimate_tau(summaries) if tau is None else _normalize_tau(tau, k)
    if summaries[0].sigma_hat <= 0:
        raise ZeroNoise(f"zero residual noise at reference site {summaries[0].site_id!r}")
    G = build_G(summaries, tau)
    z = inverse_sqrt(G) @ stacked_differences(summaries) / summaries[0].sigma_hat
    statistic = float(z @ z)
    return _result(statistic, (k - 1) * p, significance, tau, summaries,
                   bias_variance_diagnostics(summaries, tau))


def two_site_test(s1, s2, significance=0.05, tau2=None):
    """Two-site form of the test: a Mahalanobis distance between the estimates."""
    _check_significance(significance)
    summaries = check_summaries([s1, s2])
    tau = estimate_tau(summaries) if tau2 is None else _normalize_tau([tau2], 2)
    if tau[1] == 0:
        raise SingularSiteCovariance("tau_2 = 0 gives site 2 infinite variance")
    M = (np.linalg.inv(s1.n * s1.Sigma_hat)
         + np.linalg.inv(s2.n * tau[1] ** 2 * s2.Sigma_hat))
    d = s2.beta_hat - s1.beta_hat
    try:
        statistic = float(d @ np.linalg.solve(M, d)) / s1.sigma_hat ** 2
    except np.linalg.LinAlgError as exc:
        raise SingularSiteCovariance(str(exc)) from exc
    return _result(statistic, s1.p, significance, tau, summaries,
                   bias_variance_diagnostics(summaries, tau))


def subset_pooling_test(datasets, significance=0.05, tau=None, cond_cap=COND_CAP):
    """Pooling test for the shared coefficients when each site has confounds Z."""
    for d in datasets:
        if d.Z is None:
            raise DataError(f"site {d.site_id!r} has no confounds; use pooling_test")
    summaries = [site_summary(ols_fit(d, cond_cap), d) for d in datasets]
    return pooling_test(summaries, significance, tau)


def pooled_ols(datasets, tau=None):
    """Weighted pooled least squares with shared beta.

    Minimises ``sum_i tau_i^2 ||y_i - X_i beta - Z_i gamma_i||^2`` with a
    separate ``gamma_i`` per site when confounds are present.  Returns
    ``(beta, gammas)``; ``gammas`` is None without confounds.
    """
    k = len(datasets)
    tau = np.ones(k) if tau is None else _normalize_tau(tau, k)
    confounded = datasets[0].Z is not None
    H = 0.0
    g = 0.0
    parts = []
    for d, t in zip(datasets, tau):
        X, y = d.X, d.y
        if confounded:
            Qz, _ = np.linalg.qr(d.Z)
            X = X - Qz @ (Qz.T @ X)
            y = y - Qz @ (Qz.T @ y)
        parts.append((d, X, y))
        H = H + t ** 2 * (X.T @ X)
        g = g + t ** 2 * (X.T @ y)
    beta = np.linalg.solve(H, g)
    if not confounded:
        return beta, None
    gammas = [np.linalg.lstsq(d.Z, d.y - d.X @ beta, rcond=None)[0] for d in datasets]
    return beta, gammas


def split_sites(X, y, sites, Z=None, feature_names=None):
    """Split stacked rows into per-site datasets, in order of first appearance."""
    X = _as_matrix(X, "X")
    y = np.asarray(y, dtype=float).ravel()
    sites = np.asarray(sites)
    if not (X.shape[0] == y.shape[0] == sites.shape[0]):
        raise DataError("X, y and sites must have the same number of rows")
    if Z is not None:
        Z = _as_matrix(Z, "Z")
    _, first = np.unique(sites, return_index=True)
    labels = sites[np.sort(first)]
    out = []
    for lab in labels:
        m = sites == lab
        out.append(SiteDataset(X=X[m], y=y[m], Z=None if Z is None else Z[m],
                               site_id=str(lab), feature_names=feature_names))
    return out


class PooledRegression(RegressorMixin, BaseEstimator):
    """Pool sites for a shared-coefficient regression when the test allows it.

    ``fit`` runs the pooling test with the reference site first and sets
    ``coef_`` to the pooled estimate if pooling is accepted, otherwise to the
    reference site's own OLS estimate.

    Parameters
    ----------
    significance : float, default 0.05
    tau : array-like or None
        Fixed site weights; by default ``sigma_1 / sigma_i`` from the data.
    reference : site label or None
        Reference site; defaults to the first site appearing in ``sites``.
    """

    def __init__(self, significance=0.05, tau=None, reference=None, cond_cap=COND_CAP):
        self.significance = significance
        self.tau = tau
        self.reference = reference
        self.cond_cap = cond_cap

    def fit(self, X, y, sites, Z=None):
        datasets = split_sites(X, y, sites, Z)
        if self.reference is not None:
            datasets = rereference(datasets, str(self.reference))
        fits = [ols_fit(d, self.cond_cap) for d in datasets]
        summaries = [site_summary(f, d) for f, d in zip(fits, datasets)]
        self.test_ = pooling_test(summaries, self.significance, self.tau)
        self.tau_ = self.test_.tau
        self.pooled_coef_, gammas = pooled_ols(datasets, self.tau_)
        self.site_coef_ = np.vstack([f.beta_hat for f in fits])
        self.sites_ = [d.site_id for d in datasets]
        self.coef_ = self.pooled_coef_ if self.test_.accepted else self.site_coef_[0]
        self.n_features_in_ = datasets[0].p
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return _as_matrix(X, "X") @ self.coef_
