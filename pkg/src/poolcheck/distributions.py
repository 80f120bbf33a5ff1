"""Central and non-central chi-square laws and Gaussian CDF.

The non-central chi-square CDF is evaluated as a Poisson mixture of central
chi-square CDFs,

    F(x; df, ncp) = sum_j Pois(j; ncp/2) * P(df/2 + j, x/2),

where ``P`` is the regularized lower incomplete gamma function.  The sum is
started at the Poisson mode and expanded in both directions so that large
non-centralities do not underflow.
"""

import math
from functools import lru_cache

import numpy as np
from scipy import optimize, special

from .exceptions import DataError, NonConvergent

SERIES_TOL = 1e-14
MAX_TERMS = 1_000_000


def gaussian_cdf(x):
    """Standard normal CDF."""
    return 0.5 * math.erfc(-float(x) / math.sqrt(2.0))


def chisq_cdf(x, df):
    """Central chi-square CDF with (real) ``df`` degrees of freedom."""
    if x <= 0:
        return 0.0
    return float(special.gammainc(0.5 * df, 0.5 * x))


def chisq_sf(x, df):
    if x <= 0:
        return 1.0
    return float(special.gammaincc(0.5 * df, 0.5 * x))


def _check(x, df, ncp):
    if not (not math.isnan(x) and math.isfinite(df) and math.isfinite(ncp)):
        raise DataError("non-finite argument to chi-square law")
    if df <= 0:
        raise DataError(f"df must be positive, got {df}")
    if ncp < 0:
        raise DataError(f"ncp must be nonnegative, got {ncp}")


def _log_poisson(j, mu):
    return -mu + j * math.log(mu) - math.lgamma(j + 1.0)


def _mixture(x, df, ncp, central, increasing_in_j):
    """Sum ``Pois(j; ncp/2) * central(x, df + 2j)`` to ``SERIES_TOL``.

    ``central`` is either the CDF (decreasing in j) or the survival function
    (increasing in j); the tail bounds use whichever monotonicity applies.
    """
    mu = 0.5 * ncp
    j0 = int(math.floor(mu))
    total = 0.0
    n_terms = 0

    # upward from the mode; Poisson weight ratio mu/(j+1) shrinks with j
    j = j0
    while True:
        w = math.exp(_log_poisson(j, mu))
        c = central(x, df + 2 * j)
        total += w * c
        n_terms += 1
        ratio = mu / (j + 2.0)
        w_next = w * mu / (j + 1.0)
        if ratio < 1.0:
            bound_c = 1.0 if increasing_in_j else c
            if w_next / (1.0 - ratio) * bound_c < SERIES_TOL:
                break
        if n_terms > MAX_TERMS:
            raise NonConvergent(f"series did not converge (df={df}, ncp={ncp})")
        j += 1

    # downward from the mode; weight ratio j/mu shrinks as j decreases
    j = j0 - 1
    while j >= 0:
        w = math.exp(_log_poisson(j, mu))
        c = central(x, df + 2 * j)
        total += w * c
        n_terms += 1
        ratio = j / mu
        bound_c = c if increasing_in_j else 1.0
        if ratio < 1.0 and w * ratio / (1.0 - ratio) * bound_c < SERIES_TOL:
            break
        if n_terms > MAX_TERMS:
            raise NonConvergent(f"series did not converge (df={df}, ncp={ncp})")
        j -= 1
    return min(max(total, 0.0), 1.0)


def noncentral_chisq_cdf(x, df, ncp):
    """CDF of the non-central chi-square law.

    Parameters
    ----------
    x : float
        Evaluation point; negative values give 0.
    df : float
        Degrees of freedom, > 0 (need not be an integer).
    ncp : float
        Non-centrality, >= 0.

    Returns
    -------
    float
        ``P(X <= x)`` with absolute error below 1e-10.
    """
    x, df, ncp = float(x), float(df), float(ncp)
    _check(x, df, ncp)
    if x <= 0:
        return 0.0
    if x == math.inf:
        return 1.0
    if 0.5 * ncp == 0.0:
        return chisq_cdf(x, df)
    return _mixture(x, df, ncp, chisq_cdf, increasing_in_j=False)


def noncentral_chisq_sf(x, df, ncp):
    """Survival function ``1 - cdf``, summed directly to keep small tails accurate."""
    x, df, ncp = float(x), float(df), float(ncp)
    _check(x, df, ncp)
    if x <= 0:
        return 1.0
    if x == math.inf:
        return 0.0
    if 0.5 * ncp == 0.0:
        return chisq_sf(x, df)
    return _mixture(x, df, ncp, chisq_sf, increasing_in_j=True)


def noncentral_chisq_pdf(x, df, ncp):
    x, df, ncp = float(x), float(df), float(ncp)
    _check(x, df, ncp)
    if x < 0 or x == math.inf:
        return 0.0
    if 0.5 * ncp == 0.0:
        return float(np.exp(_log_chisq_pdf(x, df))) if x > 0 else _pdf_at_zero(df)

    def central_pdf(xx, d):
        return float(np.exp(_log_chisq_pdf(xx, d))) if xx > 0 else _pdf_at_zero(d)

    # pdf terms are not monotone in j, so sum to a fixed weight cut-off
    mu = 0.5 * ncp
    j0 = int(math.floor(mu))
    total = 0.0
    for direction in (1, -1):
        j = j0 if direction == 1 else j0 - 1
        while 0 <= j:
            w = math.exp(_log_poisson(j, mu))
            total += w * central_pdf(x, df + 2 * j)
            if w < SERIES_TOL and abs(j - j0) > 2:
                break
            j += direction
    return total


def _log_chisq_pdf(x, df):
    k = 0.5 * df
    return (k - 1.0) * math.log(x) - 0.5 * x - k * math.log(2.0) - math.lgamma(k)


def _pdf_at_zero(df):
    if df < 2:
        return math.inf
    return 0.5 if df == 2 else 0.0


@lru_cache(maxsize=4096)
def noncentral_chisq_quantile(prob, df, ncp):
    """Inverse of :func:`noncentral_chisq_cdf` in ``x``.

    The root is bracketed by stepping out from the mean in units of the
    standard deviation and then located with Brent's method, so that
    ``|cdf(result) - prob| <= 1e-9``.
    """
    prob, df, ncp = float(prob), float(df), float(ncp)
    if not 0.0 <= prob <= 1.0:
        raise DataError(f"prob must lie in [0, 1], got {prob}")
    _check(0.0, df, ncp)
    if prob == 0.0:
        return 0.0
    if prob == 1.0:
        return math.inf

    def f(x):
        return noncentral_chisq_cdf(x, df, ncp) - prob

    mean = df + ncp
    sd = math.sqrt(2.0 * (df + 2.0 * ncp))
    hi = mean + sd
    for _ in range(200):
        if f(hi) > 0:
            break
        hi = hi + 2.0 * sd + hi
    else:
        raise NonConvergent("could not bracket the quantile")
    root, info = optimize.brentq(f, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                                 maxiter=500, full_output=True, disp=False)
    if not info.converged:
        raise NonConvergent(f"quantile search failed: {info.flag}")
    return float(root)


class NoncentralChiSquare:
    """Frozen non-central chi-square law with ``df`` degrees of freedom."""

    def __init__(self, df, ncp=0.0):
        _check(0.0, float(df), float(ncp))
        self.df = float(df)
        self.ncp = float(ncp)

    def cdf(self, x):
        return noncentral_chisq_cdf(x, self.df, self.ncp)

    def sf(self, x):
        return noncentral_chisq_sf(x, self.df, self.ncp)

    def pdf(self, x):
        return noncentral_chisq_pdf(x, self.df, self.ncp)

    def ppf(self, prob):
        return noncentral_chisq_quantile(prob, self.df, self.ncp)

    def mean(self):
        return self.df + self.ncp

    def __repr__(self):
        return f"NoncentralChiSquare(df={self.df:g}, ncp={self.ncp:g})"
