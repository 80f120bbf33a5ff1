"""Decide whether pooling data across sites improves a site's regression estimate."""

from .distributions import NoncentralChiSquare, noncentral_chisq_cdf, noncentral_chisq_quantile
from .exceptions import DataError, NumericalError, PoolcheckError
from .inference import multi_sample_splitting, select_alpha, selected_pooling_test
from .io import load_csv, read_summary, write_csv, write_summary
from .pooltest import (
    Decision,
    PooledRegression,
    PoolingTestResult,
    bias_variance_diagnostics,
    pooling_test,
    subset_pooling_test,
    two_site_test,
)
from .regress import SiteDataset, SiteOLS, SiteSummary, ols_fit, summarize
from .smslasso import SparseMultiSiteLasso, SparseMultiSiteLassoCV, solution_path

__version__ = "0.1.0"

__all__ = [
    "Decision", "DataError", "NoncentralChiSquare", "NumericalError", "PoolcheckError",
    "PooledRegression", "PoolingTestResult", "SiteDataset", "SiteOLS", "SiteSummary",
    "SparseMultiSiteLasso", "SparseMultiSiteLassoCV", "bias_variance_diagnostics", "load_csv",
    "multi_sample_splitting", "noncentral_chisq_cdf", "noncentral_chisq_quantile", "ols_fit",
    "pooling_test", "read_summary", "select_alpha", "selected_pooling_test", "solution_path",
    "subset_pooling_test", "summarize", "two_site_test", "write_csv", "write_summary",
]
