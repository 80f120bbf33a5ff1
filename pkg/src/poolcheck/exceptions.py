"""Error types.

Errors fall into two families that the CLI maps to distinct exit codes:
``DataError`` (bad or inconsistent input, exit 3) and ``NumericalError``
(an ill-posed or non-convergent computation, exit 4).
"""


class PoolcheckError(Exception):
    """Base class for all library errors."""


class DataError(PoolcheckError, ValueError):
    pass


class NumericalError(PoolcheckError, ArithmeticError):
    pass


class ParseError(DataError):
    pass


class SchemaError(DataError):
    pass


class ChecksumMismatch(DataError):
    pass


class SchemaVersionUnsupported(DataError):
    pass


class InvalidSummary(DataError):
    pass


class IncompatibleSummaries(DataError):
    pass


class EmptyActiveSets(DataError):
    pass


class SupportTooLarge(DataError):
    pass


class RankDeficient(NumericalError):
    pass


class Underdetermined(NumericalError):
    """n <= p + q; use the sparse multi-site Lasso instead."""


class DegenerateDF(Underdetermined):
    """n == p + q: the fit interpolates and the noise level is undefined."""


class SingularConfoundCovariance(NumericalError):
    pass


class SingularSiteCovariance(NumericalError):
    pass


class ZeroNoise(NumericalError):
    pass


class NonConvergent(NumericalError):
    pass


class DegenerateSplit(NumericalError):
    pass
