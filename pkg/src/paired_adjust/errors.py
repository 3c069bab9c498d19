"""Exception taxonomy shared across the package.

Every error raised by the library derives from :class:`PairedAdjustError`
so callers (notably the CLI) can map failures onto a stable exit-code
contract: 2 for parse/validation problems, 3 for rank or degeneracy
failures, 4 for configuration mistakes, 5 for oversized enumerations.
"""

from __future__ import annotations


class PairedAdjustError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class DataError(PairedAdjustError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class MalformedRow(DataError):
    """A CSV row could not be parsed (wrong arity, bad number, missing value)."""


class PairViolation(DataError):
    """A pair does not have exactly two units with one treated and one control."""


class DimensionMismatch(DataError):
    """Covariate vectors do not share a common dimension."""


class TooFewPairs(DataError):
    """Not enough pairs for the requested design or estimator."""


class NonFiniteTransform(DataError):
    """A covariate transform produced NaN or infinity."""


class LengthMismatch(DataError):
    """An assignment vector does not match the number of pairs."""


class NumericalError(PairedAdjustError):
    """Rank deficiency or degeneracy detected during estimation."""

    exit_code = 3


class RankDeficient(NumericalError):
    """Design matrix is numerically rank deficient."""


class DegenerateDenominator(NumericalError):
    """The intercept-variance denominator is numerically zero."""


class LeverageOne(NumericalError):
    """A leverage value reached one, so HC weights are undefined."""


class ConfigError(PairedAdjustError):
    """Invalid run configuration."""

    exit_code = 4


class BadAlpha(ConfigError):
    """Confidence level outside the accepted range."""


class WrongEstimator(ConfigError):
    """An operation was applied to a report of the wrong estimator."""


class TooLarge(PairedAdjustError):
    """Exact enumeration was requested for more pairs than the cap allows."""

    exit_code = 5
