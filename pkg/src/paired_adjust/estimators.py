"""Point estimators and confidence intervals for paired designs.

Three estimators of the average treatment effect over the n pairs:

* ``C``  - the plain mean of the treated-minus-control differences,
* ``R1`` - the intercept of a regression of those differences on the
  sign-flipped covariate differences (vd),
* ``R2`` - the intercept when the centered pair-average block (m) is
  added as well.

Each comes with a variance estimate; the classical flavors use the
textbook divisors n-1, n-K_D-1, n-K_D-K_M-1. The R2 variance targets
the in-sample effect; :func:`superpop_correct` adds the slope-times-
covariance term that makes it valid for the population effect when the
pairs are themselves draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadAlpha, TooFewPairs, WrongEstimator
from .experiment_model import DesignMatrices
from .ols_core import (
    FitResult,
    intercept_variance_classical,
    intercept_variance_hc,
    least_squares,
)

_FLAVORS = ("classical", "HC2", "HC3")


@dataclass(frozen=True)
class EstimateReport:
    """One estimator's output: point estimate, variance, slope blocks."""

    estimator: str  # "C", "R1" or "R2"
    tau_hat: float
    s2: float
    flavor: str
    dof: int
    n: int
    beta_d: tuple[float, ...] = ()
    beta_m: tuple[float, ...] = ()

    @property
    def se(self) -> float:
        return math.sqrt(self.s2)

    def to_report_dict(self, target: str, alpha: float) -> dict:
        """Render the JSON report entry used by the command line tools."""
        lo, hi = confidence_interval(self, alpha)
        return {
            "estimator": self.estimator,
            "target": target,
            "tau_hat": self.tau_hat,
            "s2": self.s2,
            "flavor": self.flavor,
            "dof": self.dof,
            "ci": [lo, hi],
            "alpha": alpha,
            "beta_D": list(self.beta_d),
            "beta_M": list(self.beta_m),
        }


def estimate_classical(y: np.ndarray) -> EstimateReport:
    """Mean of the pair differences with its classical variance.

    S^2 = sum (y_i - mean)^2 / (n (n-1)), which never underestimates
    the assignment variance of the mean in expectation.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if n < 2:
        raise TooFewPairs(f"need at least 2 pairs, got {n}")
    tau = float(y.mean())
    s2 = float(((y - tau) ** 2).sum()) / (n * (n - 1))
    return EstimateReport(
        estimator="C", tau_hat=tau, s2=s2, flavor="classical", dof=n - 1, n=n
    )


def _variance(fit: FitResult, flavor: str) -> float:
    if flavor == "classical":
        return intercept_variance_classical(fit)
    return intercept_variance_hc(fit, flavor)


def _check_flavor(flavor: str) -> None:
    if flavor not in _FLAVORS:
        raise ValueError(f"variance flavor must be one of {_FLAVORS}, got {flavor!r}")


def estimate_r1(dm: DesignMatrices, flavor: str = "classical") -> EstimateReport:
    """Intercept of the regression of y on vd."""
    _check_flavor(flavor)
    fit = least_squares(dm.vd, dm.y, labels=tuple(f"vd:{l}" for l in dm.d_labels))
    return EstimateReport(
        estimator="R1",
        tau_hat=float(fit.coefficients[0]),
        s2=_variance(fit, flavor),
        flavor=flavor,
        dof=fit.dof,
        n=dm.n,
        beta_d=tuple(float(b) for b in fit.coefficients[1:]),
    )


def estimate_r2(dm: DesignMatrices, flavor: str = "classical") -> EstimateReport:
    """Intercept of the regression of y on vd and m.

    With a zero-width m block this coincides with estimate_r1.
    """
    _check_flavor(flavor)
    x = np.hstack([dm.vd, dm.m])
    labels = tuple(f"vd:{l}" for l in dm.d_labels) + tuple(
        f"m:{l}" for l in dm.m_labels
    )
    fit = least_squares(x, dm.y, labels=labels)
    k_d = dm.k_d
    return EstimateReport(
        estimator="R2",
        tau_hat=float(fit.coefficients[0]),
        s2=_variance(fit, flavor),
        flavor=flavor,
        dof=fit.dof,
        n=dm.n,
        beta_d=tuple(float(b) for b in fit.coefficients[1 : 1 + k_d]),
        beta_m=tuple(float(b) for b in fit.coefficients[1 + k_d :]),
    )


def superpop_correct(r2: EstimateReport, dm: DesignMatrices) -> EstimateReport:
    """Widen an R2 variance so it covers the population-level effect.

    Adds beta_m' Sigma_m beta_m / n with Sigma_m = m'm/(n-1). The
    correction is a positive-semidefinite quadratic form, so the
    variance never shrinks. The point estimate is unchanged.
    """
    if r2.estimator != "R2":
        raise WrongEstimator(
            f"superpopulation correction applies to R2 reports, got {r2.estimator}"
        )
    if not r2.beta_m or dm.k_m == 0:
        raise WrongEstimator("superpopulation correction needs at least one m column")
    if len(r2.beta_m) != dm.k_m or r2.n != dm.n:
        raise WrongEstimator("report and design matrices do not match")
    beta_m = np.asarray(r2.beta_m)
    sigma_m = dm.m.T @ dm.m / (dm.n - 1)
    correction = float(beta_m @ sigma_m @ beta_m) / dm.n
    return EstimateReport(
        estimator="R2",
        tau_hat=r2.tau_hat,
        s2=r2.s2 + correction,
        flavor="superpop-corrected",
        dof=r2.dof,
        n=r2.n,
        beta_d=r2.beta_d,
        beta_m=r2.beta_m,
    )


def confidence_interval(report: EstimateReport, alpha: float) -> tuple[float, float]:
    """Symmetric normal-quantile interval around the point estimate.

    alpha is the two-sided miscoverage level in (0, 1]; alpha = 1 gives
    the degenerate interval at the point estimate, as does a zero
    variance.
    """
    if not isinstance(alpha, (int, float)) or math.isnan(alpha) or not 0 < alpha <= 1:
        raise BadAlpha(f"alpha must be in (0, 1], got {alpha!r}")
    half = normal_quantile(1.0 - alpha / 2.0) * report.se
    return (report.tau_hat - half, report.tau_hat + half)


# Coefficients of the PPND16 rational approximations (Wichura's
# algorithm AS 241), giving the standard normal quantile to well below
# 1e-9 absolute error over (0, 1).
_A = (
    3.3871328727963666080e0,
    1.3314166789178437745e2,
    1.9715909503065514427e3,
    1.3731693765509461125e4,
    4.5921953931549871457e4,
    6.7265770927008700853e4,
    3.3430575583588128105e4,
    2.5090809287301226727e3,
)
_B = (
    1.0,
    4.2313330701600911252e1,
    6.8718700749205790830e2,
    5.3941960214247511077e3,
    2.1213794301586595867e4,
    3.9307895800092710610e4,
    2.8729085735721942674e4,
    5.2264952788528545610e3,
)
_C = (
    1.42343711074968357734e0,
    4.63033784615654529590e0,
    5.76949722146069140550e0,
    3.64784832476320460504e0,
    1.27045825245236838258e0,
    2.41780725177450611770e-1,
    2.27238449892691845833e-2,
    7.74545014278341407640e-4,
)
_D = (
    1.0,
    2.05319162663775882187e0,
    1.67638483018380384940e0,
    6.89767334985100004550e-1,
    1.48103976427480074590e-1,
    1.51986665636164571966e-2,
    5.47593808499534494600e-4,
    1.05075007164441684324e-9,
)
_E = (
    6.65790464350110377720e0,
    5.46378491116411436990e0,
    1.78482653991729133580e0,
    2.96560571828504891230e-1,
    2.65321895265761230930e-2,
    1.24266094738807843860e-3,
    2.71155556874348757815e-5,
    2.01033439929228813265e-7,
)
_F = (
    1.0,
    5.99832206555887937690e-1,
    1.36929880922735805310e-1,
    1.48753612908506148525e-2,
    7.86869131145613259100e-4,
    1.84631831751005468180e-5,
    1.42151175831644588870e-7,
    2.04426310338993978564e-15,
)


def _ratpoly(coefs_num: tuple, coefs_den: tuple, r: float) -> float:
    num = coefs_num[7]
    for c in reversed(coefs_num[:7]):
        num = num * r + c
    den = coefs_den[7]
    for c in reversed(coefs_den[:7]):
        den = den * r + c
    return num / den


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF for p in (0, 1)."""
    if not 0.0 < p < 1.0:
        raise BadAlpha(f"quantile level must be in (0, 1), got {p!r}")
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _ratpoly(_A, _B, r)
    r = p if q < 0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        val = _ratpoly(_C, _D, r - 1.6)
    else:
        val = _ratpoly(_E, _F, r - 5.0)
    return -val if q < 0 else val
