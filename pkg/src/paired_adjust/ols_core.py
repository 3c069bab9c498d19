"""Least squares with stable intercept-variance extraction.

Everything here works through orthogonal factorizations and auxiliary
regressions; no n-by-n hat matrix is ever formed. The two variance
routines return the intercept entry of the usual classical and
heteroskedasticity-consistent covariance estimators, which is all the
pair-level estimators need.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import DegenerateDenominator, LeverageOne, RankDeficient
from .experiment_model import RANK_RTOL

_HC_VARIANTS = ("HC2", "HC3")


@dataclass
class FitResult:
    """Outcome of a least-squares fit.

    ``coefficients`` puts the intercept first when the fit had one.
    ``design`` is the matrix actually factored (including the intercept
    column), kept so leverages and variance extraction can run later
    without refitting.
    """

    coefficients: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray
    sse: float
    dof: int
    labels: tuple[str, ...]
    with_intercept: bool
    design: np.ndarray
    _q: Optional[np.ndarray] = field(default=None, repr=False)
    _r: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    def _qr(self) -> tuple[np.ndarray, np.ndarray]:
        if self._q is None:
            q, r = np.linalg.qr(self.design, mode="reduced")
            self._q, self._r = q, r
        return self._q, self._r  # type: ignore[return-value]

    @property
    def leverages(self) -> np.ndarray:
        """Diagonal of the hat matrix, via row norms of the thin Q."""
        q, _ = self._qr()
        return np.einsum("ij,ij->i", q, q)


def least_squares(
    x: np.ndarray,
    y: np.ndarray,
    with_intercept: bool = True,
    labels: tuple[str, ...] | None = None,
) -> FitResult:
    """Fit y on x by pivoted orthogonal factorization.

    ``x`` may have zero columns, in which case (with an intercept) the
    fit is just the mean of y. Raises RankDeficient when the design,
    including the intercept column, is numerically rank deficient at
    the shared RANK_RTOL tolerance.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if x.shape[0] != n:
        raise ValueError(f"design has {x.shape[0]} rows but y has {n}")
    design = np.column_stack([np.ones(n), x]) if with_intercept else x
    cols = design.shape[1]
    if labels is None:
        labels = tuple(f"x{j}" for j in range(1, x.shape[1] + 1))
    if with_intercept:
        labels = ("intercept",) + tuple(labels)
    if n < cols:
        raise RankDeficient(f"{cols} columns but only {n} rows")

    coef, _, rank, _ = scipy.linalg.lstsq(
        design, y, cond=RANK_RTOL, lapack_driver="gelsy"
    )
    if rank < cols:
        raise RankDeficient(
            f"design rank {rank} < {cols} (tolerance {RANK_RTOL:g})"
        )
    fitted = design @ coef
    residuals = y - fitted
    return FitResult(
        coefficients=coef,
        residuals=residuals,
        fitted=fitted,
        sse=float(residuals @ residuals),
        dof=n - cols,
        labels=tuple(labels),
        with_intercept=with_intercept,
        design=design,
    )


def intercept_variance_classical(fit: FitResult) -> float:
    """Classical variance of the fitted intercept.

    Returns SSE/dof * [e'(I - H)e]^{-1} where H projects onto the
    non-intercept columns. The denominator comes from an auxiliary
    regression of the all-ones vector on those columns: e'(I - H)e =
    n - ||He||^2, so the hat matrix itself never appears. With no
    non-intercept columns this is just SSE/(dof * n).
    """
    if not fit.with_intercept:
        raise ValueError("fit has no intercept")
    if fit.dof < 1:
        raise DegenerateDenominator("no residual degrees of freedom")
    n = fit.n
    block = fit.design[:, 1:]
    if block.shape[1]:
        aux = least_squares(block, np.ones(n), with_intercept=False)
        denom = n - float(aux.fitted @ aux.fitted)
    else:
        denom = float(n)
    if denom <= 1e-10 * n:
        raise DegenerateDenominator(
            f"ones vector is numerically inside the regressor span "
            f"(e'(I-H)e = {denom:.3e})"
        )
    return fit.sse / fit.dof / denom


def intercept_variance_hc(fit: FitResult, variant: str) -> float:
    """Heteroskedasticity-consistent variance of the fitted intercept.

    Implements the HC2 and HC3 sandwiches: the (1,1) entry of
    (X'X)^{-1} X' diag(w) X (X'X)^{-1} with w_i = e_i^2/(1-h_i) for HC2
    and e_i^2/(1-h_i)^2 for HC3. Using the thin QR of X, that entry is
    sum_i u_i^2 w_i where u = Q R^{-T} e_1.
    """
    if variant not in _HC_VARIANTS:
        raise ValueError(f"variant must be one of {_HC_VARIANTS}, got {variant!r}")
    if not fit.with_intercept:
        raise ValueError("fit has no intercept")
    h = fit.leverages
    if np.any(h >= 1.0 - 1e-12):
        worst = int(np.argmax(h))
        raise LeverageOne(f"leverage {h[worst]:.15f} at row {worst}")
    q, r = fit._qr()
    e1 = np.zeros(r.shape[0])
    e1[0] = 1.0
    u = q @ scipy.linalg.solve_triangular(r, e1, trans="T", lower=False)
    shrink = 1.0 - h if variant == "HC2" else (1.0 - h) ** 2
    w = fit.residuals**2 / shrink
    return float(u**2 @ w)
