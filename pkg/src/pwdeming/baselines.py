"""Comparator estimators: Passing-Bablok, Linnet's constant-CV Deming and constant-CV ML."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import kernels
from .data import MCDataset, data_scale
from .deming_known import MAX_ITER, TOL_AB, fit_known
from .errors import ConvergenceError, DataError, DegenerateFitError
from .profiles import PrecisionProfile, scale

PASSING_BABLOK = "PassingBablok"
LINNET_CCV = "LinnetCCV"
ML_CONSTANT_CV = "MLConstantCV"


@dataclass(frozen=True)
class BaselineFit:
    method: str
    alpha: float
    beta: float
    ci_alpha: tuple[float, float] | None = None
    ci_beta: tuple[float, float] | None = None
    lam: float | None = None
    level: float | None = None
    iterations: int = 0


def _check_positive_lambda(lam: float) -> float:
    lam = float(lam)
    if not (math.isfinite(lam) and lam > 0):
        raise DataError(f"lambda must be positive and finite, got {lam}")
    return lam


def _check_positive_data(data: MCDataset) -> None:
    if np.any(data.x <= 0) or np.any(data.y <= 0):
        raise DataError("constant-CV fits need all x and y positive")


def _shifted_median(slopes: np.ndarray, shift: int) -> float:
    m = slopes.size
    if m % 2:
        return float(slopes[(m - 1) // 2 + shift])
    # ties in the middle are resolved by averaging the two central order statistics
    lo, hi = slopes[m // 2 - 1 + shift], slopes[m // 2 + shift]
    return float(0.5 * (lo + hi))


def passing_bablok(data: MCDataset, level: float = 0.95) -> BaselineFit:
    """Passing-Bablok slope, intercept and rank-based confidence intervals.

    Pairwise slopes equal to -1 and 0/0 pairs are dropped; pairs with equal x
    count as infinite slopes.  The median is shifted by the number of slopes
    below -1 so that the estimator is unbiased for positively related methods.
    """
    if data.n < 10:
        raise DataError(f"Passing-Bablok needs n >= 10, got {data.n}")
    if not 0 < level < 1:
        raise DataError("level must lie in (0, 1)")
    slopes = np.sort(kernels.pairwise_slopes(data.x, data.y))
    m = slopes.size
    if m < 2:
        raise DegenerateFitError("fewer than two usable pairwise slopes")
    shift = int(np.count_nonzero(slopes < -1))
    # the shifted median index must stay inside the sorted slopes
    shift = min(shift, (m - 1) // 2)
    beta = _shifted_median(slopes, shift)
    if not math.isfinite(beta) or beta == 0:
        raise DegenerateFitError(f"Passing-Bablok slope is {beta}")
    alpha = float(np.median(data.y - beta * data.x))

    n = data.n
    z = stats.norm.ppf(0.5 + level / 2)
    c = z * math.sqrt(n * (n - 1) * (2 * n + 5) / 18)
    m1 = int(round((m - c) / 2))
    m2 = m - m1 + 1
    lo_i = min(max(m1 + shift, 1), m) - 1
    hi_i = min(max(m2 + shift, 1), m) - 1
    b_lo, b_hi = float(slopes[lo_i]), float(slopes[hi_i])
    ci_alpha = (float(np.median(data.y - b_hi * data.x)), float(np.median(data.y - b_lo * data.x)))
    return BaselineFit(PASSING_BABLOK, alpha, beta, ci_alpha, (b_lo, b_hi), level=level)


def weighted_deming(x, y, w, lam: float) -> tuple[float, float]:
    """Closed-form Deming line minimizing sum w*[(x-mu)^2 + lam*(y-a-b*mu)^2]."""
    x, y, w = (np.asarray(v, dtype=float) for v in (x, y, w))
    sw = w.sum()
    xm, ym = (w @ x) / sw, (w @ y) / sw
    dx, dy = x - xm, y - ym
    u, q, p = w @ (dx * dx), w @ (dy * dy), w @ (dx * dy)
    if p == 0:
        raise DegenerateFitError("zero weighted covariance: Deming slope undefined")
    diff = lam * q - u
    b = (diff + math.sqrt(diff * diff + 4 * lam * p * p)) / (2 * lam * p)
    return float(ym - b * xm), float(b)


def linnet_ccv(data: MCDataset, lam: float = 1.0, *, maxit: int = MAX_ITER,
               tol_ab: float = TOL_AB) -> BaselineFit:
    """Linnet's iteratively weighted Deming for constant CV on both axes.

    ``lam`` is the ratio of the X variance to the Y variance.  Each pass
    projects every point onto the current line, takes the consensus mean
    ``c = (x_hat + y_hat)/2`` of the projected pair, and refits the closed-form
    Deming line with weights ``1/c^2``.  Iteration starts from the identity line.
    """
    lam = _check_positive_lambda(lam)
    _check_positive_data(data)
    x, y = data.x, data.y
    sc = data_scale(x)
    a, b = 0.0, 1.0
    for it in range(1, maxit + 1):
        d = y - a - b * x
        den = 1 + lam * b * b
        x_hat = x + lam * b * d / den
        y_hat = y - d / den
        c = 0.5 * (x_hat + y_hat)
        if np.any(c <= 0):
            raise DegenerateFitError("non-positive consensus mean in the Linnet iteration")
        a_new, b_new = weighted_deming(x, y, 1.0 / (c * c), lam)
        step = max(abs(a_new - a) / sc, abs(b_new - b))
        a, b = a_new, b_new
        if step < tol_ab:
            if b == 0:
                raise DegenerateFitError("fitted slope is exactly zero")
            return BaselineFit(LINNET_CCV, a, b, lam=lam, iterations=it)
    raise ConvergenceError(f"Linnet iteration did not converge in {maxit} passes",
                           last=BaselineFit(LINNET_CCV, a, b, lam=lam, iterations=maxit))


def ml_constant_cv(data: MCDataset, lam: float = 1.0) -> BaselineFit:
    """Maximum-likelihood constant-CV fit: X variance mu^2, Y variance (a+b*mu)^2/lam."""
    lam = _check_positive_lambda(lam)
    _check_positive_data(data)
    unit = PrecisionProfile.constant_cv(1.0)
    fit = fit_known(data, unit, scale(unit, 1.0 / lam))
    return BaselineFit(ML_CONSTANT_CV, fit.alpha, fit.beta, lam=lam, iterations=fit.iterations)
