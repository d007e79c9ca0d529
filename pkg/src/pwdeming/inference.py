"""Jackknife standard errors, confidence intervals and prediction at a decision level."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy import stats

from .data import MCDataset
from .deming_known import fit_known
from .deming_rl import fit_rl
from .errors import DataError, InferenceError, PWDError


@dataclass(frozen=True)
class InferenceResult:
    alpha: float
    beta: float
    se_alpha: float
    se_beta: float
    cov_ab: float
    ci_alpha: tuple[float, float]
    ci_beta: tuple[float, float]
    level: float
    method: str
    n: int
    # bias-corrected (pseudo-value mean) estimates, reported alongside the plug-in ones
    alpha_jack: float = math.nan
    beta_jack: float = math.nan
    loo: np.ndarray = field(default_factory=lambda: np.empty((0, 2)), repr=False)

    @property
    def z(self) -> float:
        return float(stats.norm.ppf(0.5 + self.level / 2))


@dataclass(frozen=True)
class Prediction:
    x0: float
    yhat: float
    se: float
    ci: tuple[float, float]


def known_fitter(gx, hy):
    f = partial(fit_known, gx=gx, hy=hy)
    f.method = "known"
    return f


def rl_fitter(lam: float = 1.0):
    f = partial(fit_rl, lam=lam)
    f.method = "rl"
    return f


def jackknife(data: MCDataset, fitter, level: float = 0.95, *, full_fit=None,
              n_jobs: int = 1) -> InferenceResult:
    """Delete-one jackknife of the intercept and slope.

    ``fitter(dataset, start=fit)`` must return an object with ``alpha`` and
    ``beta``; :func:`known_fitter` and :func:`rl_fitter` build suitable ones.
    Leave-one-out refits are warm-started from the full-data fit.  With
    ``n_jobs > 1`` they run on a thread pool; the result is identical to the
    sequential run because each refit is a pure function of its subset.
    """
    if data.n < 5:
        raise DataError(f"jackknife needs n >= 5, got {data.n}")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    full = full_fit if full_fit is not None else fitter(data)
    n = data.n

    def loo(i):
        try:
            f = fitter(data.drop(i), start=full)
        except PWDError as exc:
            raise InferenceError(
                f"leave-one-out refit without sample {int(data.index[i])} failed: {exc}",
                index=int(data.index[i])) from exc
        return f.alpha, f.beta

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            est = np.array(list(ex.map(loo, range(n))))
    else:
        est = np.array([loo(i) for i in range(n)])

    theta = np.array([full.alpha, full.beta])
    pseudo = n * theta - (n - 1) * est
    cov = np.cov(pseudo, rowvar=False, ddof=1) / n
    se_a = math.sqrt(max(cov[0, 0], 0.0))
    se_b = math.sqrt(max(cov[1, 1], 0.0))
    cov_ab = float(np.clip(cov[0, 1], -se_a * se_b, se_a * se_b))
    z = float(stats.norm.ppf(0.5 + level / 2))
    jack = pseudo.mean(axis=0)
    return InferenceResult(
        alpha=float(full.alpha), beta=float(full.beta),
        se_alpha=se_a, se_beta=se_b, cov_ab=cov_ab,
        ci_alpha=(full.alpha - z * se_a, full.alpha + z * se_a),
        ci_beta=(full.beta - z * se_b, full.beta + z * se_b),
        level=level, method=getattr(fitter, "method", getattr(full, "method", "custom")),
        n=n, alpha_jack=float(jack[0]), beta_jack=float(jack[1]), loo=est,
    )


def predict(inf: InferenceResult, x0: float) -> Prediction:
    """Fitted value at ``x0`` with its delta-method SE and normal CI."""
    x0 = float(x0)
    if not math.isfinite(x0):
        raise ValueError("x0 must be finite")
    yhat = inf.alpha + inf.beta * x0
    var = inf.se_alpha ** 2 + x0 ** 2 * inf.se_beta ** 2 + 2 * x0 * inf.cov_ab
    if var < 0:
        # |cov| <= se_a*se_b guarantees var >= 0 up to rounding
        if var < -1e-12 * (inf.se_alpha ** 2 + x0 ** 2 * inf.se_beta ** 2):
            raise InferenceError(f"negative prediction variance {var:.3g}: inconsistent covariance")
        var = 0.0
    se = math.sqrt(var)
    z = inf.z
    return Prediction(x0, yhat, se, (yhat - z * se, yhat + z * se))
