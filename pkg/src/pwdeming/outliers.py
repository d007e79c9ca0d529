"""Sequential outlier identification: forward trimming, backward Bonferroni reinclusion.

An adaptation of Rosner's many-outlier procedure to weighted Deming fits.
Forward, the case with the largest absolute scaled residual is set aside and
the model refit, ``k_max`` times.  Backward, suspects are predicted from the
clean-set fit, scaled by a variance profile fitted to the clean-set residuals,
and the least significant suspect is returned to the clean set until either
every remaining suspect is Bonferroni-significant or none remain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import MCDataset, data_scale
from .deming_rl import fit_rl
from .diagnostics import fit_residual_profile
from .errors import DataError, OutlierError, PWDError


@dataclass(frozen=True)
class TraceEntry:
    index: int
    z: float
    p_bonferroni: float = math.nan


@dataclass(frozen=True)
class OutlierReport:
    k_max: int
    alpha_level: float
    forward_trace: list[TraceEntry]
    backward_trace: list[TraceEntry]
    outliers: list[TraceEntry]
    clean_fit: object
    n: int
    multipliers: list[int] = field(default_factory=list)

    @property
    def outlier_indices(self) -> list[int]:
        return [o.index for o in self.outliers]

    def to_dict(self) -> dict:
        def rows(entries, with_p=True):
            out = []
            for e in entries:
                d = {"index": e.index, "z": e.z}
                if with_p:
                    d["p_bonferroni"] = e.p_bonferroni
                out.append(d)
            return out

        return {
            "n": self.n,
            "k_max": self.k_max,
            "alpha_level": self.alpha_level,
            "forward_trace": rows(self.forward_trace, with_p=False),
            "backward_trace": rows(self.backward_trace),
            "multipliers": list(self.multipliers),
            "outliers": rows(self.outliers),
            "clean_fit": {"alpha": self.clean_fit.alpha, "beta": self.clean_fit.beta},
        }


def default_k_max(n: int) -> int:
    return max(1, math.ceil(0.05 * n))


def bonferroni_p(z, multiplier: int):
    """``min(1, multiplier * two-sided normal P)``."""
    p = 2.0 * stats.norm.sf(np.abs(z))
    return np.minimum(1.0, multiplier * p)


def detect_outliers(data: MCDataset, lam: float = 1.0, k_max: int | None = None,
                    alpha_level: float = 0.05, *, fitter=None) -> OutlierReport:
    """Run the forward-trim / backward-reinclusion procedure.

    ``fitter(dataset, start=fit)`` defaults to the shared-profile fit with
    ratio ``lam``; pass :func:`pwdeming.inference.known_fitter` output to use
    known profiles instead.
    """
    if k_max is None:
        k_max = default_k_max(data.n)
    k_max = int(k_max)
    if k_max < 1:
        raise DataError("k_max must be at least 1")
    if data.n - k_max < 5:
        raise DataError(f"k_max={k_max} leaves fewer than 5 clean cases out of {data.n}")
    if not 0 < alpha_level < 1:
        raise DataError("alpha_level must lie in (0, 1)")
    if fitter is None:
        def fitter(d, start=None):
            return fit_rl(d, lam, start=start)

    stages: list[str] = []
    exact_tol = 1e-10 * data_scale(data.y)

    def refit(positions, start, label):
        stages.append(label)
        try:
            return fitter(data.subset(np.sort(positions)), start=start)
        except PWDError as exc:
            raise OutlierError(f"refit failed at stage '{label}': {exc}", stages=list(stages)) from exc

    # forward pass
    clean = list(range(data.n))
    suspects: list[int] = []
    forward: list[TraceEntry] = []
    fit = None
    full_fit = None
    for step in range(k_max):
        pos = np.array(sorted(clean))
        fit = refit(pos, fit, f"forward {step + 1}")
        if full_fit is None:
            full_fit = fit
        sub = data.subset(pos)
        g, h = fit.variances()
        r = (sub.y - fit.alpha - fit.beta * sub.x) / np.sqrt(h + g * fit.beta ** 2)
        # argmax returns the first maximum: ties go to the lower index
        j = int(np.argmax(np.abs(r)))
        p = int(pos[j])
        forward.append(TraceEntry(int(data.index[p]), float(r[j])))
        suspects.append(p)
        clean.remove(p)

    # backward pass
    backward: list[TraceEntry] = []
    multipliers: list[int] = []
    declared: list[TraceEntry] = []
    while True:
        pos = np.array(sorted(clean))
        if not suspects:
            # everything reincluded: the clean fit is the full-data fit
            fit = full_fit
            break
        fit = refit(pos, fit, f"backward clean={len(pos)}")
        sub = data.subset(pos)
        e_clean = sub.y - fit.alpha - fit.beta * sub.x
        sp = np.array(suspects)
        xs, ys = data.x[sp], data.y[sp]
        e_susp = ys - fit.alpha - fit.beta * xs
        if np.all(np.abs(e_clean) <= exact_tol):
            # clean cases lie on the line: only off-line suspects are infinitely extreme
            z = np.where(np.abs(e_susp) <= exact_tol, 0.0, np.copysign(np.inf, e_susp))
        else:
            # the profile is indexed by latent means, whose errors are uncorrelated
            # with the residuals; indexing by X inflates residuals at low X
            mu_susp = np.abs(fit.latent_means(xs, ys))
            try:
                prof = fit_residual_profile(np.abs(fit.mu_hat), e_clean)
            except PWDError as exc:
                raise OutlierError(f"residual profile failed with clean={len(pos)}: {exc}",
                                   stages=list(stages)) from exc
            z = e_susp / np.sqrt(prof.sigma_r ** 2 + (prof.kappa_r * mu_susp) ** 2)
        m = len(pos)
        multipliers.append(m)
        bp = bonferroni_p(z, m)
        # least suspect = largest Bonferroni P; ties go to the lower index
        order = np.lexsort((data.index[sp], -bp))
        worst = int(order[0])
        if bp[worst] < alpha_level:
            declared = [TraceEntry(int(data.index[sp[k]]), float(z[k]), float(bp[k]))
                        for k in range(len(sp))]
            break
        backward.append(TraceEntry(int(data.index[sp[worst]]), float(z[worst]), float(bp[worst])))
        clean.append(int(sp[worst]))
        suspects.pop(worst)

    declared.sort(key=lambda t: t.index)
    return OutlierReport(k_max, alpha_level, forward, backward, declared, fit, data.n, multipliers)
