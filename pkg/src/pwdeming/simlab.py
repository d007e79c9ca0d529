"""Seeded Monte-Carlo studies comparing slope/intercept estimators.

Each replicate draws its normals from its own stream, keyed by the study
seed and the replicate number, so replicates can run in any order or in
parallel and still reproduce bit for bit.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources

import jsonschema
import numpy as np

from .baselines import linnet_ccv, ml_constant_cv, passing_bablok
from .data import MCDataset
from .deming_known import fit_known
from .deming_rl import fit_rl
from .errors import ConfigError, DataError, PWDError, SimulationError
from .profiles import PrecisionProfile, evaluate

ESTIMATORS = ("utopian", "rl", "pb", "linnet", "linnet_gen", "ml_ccv")
MAX_FAILURE_RATE = 0.01
TARGETS = ("intercept", "slope", "mdl")


@dataclass(frozen=True)
class SimDesign:
    n: int
    mu_low: float
    mu_high: float
    profile_x: PrecisionProfile
    profile_y: PrecisionProfile
    spacing: str = "geometric"
    alpha_true: float = 0.0
    beta_true: float = 1.0
    replicates: int = 1000
    seed: int = 0
    estimators: tuple[str, ...] = ("utopian", "rl")
    mdl: float | None = None
    lam: float = 1.0
    name: str = ""
    keep_raw: bool = False

    def __post_init__(self):
        if self.n < 5:
            raise DataError(f"n must be at least 5, got {self.n}")
        if self.replicates < 1:
            raise DataError("replicates must be at least 1")
        if self.spacing not in ("geometric", "arithmetic"):
            raise DataError(f"unknown spacing {self.spacing!r}")
        if self.spacing == "geometric" and not self.mu_low > 0:
            raise DataError("geometric spacing needs mu_low > 0")
        if not self.mu_high > self.mu_low:
            raise DataError("mu_high must exceed mu_low")
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise DataError("lam must be positive")
        unknown = [e for e in self.estimators if e not in ESTIMATORS]
        if unknown:
            raise DataError(f"unknown estimators {unknown}")
        # the efficiency denominator is always present and always first
        ests = ("utopian",) + tuple(e for e in self.estimators if e != "utopian")
        object.__setattr__(self, "estimators", ests)

    def mu_grid(self) -> np.ndarray:
        if self.spacing == "geometric":
            return np.geomspace(self.mu_low, self.mu_high, self.n)
        return np.linspace(self.mu_low, self.mu_high, self.n)

    def lam_gen(self) -> float:
        """Mean ratio of X to Y variance over the design grid under the true profiles."""
        mu = self.mu_grid()
        g = evaluate(self.profile_x, mu)
        h = evaluate(self.profile_y, self.alpha_true + self.beta_true * mu)
        if np.any(h <= 0):
            raise DataError("generating Y profile is zero somewhere on the grid")
        return float(np.mean(g / h))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "mu_low": self.mu_low,
            "mu_high": self.mu_high,
            "spacing": self.spacing,
            "alpha_true": self.alpha_true,
            "beta_true": self.beta_true,
            "profile_x": self.profile_x.to_dict(),
            "profile_y": self.profile_y.to_dict(),
            "replicates": self.replicates,
            "seed": self.seed,
            "estimators": list(self.estimators),
            "mdl": self.mdl,
            "lam": self.lam,
            "keep_raw": self.keep_raw,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SimDesign":
        validate_config(obj, single=True)
        kw = dict(obj)
        kw["profile_x"] = PrecisionProfile.from_dict(obj["profile_x"])
        kw["profile_y"] = PrecisionProfile.from_dict(obj["profile_y"])
        if "estimators" in kw:
            kw["estimators"] = tuple(kw["estimators"])
        return cls(**kw)


def _schema() -> dict:
    text = resources.files("pwdeming").joinpath("schemas/simdesign.schema.json").read_text("utf-8")
    return json.loads(text)


def validate_config(obj, *, single: bool = False) -> None:
    """Raise :class:`ConfigError` naming every offending field of a design config."""
    schema = _schema()
    design = {"$defs": schema["$defs"], "$ref": "#/$defs/design"}
    if not single and isinstance(obj, dict) and "studies" in obj:
        studies = obj["studies"]
        if not isinstance(studies, list) or not studies:
            raise ConfigError("'studies' must be a non-empty list", fields=["studies"])
        items = [(f"studies/{i}/", s) for i, s in enumerate(studies)]
    else:
        items = [("", obj)]
    problems = []
    fields = []
    validator = jsonschema.Draft202012Validator(design)
    for prefix, item in items:
        for err in sorted(validator.iter_errors(item), key=lambda e: list(e.absolute_path)):
            path = prefix + "/".join(str(p) for p in err.absolute_path)
            fields.append(path or "<root>")
            problems.append(f"{path or '<root>'}: {err.message}")
    if problems:
        raise ConfigError("invalid simulation config:\n  " + "\n  ".join(problems), fields=fields)


def load_designs(obj) -> list[SimDesign]:
    """Designs from a parsed config: a single design or ``{"studies": [...]}``."""
    validate_config(obj)
    if isinstance(obj, dict) and "studies" in obj:
        return [SimDesign.from_dict(s) for s in obj["studies"]]
    return [SimDesign.from_dict(obj)]


def bundled_config(name: str) -> dict:
    """Parsed copy of a config shipped with the package, e.g. ``"rl_bias"``."""
    res = resources.files("pwdeming").joinpath(f"configs/{name}.json")
    if not res.is_file():
        raise ConfigError(f"no bundled config named {name!r}", fields=[name])
    return json.loads(res.read_text("utf-8"))


def replicate_rng(seed: int, replicate_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replicate_index,)))


def generate(design: SimDesign, replicate_index: int) -> MCDataset:
    """One synthetic dataset: row 0 of the normal draws perturbs X, row 1 perturbs Y."""
    mu = design.mu_grid()
    m = design.alpha_true + design.beta_true * mu
    g = evaluate(design.profile_x, mu)
    h = evaluate(design.profile_y, m)
    if np.any(g < 0) or np.any(h < 0):
        raise DataError("generating profile has negative variance")
    z = replicate_rng(design.seed, replicate_index).standard_normal((2, design.n))
    return MCDataset(mu + np.sqrt(g) * z[0], m + np.sqrt(h) * z[1])


def _utopian_profiles(design: SimDesign):
    gx, hy = design.profile_x, design.profile_y
    if gx.is_degenerate() or hy.is_degenerate():
        # noise-free generation: any positive weights recover the exact line
        unit = PrecisionProfile.constant_variance(1.0)
        return unit, unit
    return gx, hy


def _estimator_fns(design: SimDesign) -> dict:
    gx, hy = _utopian_profiles(design)
    fns = {
        "utopian": lambda d: _line(fit_known(d, gx, hy)),
        "rl": lambda d: _rl_row(fit_rl(d, design.lam)),
        "pb": lambda d: _line(passing_bablok(d)),
        "linnet": lambda d: _line(linnet_ccv(d, design.lam)),
        "ml_ccv": lambda d: _line(ml_constant_cv(d, design.lam)),
    }
    if "linnet_gen" in design.estimators:
        lam_gen = design.lam_gen()
        fns["linnet_gen"] = lambda d: _line(linnet_ccv(d, lam_gen))
    return {e: fns[e] for e in design.estimators}


def _line(fit):
    return (fit.alpha, fit.beta)


def _rl_row(fit):
    return (fit.alpha, fit.beta, fit.sigma, fit.kappa)


RAW_COLUMNS = {e: ("alpha", "beta") for e in ESTIMATORS}
RAW_COLUMNS["rl"] = ("alpha", "beta", "sigma", "kappa")


@dataclass(frozen=True)
class EstimatorSummary:
    name: str
    n_ok: int
    failures: int
    mean_alpha: float
    sd_alpha: float
    mean_beta: float
    sd_beta: float
    rmse: dict
    efficiency: dict
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_ok": self.n_ok,
            "failures": self.failures,
            "failure_rate": self.failures / (self.n_ok + self.failures),
            "mean_alpha": self.mean_alpha,
            "sd_alpha": self.sd_alpha,
            "mean_beta": self.mean_beta,
            "sd_beta": self.sd_beta,
            "rmse": dict(self.rmse),
            "efficiency": dict(self.efficiency),
            "extras": dict(self.extras),
        }


@dataclass(frozen=True)
class SimResult:
    design: SimDesign
    estimators: dict
    mean_correlation: float
    raw: dict | None = None
    lam_gen: float | None = None

    def __getitem__(self, name: str) -> EstimatorSummary:
        return self.estimators[name]

    def to_dict(self) -> dict:
        out = {
            "design": self.design.to_dict(),
            "mean_correlation": self.mean_correlation,
            "lam_gen": self.lam_gen,
            "estimators": {k: v.to_dict() for k, v in self.estimators.items()},
        }
        if self.raw is not None:
            out["raw"] = {
                k: {"columns": list(RAW_COLUMNS[k]), "rows": [[_finite_or_none(v) for v in row]
                                                             for row in arr.tolist()]}
                for k, arr in self.raw.items()
            }
        return out

    def table_rows(self) -> list[list]:
        """Rows of ``estimator, RMSE and efficiency for intercept, slope and MDL``."""
        rows = []
        for name, s in self.estimators.items():
            row = [self.design.name, name]
            for t in TARGETS:
                row += [s.rmse.get(t), s.efficiency.get(t)]
            rows.append(row)
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["study", "estimator", "rmse_intercept", "eff_intercept", "rmse_slope",
                    "eff_slope", "rmse_mdl", "eff_mdl"])
        for row in self.table_rows():
            w.writerow(["" if v is None else (f"{v:.6g}" if isinstance(v, float) else v)
                        for v in row])
        return buf.getvalue()


def _finite_or_none(v):
    return v if v is not None and math.isfinite(v) else None


def _efficiency(ref: float, est: float):
    if est == 0:
        return 100.0 if ref == 0 else None
    return 100.0 * (ref / est) ** 2


def _one_replicate(design: SimDesign, fns: dict, rep: int):
    data = generate(design, rep)
    corr = float(np.corrcoef(data.x, data.y)[0, 1]) if np.ptp(data.x) and np.ptp(data.y) else math.nan
    rows = {}
    for name, fn in fns.items():
        try:
            rows[name] = fn(data)
        except PWDError:
            rows[name] = None
    return corr, rows


def run_study(design: SimDesign, *, n_jobs: int = 1) -> SimResult:
    """Run every estimator on every replicate and tabulate RMSE and efficiency.

    Failed fits are excluded from that estimator's summaries and counted; more
    than 1% failures for any estimator raises :class:`SimulationError`.
    """
    fns = _estimator_fns(design)
    reps = range(design.replicates)
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(lambda r: _one_replicate(design, fns, r), reps))
    else:
        results = [_one_replicate(design, fns, r) for r in reps]

    corrs = np.array([c for c, _ in results])
    raw = {}
    for name in fns:
        width = len(RAW_COLUMNS[name])
        raw[name] = np.array([row[name] if row[name] is not None else (math.nan,) * width
                              for _, row in results], dtype=float).reshape(-1, width)

    truth = {"intercept": design.alpha_true, "slope": design.beta_true}
    if design.mdl is not None:
        truth["mdl"] = design.alpha_true + design.beta_true * design.mdl

    def rmse_of(arr):
        ok = arr[~np.isnan(arr[:, 0])]
        est = {"intercept": ok[:, 0], "slope": ok[:, 1]}
        if design.mdl is not None:
            est["mdl"] = ok[:, 0] + ok[:, 1] * design.mdl
        return {t: float(np.sqrt(np.mean((est[t] - truth[t]) ** 2))) if ok.size else math.nan
                for t in truth}

    ref = rmse_of(raw["utopian"])
    summaries = {}
    for name, arr in raw.items():
        ok = arr[~np.isnan(arr[:, 0])]
        failures = arr.shape[0] - ok.shape[0]
        if failures > MAX_FAILURE_RATE * arr.shape[0]:
            raise SimulationError(
                f"{name}: {failures} of {arr.shape[0]} replicates failed in study {design.name!r}")
        rm = rmse_of(arr)
        extras = {}
        if name == "rl" and ok.size:
            extras = {"median_sigma": float(np.median(ok[:, 2])),
                      "median_kappa": float(np.median(ok[:, 3]))}
        ddof = 1 if ok.shape[0] > 1 else 0
        summaries[name] = EstimatorSummary(
            name=name, n_ok=int(ok.shape[0]), failures=int(failures),
            mean_alpha=float(ok[:, 0].mean()), sd_alpha=float(ok[:, 0].std(ddof=ddof)),
            mean_beta=float(ok[:, 1].mean()), sd_beta=float(ok[:, 1].std(ddof=ddof)),
            rmse=rm, efficiency={t: _efficiency(ref[t], rm[t]) for t in rm}, extras=extras)

    return SimResult(
        design=design,
        estimators=summaries,
        mean_correlation=float(np.nanmean(corrs)) if np.any(~np.isnan(corrs)) else math.nan,
        raw=raw if design.keep_raw else None,
        lam_gen=design.lam_gen() if "linnet_gen" in fns else None,
    )


def with_replicates(design: SimDesign, replicates: int) -> SimDesign:
    return replace(design, replicates=int(replicates))
