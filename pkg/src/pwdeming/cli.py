"""Command-line front end: ``pwdeming fit`` and ``pwdeming simulate``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from importlib import metadata
from pathlib import Path

import numpy as np
from scipy import stats

from . import baselines, diagnostics
from .data import MCDataset, parse_csv
from .deming_known import fit_known
from .deming_rl import fit_rl
from .errors import (ConfigError, ConvergenceError, DataError, DegenerateFitError,
                     InferenceError, OutlierError, ProfileError, PWDError, SimulationError)
from .inference import jackknife, known_fitter, predict, rl_fitter
from .outliers import detect_outliers
from .profiles import PrecisionProfile
from .simlab import bundled_config, load_designs, run_study, with_replicates

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DEFAULT_QQ_SEED = 20240601


class UsageError(Exception):
    pass


def _version() -> str:
    try:
        return metadata.version("pwdeming")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _clean(obj):
    """JSON-ready copy with numpy scalars unwrapped and non-finite floats as null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _load_profile(text: str) -> PrecisionProfile:
    source = text.strip()
    if not source.startswith("{"):
        path = Path(source)
        if not path.is_file():
            raise ProfileError(f"profile {text!r} is neither JSON nor a readable file")
        source = path.read_text("utf-8")
    try:
        obj = json.loads(source)
    except json.JSONDecodeError as exc:
        raise ProfileError(f"profile JSON is malformed: {exc}") from None
    return PrecisionProfile.from_dict(obj)


# fit ---------------------------------------------------------------------------


def _fit_section(fit) -> dict:
    out = {"method": fit.method, "alpha": fit.alpha, "beta": fit.beta,
           "minus2logL": fit.minus2logL, "converged": fit.converged}
    if fit.method == "rl":
        out.update(sigma=fit.sigma, kappa=fit.kappa, **{"lambda": fit.lam},
                   boundary=fit.boundary, n_evals=fit.n_evals)
    else:
        out.update(profile_x=fit.profile_x.to_dict(), profile_y=fit.profile_y.to_dict(),
                   iterations=fit.iterations)
    return out


def _diagnostics_section(data: MCDataset, res, seed: int) -> dict:
    out = {"sd_r": res.sd_r, "sd_r_ci": list(res.sd_r_ci), "residual_profile": None,
           "qq_correlation": None, "qq_p": None, "notes": []}
    if np.all(data.x > 0) and np.any(res.r != 0):
        try:
            prof = diagnostics.fit_residual_profile(data.x, res.r)
            out["residual_profile"] = {
                "sigma_r": prof.sigma_r, "kappa_r": prof.kappa_r, "minus2logL": prof.minus2logL,
                "minus2logL_const_sd": prof.minus2logL_const_sd,
                "minus2logL_const_cv": prof.minus2logL_const_cv,
                "p_const_sd": prof.p_const_sd, "p_const_cv": prof.p_const_cv,
                "clamped": prof.clamped}
        except PWDError as exc:
            out["notes"].append(f"residual profile not fitted: {exc}")
    else:
        out["notes"].append("residual profile not fitted: needs all x > 0 and a nonzero residual")
    if data.n >= 10 and np.ptp(res.r) > 0:
        out["qq_correlation"] = diagnostics.qq_correlation(res.r)
        out["qq_p"] = diagnostics.qq_normality(res.r, seed=seed)
    else:
        out["notes"].append("QQ normality test skipped: needs n >= 10 and non-constant residuals")
    return out


def build_report(data: MCDataset, args, input_bytes: bytes) -> tuple[dict, object, object]:
    """Run the full analysis; returns (report, fit, residual set)."""
    known = args.profile_x is not None
    if known:
        gx, hy = _load_profile(args.profile_x), _load_profile(args.profile_y)
        fit = fit_known(data, gx, hy)
        fitter = known_fitter(gx, hy)
    else:
        lam = 1.0 if args.lam is None else args.lam
        fit = fit_rl(data, lam)
        fitter = rl_fitter(lam)
    inf = jackknife(data, fitter, args.level, full_fit=fit)
    res = diagnostics.residuals(data, fit, args.level)

    pearson = float(np.corrcoef(data.x, data.y)[0, 1]) if np.ptp(data.x) and np.ptp(data.y) else None
    spearman = float(stats.spearmanr(data.x, data.y)[0]) if pearson is not None else None
    report = {
        "schema_version": SCHEMA_VERSION,
        "provenance": {
            "package": "pwdeming",
            "version": _version(),
            "seed": args.seed,
            "input_sha256": hashlib.sha256(input_bytes).hexdigest(),
            "options": {
                "profile_x": args.profile_x, "profile_y": args.profile_y,
                "lambda": args.lam, "level": args.level, "mdl": args.mdl,
                "outliers": args.outliers, "k_max": args.k_max, "alpha": args.alpha,
            },
        },
        "input": {"n": data.n, "pearson": pearson, "spearman": spearman,
                  "x_range": [float(data.x.min()), float(data.x.max())],
                  "y_range": [float(data.y.min()), float(data.y.max())]},
        "fit": _fit_section(fit),
        "inference": {"method": inf.method, "level": inf.level,
                      "se_alpha": inf.se_alpha, "se_beta": inf.se_beta, "cov_ab": inf.cov_ab,
                      "ci_alpha": list(inf.ci_alpha), "ci_beta": list(inf.ci_beta),
                      "alpha_jackknife": inf.alpha_jack, "beta_jackknife": inf.beta_jack},
        "prediction": None,
        "diagnostics": _diagnostics_section(data, res, args.seed),
        "passing_bablok": None,
        "outliers": None,
    }
    if args.mdl is not None:
        p = predict(inf, args.mdl)
        report["prediction"] = {"mdl": p.x0, "yhat": p.yhat, "se": p.se, "ci": list(p.ci)}
    if data.n >= 10:
        try:
            pb = baselines.passing_bablok(data, args.level)
            report["passing_bablok"] = {"alpha": pb.alpha, "beta": pb.beta,
                                        "ci_alpha": list(pb.ci_alpha), "ci_beta": list(pb.ci_beta)}
        except DegenerateFitError:
            pass
    if args.outliers:
        rep = detect_outliers(data, 1.0 if args.lam is None else args.lam, args.k_max,
                              args.alpha, fitter=fitter if known else None)
        report["outliers"] = rep.to_dict()
    return _clean(report), fit, res


def _fmt(v, digits=4) -> str:
    if v is None:
        return "NA"
    if isinstance(v, (list, tuple)):
        return "(" + ", ".join(_fmt(u, digits) for u in v) + ")"
    if isinstance(v, float):
        return f"{v:.{digits}g}" if abs(v) >= 1e4 or (v != 0 and abs(v) < 1e-3) else f"{v:.{digits}f}"
    return str(v)


def render_text(report: dict) -> str:
    inp, fit, inf, diag = report["input"], report["fit"], report["inference"], report["diagnostics"]
    lines = [f"n = {inp['n']}",
             f"Pearson correlation {_fmt(inp['pearson'])} Spearman {_fmt(inp['spearman'])}", ""]
    if fit["method"] == "rl":
        lines.append(f"Shared Rocke-Lorenzato profile fit, lambda {_fmt(fit['lambda'])}")
        lines.append(f"sigma {_fmt(fit['sigma'])}  kappa {_fmt(fit['kappa'])}"
                     + (f"  ({fit['boundary']} at boundary)" if fit["boundary"] else ""))
    else:
        lines.append("Known precision-profile fit")
    lines.append(f"-2 log L {_fmt(fit['minus2logL'])}")
    lines.append("")
    pct = round(100 * inf["level"])
    lines.append(f"{'':10s}{'Estimate':>12s}{'Jackknife SE':>14s}{f'{pct}% lower':>12s}{f'{pct}% upper':>12s}")
    for name, key in (("Intercept", "alpha"), ("Slope", "beta")):
        ci = inf[f"ci_{key}"]
        lines.append(f"{name:10s}{_fmt(fit[key]):>12s}{_fmt(inf['se_' + key]):>14s}"
                     f"{_fmt(ci[0]):>12s}{_fmt(ci[1]):>12s}")
    lines.append(f"Intercept/slope covariance {_fmt(inf['cov_ab'])}")
    if report["prediction"]:
        p = report["prediction"]
        lines.append(f"At MDL {_fmt(p['mdl'])}: predicted {_fmt(p['yhat'])}, SE {_fmt(p['se'])}, "
                     f"CI {_fmt(p['ci'])}")
    lines.append("")
    lines.append(f"Scaled residual SD {_fmt(diag['sd_r'])} CI {_fmt(diag['sd_r_ci'])}")
    rp = diag["residual_profile"]
    if rp:
        lines.append(f"Residual profile sigma_r {_fmt(rp['sigma_r'])} kappa_r {_fmt(rp['kappa_r'])}")
        lines.append(f"  constant SD P {_fmt(rp['p_const_sd'])}  constant CV P {_fmt(rp['p_const_cv'])}")
    if diag["qq_p"] is not None:
        lines.append(f"QQ normality correlation {_fmt(diag['qq_correlation'])} P {_fmt(diag['qq_p'])}")
    for note in diag["notes"]:
        lines.append(f"note: {note}")
    if report["passing_bablok"]:
        pb = report["passing_bablok"]
        lines.append("")
        lines.append(f"Passing-Bablok intercept {_fmt(pb['alpha'])} {_fmt(pb['ci_alpha'])}  "
                     f"slope {_fmt(pb['beta'])} {_fmt(pb['ci_beta'])}")
    out = report["outliers"]
    if out is not None:
        lines.append("")
        lines.append(f"Outlier screen, K = {out['k_max']}, alpha {_fmt(out['alpha_level'])}")
        lines.append("  forward:  " + ", ".join(f"{e['index']} ({_fmt(e['z'], 3)})"
                                               for e in out["forward_trace"]))
        for e in out["backward_trace"]:
            lines.append(f"  reincluded {e['index']}: Z {_fmt(e['z'], 3)}, Bonferroni P {_fmt(e['p_bonferroni'], 3)}")
        if out["outliers"]:
            for e in out["outliers"]:
                lines.append(f"  OUTLIER {e['index']}: Z {_fmt(e['z'], 3)}, Bonferroni P {_fmt(e['p_bonferroni'], 3)}")
        else:
            lines.append("  no outliers")
    return "\n".join(lines) + "\n"


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_plot_data(directory: Path, data: MCDataset, fit, res, line_samples: int = 101) -> list[Path]:
    """CSV panels: scatter with fitted line overlay, residuals vs X, scaled residuals vs index, QQ."""
    directory.mkdir(parents=True, exist_ok=True)
    files = {
        "scatter.csv": (["id", "x", "y"], zip(data.index, data.x, data.y)),
    }
    grid = np.linspace(data.x.min(), data.x.max(), line_samples)
    files["fitted_line.csv"] = (["x", "y_fitted"], zip(grid, fit.alpha + fit.beta * grid))
    files["residuals_vs_x.csv"] = (["id", "x", "residual"], zip(data.index, data.x, res.e))
    files["scaled_residuals_vs_index.csv"] = (
        ["position", "id", "scaled_residual"], zip(range(1, data.n + 1), data.index, res.r))
    q, s = diagnostics.qq_points(res.r)
    files["qq.csv"] = (["theoretical_quantile", "ordered_scaled_residual"], zip(q, s))
    paths = []
    for name, (header, rows) in files.items():
        p = directory / name
        _write_csv(p, header, rows)
        paths.append(p)
    return paths


def cmd_fit(args) -> int:
    if (args.profile_x is None) != (args.profile_y is None):
        raise UsageError("--profile-x and --profile-y must be given together")
    if args.profile_x is not None and args.lam is not None and args.lam != 1.0:
        raise UsageError("--lambda applies to the shared-profile fit; it cannot be combined "
                         "with --profile-x/--profile-y (scale the profiles instead)")
    if args.lam is not None and not (math.isfinite(args.lam) and args.lam > 0):
        raise UsageError("--lambda must be positive")
    if not 0 < args.level < 1:
        raise UsageError("--level must lie in (0, 1)")
    if args.input == "-":
        raw = sys.stdin.buffer.read()
    else:
        try:
            raw = Path(args.input).read_bytes()
        except OSError as exc:
            raise DataError(f"cannot read {args.input}: {exc.strerror}") from None
    try:
        text = raw.decode("utf-8-sig")
    except UnicodeDecodeError:
        raise DataError("input is not valid UTF-8") from None
    data = parse_csv(text)
    report, fit, res = build_report(data, args, raw)
    if args.format == "json":
        payload = json.dumps(report, indent=2, allow_nan=False) + "\n"
    else:
        payload = render_text(report)
    if args.output:
        Path(args.output).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)
    if args.plots:
        write_plot_data(Path(args.plots), data, fit, res, args.line_samples)
    return EXIT_OK


# simulate ----------------------------------------------------------------------


def _read_config(spec: str):
    path = Path(spec)
    if path.is_file():
        try:
            return json.loads(path.read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{spec}: malformed JSON: {exc}", fields=["<root>"]) from None
    return bundled_config(spec.removesuffix(".json"))


def format_table(results) -> str:
    head = f"{'study':24s}{'estimator':12s}" + "".join(
        f"{t + ' ' + k:>16s}" for t in ("int", "slope", "mdl") for k in ("RMSE", "eff"))
    lines = [head]
    for r in results:
        for row in r.table_rows():
            cells = "".join(f"{_fmt(v):>16s}" for v in row[2:])
            lines.append(f"{row[0]:24s}{row[1]:12s}{cells}")
        lines.append(f"{'':24s}mean r {_fmt(r.mean_correlation)}")
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    designs = load_designs(_read_config(args.config))
    if args.replicates is not None:
        if args.replicates < 1:
            raise UsageError("--replicates must be at least 1")
        designs = [with_replicates(d, args.replicates) for d in designs]
    results = [run_study(d, n_jobs=args.jobs) for d in designs]
    payload = {"schema_version": SCHEMA_VERSION, "package": "pwdeming", "version": _version(),
               "studies": [r.to_dict() for r in results]}
    if args.out:
        prefix = Path(args.out)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        Path(f"{prefix}.json").write_text(
            json.dumps(_clean(payload), indent=2, allow_nan=False) + "\n", encoding="utf-8")
        csv_text = results[0].to_csv() + "".join(
            r.to_csv().split("\n", 1)[1] for r in results[1:])
        Path(f"{prefix}.csv").write_text(csv_text, encoding="utf-8")
    sys.stdout.write(format_table(results))
    return EXIT_OK


# entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pwdeming", description="Precision-profile weighted Deming regression")
    parser.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a method-comparison CSV (columns x, y, optional id)")
    f.add_argument("input", help="CSV file, or - for standard input")
    f.add_argument("--profile-x", help="JSON profile (inline or file) for the X method")
    f.add_argument("--profile-y", help="JSON profile (inline or file) for the Y method")
    f.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="X/Y variance ratio for the shared-profile fit (default 1)")
    f.add_argument("--level", type=float, default=0.95, help="confidence level (default 0.95)")
    f.add_argument("--mdl", type=float, default=None, help="medical decision level to predict at")
    f.add_argument("--outliers", action="store_true", help="run the outlier screen")
    f.add_argument("--k-max", type=int, default=None, help="outlier trim budget (default 5%% of n)")
    f.add_argument("--alpha", type=float, default=0.05, help="outlier significance level")
    f.add_argument("--seed", type=int, default=DEFAULT_QQ_SEED,
                   help="seed of the QQ normality reference distribution")
    f.add_argument("--format", choices=("text", "json"), default="text")
    f.add_argument("--output", "-o", help="write the report here instead of stdout")
    f.add_argument("--plots", metavar="DIR", help="write plot-data CSV files to DIR")
    f.add_argument("--line-samples", type=int, default=101,
                   help="points on the fitted-line overlay (default 101)")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="run a Monte-Carlo study from a JSON config")
    s.add_argument("--config", required=True,
                   help="config file, or a bundled name: rl_bias, constant_cv, efficiency")
    s.add_argument("--out", help="output prefix; writes PREFIX.json and PREFIX.csv")
    s.add_argument("--replicates", type=int, default=None, help="override the replicate count")
    s.add_argument("--jobs", type=int, default=1, help="worker threads")
    s.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (DataError, ProfileError, ConfigError) as exc:
        print(f"pwdeming: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DegenerateFitError, ConvergenceError, InferenceError, OutlierError,
            SimulationError, PWDError) as exc:
        print(f"pwdeming: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
