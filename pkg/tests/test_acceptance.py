"""End-to-end acceptance checks at their pinned tolerances.

Each criterion prints one ``[Cn] PASS|FAIL`` line with the measured numbers,
then asserts.  Run on its own with ``pytest tests/test_acceptance.py -v``.
"""

import math
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from pwdeming import (MCDataset, PrecisionProfile, detect_outliers, fit_known, fit_residual_profile,
                      fit_rl, jackknife, qq_normality, residuals, scale)
from pwdeming.inference import rl_fitter
from pwdeming.simlab import bundled_config, load_designs, run_study

from conftest import RL_5_01, simulate_pairs
from oracles import known_profile_fixed_point, rl_full_vector

pytestmark = pytest.mark.slow


@pytest.fixture
def verdict(capsys):
    def report(label, ok, detail):
        with capsys.disabled():
            print(f"\n[{label}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, f"{label}: {detail}"
    return report


@pytest.fixture(scope="module")
def rl_bias():
    (design,) = load_designs(bundled_config("rl_bias"))
    return run_study(replace(design, keep_raw=True))


@pytest.fixture(scope="module")
def constant_cv():
    return [run_study(d) for d in load_designs(bundled_config("constant_cv"))]


@pytest.fixture(scope="module")
def efficiency():
    return {d.name: run_study(d) for d in load_designs(bundled_config("efficiency"))}


def within(value, target, tol):
    return abs(value - target) <= tol


def test_c1_rl_bias_summaries(rl_bias, verdict):
    k, r = rl_bias["utopian"], rl_bias["rl"]
    checks = {
        "known mean alpha": (k.mean_alpha, -0.098, 0.25),
        "known sd alpha": (k.sd_alpha, 2.33, 0.25),
        "known mean beta": (k.mean_beta, 1.002, 0.006),
        "known sd beta": (k.sd_beta, 0.051, 0.006),
        "rl mean alpha": (r.mean_alpha, -0.090, 0.25),
        "rl mean beta": (r.mean_beta, 1.004, 0.006),
    }
    bad = [name for name, (v, t, tol) in checks.items() if not within(v, t, tol)]
    detail = "; ".join(f"{name} {v:.4f} (target {t} +/- {tol})" for name, (v, t, tol) in checks.items())
    verdict("C1", not bad, detail + (f"; out of band: {bad}" if bad else ""))


def test_c2_rl_bias_direction(rl_bias, verdict):
    sigma, kappa = rl_bias.raw["rl"][:, 2], rl_bias.raw["rl"][:, 3]
    n = sigma.size

    def median_se(v):
        return math.sqrt(math.pi / 2) * np.std(v, ddof=1) / math.sqrt(n)

    z_sigma = abs(np.median(sigma) - 5.0) / median_se(sigma)
    z_kappa = abs(np.median(kappa) - 0.1) / median_se(kappa)
    ratio = rl_bias["rl"].rmse["slope"] / rl_bias["utopian"].rmse["slope"]
    ok = z_sigma > 3 and z_kappa > 3 and abs(ratio - 1) <= 0.05
    verdict("C2", ok, f"median sigma {np.median(sigma):.3f} ({z_sigma:.1f} SE from 5), "
                      f"median kappa {np.median(kappa):.4f} ({z_kappa:.1f} SE from 0.1), "
                      f"slope RMSE rl/known {ratio:.4f}")


def test_c3_constant_cv_rmse(constant_cv, verdict):
    targets = [
        {"linnet": (0.8082, 0.2355), "ml_ccv": (0.2533, 0.0932)},
        {"linnet": (0.1120, 0.0500), "ml_ccv": (0.1259, 0.0535)},
    ]
    parts, ok = [], True
    for res, tgt in zip(constant_cv, targets):
        for est, (ta, tb) in tgt.items():
            ra, rb = res[est].rmse["intercept"], res[est].rmse["slope"]
            good = abs(ra / ta - 1) <= 0.10 and abs(rb / tb - 1) <= 0.10
            ok &= good
            parts.append(f"{res.design.name}/{est} {ra:.4f}/{rb:.4f} vs {ta}/{tb}"
                         + ("" if good else " OUT"))
    verdict("C3", ok, "; ".join(parts))


# published efficiencies (intercept, slope, MDL) and mean correlation
PUBLISHED_EFFICIENCY = {
    "efficiency-rl1": {"r": 0.9973, "rl": (98.5, 98.7, 99.0), "pb": (84.7, 86.9, 74.5)},
    "efficiency-rl2": {"r": 0.9758, "rl": (95.4, 100.5, 91.4), "pb": (80.3, 80.1, 70.8)},
    "efficiency-rl3": {"r": 0.9917, "rl": (98.2, 98.9, 98.2), "pb": (84.9, 89.1, 74.7)},
    "efficiency-linsd1": {"r": 0.9952, "rl": (97.7, 98.4, 97.8), "pb": (84.8, 87.6, 74.0)},
}


def test_c4_efficiency_rows(efficiency, verdict):
    parts, misses = [], []
    for name, ref in PUBLISHED_EFFICIENCY.items():
        res = efficiency[name]
        if abs(res.mean_correlation - ref["r"]) > 0.002:
            misses.append(f"{name} mean r {res.mean_correlation:.4f} vs {ref['r']}")
        for est in ("rl", "pb"):
            got = [res[est].efficiency[t] for t in ("intercept", "slope", "mdl")]
            for t, g, want in zip(("intercept", "slope", "mdl"), got, ref[est]):
                if abs(g - want) > 5:
                    misses.append(f"{name} {est} {t} eff {g:.1f} vs {want}")
            parts.append(f"{name} {est} " + "/".join(f"{g:.1f}" for g in got))
        parts.append(f"{name} r {res.mean_correlation:.4f}")
    verdict("C4", not misses, "; ".join(parts) + (f"; out of band: {misses}" if misses else ""))


def test_rl_not_worse_than_linnet(efficiency):
    for name, res in efficiency.items():
        for t in ("intercept", "slope", "mdl"):
            assert res["rl"].efficiency[t] >= res["linnet"].efficiency[t] - 2, (name, t)


def test_c5_oracle_equivalence(verdict):
    worst_known = worst_rl = 0.0
    count = 0
    for n in (8, 10, 12):
        for k in range(7):
            d = simulate_pairs(n=n, seed=1000 * n + k)
            a, b, _ = known_profile_fixed_point(d.x, d.y, RL_5_01, RL_5_01)
            f = fit_known(d, RL_5_01, RL_5_01)
            worst_known = max(worst_known, abs(f.alpha - a), abs(f.beta - b))
            o = rl_full_vector(d.x, d.y)
            g = fit_rl(d)
            worst_rl = max(worst_rl, abs(g.alpha - o["alpha"]), abs(g.beta - o["beta"]))
            count += 1
    ok = count >= 20 and worst_known < 1e-5 and worst_rl < 1e-5
    verdict("C5", ok, f"{count} datasets; max |delta| known {worst_known:.2e}, rl {worst_rl:.2e}")


def test_c6_lambda_invariance(verdict):
    g, h = RL_5_01, PrecisionProfile.rocke_lorenzato(2.0, 0.05)
    worst = 0.0
    for seed in range(100):
        d = simulate_pairs(n=50, seed=7000 + seed)
        base = fit_known(d, g, h)
        for lam in (0.1, 1.0, 25.0):
            f = fit_known(d, scale(g, lam), scale(h, lam))
            worst = max(worst, abs(f.alpha / base.alpha - 1), abs(f.beta / base.beta - 1))
    verdict("C6", worst <= 1e-8, f"300 fits; worst relative change {worst:.2e}")


def contaminate(d):
    y = d.y.copy()
    mu = np.geomspace(20, 100, d.n)
    y[0] += 6 * math.sqrt(2 * RL_5_01(mu[0]))
    y[-1] -= 6 * math.sqrt(2 * RL_5_01(mu[-1]))
    return MCDataset(d.x, y)


def test_c7_outlier_procedure(verdict):
    exact = 0
    for seed in range(500):
        rep = detect_outliers(contaminate(simulate_pairs(n=100, seed=200_000 + seed)), k_max=5)
        exact += rep.outlier_indices == [1, 100]
    alarms = 0
    for seed in range(1000):
        rep = detect_outliers(simulate_pairs(n=100, seed=300_000 + seed), k_max=5)
        alarms += bool(rep.outliers)
    ok = exact / 500 >= 0.95 and alarms / 1000 <= 0.10
    verdict("C7", ok, f"exact recovery {exact}/500 = {exact / 5:.1f}% (need >= 95%); "
                      f"clean false alarms {alarms}/1000 = {alarms / 10:.1f}% (need <= 10%)")


def test_outlier_removal_restores_the_clean_fit():
    for seed in range(25):
        base = simulate_pairs(n=100, seed=200_000 + seed)
        rep = detect_outliers(contaminate(base), k_max=5)
        if rep.outlier_indices != [1, 100]:
            continue
        ref = jackknife(base, rl_fitter())
        assert abs(rep.clean_fit.alpha - ref.alpha) < ref.se_alpha, seed
        assert abs(rep.clean_fit.beta - ref.beta) < ref.se_beta, seed


def test_c8_diagnostics_calibration(verdict):
    sds, qq_reject = [], 0
    for seed in range(1000):
        d = simulate_pairs(n=100, seed=400_000 + seed)
        rs = residuals(d, fit_known(d, RL_5_01, RL_5_01))
        sds.append(rs.sd_r)
        qq_reject += qq_normality(rs.r) < 0.05
    flat = PrecisionProfile.rocke_lorenzato(5.0, 0.0)
    keep = 0
    for seed in range(1000):
        d = simulate_pairs(n=100, seed=500_000 + seed, profile=flat)
        rs = residuals(d, fit_known(d, flat, flat))
        keep += fit_residual_profile(d.x, rs.r).p_const_sd > 0.05
    mean_sd = float(np.mean(sds))
    ok = 0.97 <= mean_sd <= 1.03 and keep / 1000 >= 0.90 and 0.03 <= qq_reject / 1000 <= 0.07
    verdict("C8", ok, f"mean sd(r) {mean_sd:.4f}; constant-SD model kept in {keep / 10:.1f}%; "
                      f"QQ rejection rate {qq_reject / 1000:.3f}")


def test_c9_cli_determinism(tmp_path, verdict):
    d = simulate_pairs(n=60, seed=9)
    csv_path = tmp_path / "data.csv"
    csv_path.write_text("x,y\n" + "".join(f"{float(a)!r},{float(b)!r}\n" for a, b in zip(d.x, d.y)))
    runs = [
        ["fit", str(csv_path), "--format", "json", "--seed", "11", "--mdl", "40", "--outliers"],
        ["fit", str(csv_path), "--format", "json", "--profile-x",
         '{"family": "RockeLorenzato", "params": [5, 0.1]}', "--profile-y",
         '{"family": "RockeLorenzato", "params": [5, 0.1]}'],
        ["simulate", "--config", "constant_cv", "--replicates", "5", "--out", str(tmp_path / "sim")],
    ]
    same = []
    for argv in runs:
        outs = []
        for _ in range(2):
            proc = subprocess.run([sys.executable, "-m", "pwdeming.cli", *argv],
                                  capture_output=True, check=True)
            extra = (tmp_path / "sim.json").read_bytes() if argv[0] == "simulate" else b""
            outs.append(proc.stdout + extra)
        same.append(outs[0] == outs[1])
    verdict("C9", all(same), f"{sum(same)}/{len(same)} invocations byte-identical on repeat")
