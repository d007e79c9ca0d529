import csv
import json
import subprocess
import sys
from importlib import resources

import jsonschema
import numpy as np
import pytest

from pwdeming import detect_outliers, fit_rl, jackknife, residuals
from pwdeming.cli import main
from pwdeming.inference import rl_fitter

from conftest import simulate_pairs

CV1 = '{"family": "ConstantVariance", "params": [1.0]}'


def write_csv(path, x, y, ids=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "x", "y"] if ids is not None else ["x", "y"])
        for i in range(len(x)):
            row = [float(x[i]), float(y[i])]
            w.writerow([ids[i]] + row if ids is not None else row)
    return str(path)


@pytest.fixture
def exact_csv(tmp_path):
    x = np.arange(1.0, 11.0)
    return write_csv(tmp_path / "exact.csv", x, 2 * x)


@pytest.fixture
def rl_csv(tmp_path):
    d = simulate_pairs(n=100, seed=77)
    return write_csv(tmp_path / "rl.csv", d.x, d.y), d


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_exact_line_report(exact_csv, capsys):
    code, out, _ = run(["fit", exact_csv, "--profile-x", CV1, "--profile-y", CV1,
                        "--outliers", "--format", "json"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["fit"]["alpha"] == pytest.approx(0, abs=1e-10)
    assert rep["fit"]["beta"] == pytest.approx(2, abs=1e-12)
    assert rep["diagnostics"]["sd_r"] == pytest.approx(0, abs=1e-10)
    assert rep["outliers"]["outliers"] == []


def test_json_is_byte_identical_and_valid(rl_csv, tmp_path, capsys):
    path, _ = rl_csv
    argv = ["fit", path, "--format", "json", "--seed", "5", "--mdl", "50", "--outliers"]
    _, first, _ = run(argv, capsys)
    _, second, _ = run(argv, capsys)
    assert first == second
    schema = json.loads(resources.files("pwdeming").joinpath(
        "schemas/report.schema.json").read_text("utf-8"))
    jsonschema.validate(json.loads(first), schema)


def test_library_equivalence(rl_csv, capsys):
    path, d = rl_csv
    _, out, _ = run(["fit", path, "--format", "json", "--lambda", "1.5", "--outliers"], capsys)
    rep = json.loads(out)
    fit = fit_rl(d, 1.5)
    inf = jackknife(d, rl_fitter(1.5), full_fit=fit)
    res = residuals(d, fit)
    out_rep = detect_outliers(d, 1.5)
    assert rep["fit"]["alpha"] == fit.alpha and rep["fit"]["beta"] == fit.beta
    assert rep["fit"]["sigma"] == fit.sigma and rep["fit"]["kappa"] == fit.kappa
    assert rep["inference"]["se_alpha"] == inf.se_alpha
    assert rep["inference"]["ci_beta"] == list(inf.ci_beta)
    assert rep["diagnostics"]["sd_r"] == res.sd_r
    assert rep["outliers"]["outliers"] == out_rep.to_dict()["outliers"]
    _, text, _ = run(["fit", path, "--lambda", "1.5"], capsys)
    assert f"{fit.beta:.4f}" in text and f"{inf.se_beta:.4f}" in text


def test_text_report_sections(rl_csv, capsys):
    code, text, _ = run(["fit", rl_csv[0], "--mdl", "40", "--outliers"], capsys)
    assert code == 0
    for needle in ("Pearson correlation", "Intercept", "Slope", "At MDL", "Scaled residual SD",
                   "QQ normality", "Passing-Bablok", "Outlier screen"):
        assert needle in text


def test_plot_files(rl_csv, tmp_path, capsys):
    out_dir = tmp_path / "plots"
    code, _, _ = run(["fit", rl_csv[0], "--plots", str(out_dir), "--line-samples", "33"], capsys)
    assert code == 0
    expected = {"scatter.csv": 100, "fitted_line.csv": 33, "residuals_vs_x.csv": 100,
                "scaled_residuals_vs_index.csv": 100, "qq.csv": 100}
    assert {p.name for p in out_dir.iterdir()} == set(expected)
    for name, rows in expected.items():
        with open(out_dir / name, newline="") as fh:
            table = list(csv.reader(fh))
        assert len(table) == rows + 1
        assert all(len(r) == len(table[0]) for r in table)


def test_stdin_and_output_file(exact_csv, tmp_path, monkeypatch, capsys):
    import io
    with open(exact_csv, "rb") as fh:
        raw = fh.read()
    monkeypatch.setattr(sys, "stdin", io.TextIOWrapper(io.BytesIO(raw)))
    target = tmp_path / "report.json"
    code, out, _ = run(["fit", "-", "--format", "json", "-o", str(target)], capsys)
    assert code == 0 and out == ""
    assert json.loads(target.read_text())["input"]["n"] == 10


def test_malformed_csv_names_the_line(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("x,y\n1,2\n2,3\n3,abc\n4,5\n5,6\n")
    code, _, err = run(["fit", str(p)], capsys)
    assert code == 3
    assert "line 4" in err


def test_too_few_rows(tmp_path, capsys):
    p = write_csv(tmp_path / "small.csv", [1, 2, 3, 4], [1, 2, 3, 5])
    code, _, err = run(["fit", p], capsys)
    assert code == 3 and "data error" in err


@pytest.mark.parametrize("extra", [["--profile-x", CV1, "--profile-y", CV1, "--lambda", "2"],
                                   ["--profile-x", CV1],
                                   ["--lambda", "-1"]])
def test_contradictory_flags(exact_csv, extra, capsys):
    with pytest.raises(SystemExit) as info:
        main(["fit", exact_csv] + extra)
    assert info.value.code == 2
    capsys.readouterr()


def test_bad_profile_is_data_error(exact_csv, capsys):
    code, _, _ = run(["fit", exact_csv, "--profile-x", "{nope", "--profile-y", CV1], capsys)
    assert code == 3


def test_simulate_zero_noise(tmp_path, capsys):
    zero = {"family": "ConstantVariance", "params": [0.0]}
    cfg = {"name": "exact", "n": 20, "mu_low": 1.0, "mu_high": 10.0, "profile_x": zero,
           "profile_y": zero, "replicates": 1, "seed": 1, "mdl": 5.0,
           "estimators": ["utopian", "pb", "linnet", "ml_ccv"]}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    code, table, _ = run(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "o")], capsys)
    assert code == 0 and "linnet" in table
    result = json.loads((tmp_path / "o.json").read_text())
    for est in result["studies"][0]["estimators"].values():
        assert all(v == pytest.approx(0, abs=1e-9) for v in est["rmse"].values())
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert len(lines) == 5


def test_simulate_invalid_config_lists_fields(tmp_path, capsys):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"n": "ten", "mu_low": 1.0}))
    code, _, err = run(["simulate", "--config", str(p)], capsys)
    assert code == 3
    assert "n:" in err and "profile_x" in err


def test_simulate_bundled_with_override(tmp_path, capsys):
    code, table, _ = run(["simulate", "--config", "constant_cv", "--replicates", "3"], capsys)
    assert code == 0
    assert table.count("ml_ccv") == 2


def test_console_script_entry_point(exact_csv):
    proc = subprocess.run([sys.executable, "-m", "pwdeming.cli", "fit", exact_csv, "--format", "json"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["fit"]["beta"] == pytest.approx(2)
