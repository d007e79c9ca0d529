import json
import math

import numpy as np
import pytest

from pwdeming import ConfigError, DataError, PrecisionProfile, SimulationError
from pwdeming import simlab
from pwdeming.simlab import (SimDesign, bundled_config, generate, load_designs, run_study,
                             validate_config, with_replicates)

from conftest import RL_5_01

ZERO = PrecisionProfile.constant_variance(0.0)


def design(**kw):
    base = dict(n=30, mu_low=20.0, mu_high=100.0, profile_x=RL_5_01, profile_y=RL_5_01,
                replicates=20, seed=7)
    base.update(kw)
    return SimDesign(**base)


def test_zero_noise_generation_is_exact():
    d = design(profile_x=ZERO, profile_y=ZERO, alpha_true=1.5, beta_true=0.8)
    data = generate(d, 0)
    np.testing.assert_array_equal(data.x, d.mu_grid())
    np.testing.assert_array_equal(data.y, 1.5 + 0.8 * d.mu_grid())


def test_geometric_grid():
    mu = design(n=100).mu_grid()
    assert mu[0] == pytest.approx(20) and mu[-1] == pytest.approx(100)
    ratios = mu[1:] / mu[:-1]
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)
    lin = design(spacing="arithmetic").mu_grid()
    np.testing.assert_allclose(np.diff(lin), np.diff(lin)[0])


def test_first_point_variance():
    d = design(n=5)
    draws = np.array([generate(d, r).x[0] for r in range(100_000)])
    assert np.var(draws, ddof=1) == pytest.approx(29.0, rel=0.02)


def test_streams_differ_by_replicate_and_seed():
    d = design()
    assert not np.array_equal(generate(d, 0).x, generate(d, 1).x)
    assert not np.array_equal(generate(d, 0).x, generate(design(seed=8), 0).x)
    np.testing.assert_array_equal(generate(d, 3).y, generate(d, 3).y)


def test_utopian_efficiency_is_one_hundred():
    res = run_study(design(estimators=("rl", "pb"), mdl=30.0))
    assert list(res.estimators) == ["utopian", "rl", "pb"]
    assert res["utopian"].efficiency == {"intercept": 100.0, "slope": 100.0, "mdl": 100.0}
    assert all(v > 0 for s in res.estimators.values() for v in s.efficiency.values())


def test_bit_identical_and_thread_independent():
    d = design(estimators=("rl", "linnet", "ml_ccv"), keep_raw=True)
    a = run_study(d).to_dict()
    b = run_study(d).to_dict()
    c = run_study(d, n_jobs=3).to_dict()
    assert json.dumps(a) == json.dumps(b) == json.dumps(c)


def test_replicates_do_not_depend_on_execution_order():
    d = design(estimators=("rl",), keep_raw=True)
    res = run_study(d)
    fns = simlab._estimator_fns(d)
    for rep in (19, 4, 0):
        _, rows = simlab._one_replicate(d, fns, rep)
        np.testing.assert_array_equal(res.raw["rl"][rep], rows["rl"])


def test_zero_noise_study_has_zero_rmse():
    d = design(profile_x=ZERO, profile_y=ZERO, replicates=1,
               estimators=("ml_ccv", "linnet", "pb"), mdl=50.0)
    res = run_study(d)
    for s in res.estimators.values():
        assert all(v == pytest.approx(0, abs=1e-9) for v in s.rmse.values())


def test_failures_are_counted_then_fatal(monkeypatch):
    from pwdeming.errors import ConvergenceError
    calls = {"n": 0}
    real = simlab.fit_rl

    def flaky(data, lam=1.0, **kw):
        calls["n"] += 1
        if calls["n"] == 1:
            raise ConvergenceError("forced")
        return real(data, lam, **kw)

    monkeypatch.setattr(simlab, "fit_rl", flaky)
    res = run_study(design(replicates=100, estimators=("rl",)))
    assert res["rl"].failures == 1 and res["rl"].n_ok == 99
    calls["n"] = 0
    with pytest.raises(SimulationError):
        run_study(design(replicates=50, estimators=("rl",)))


def test_linnet_generation_lambda_is_mean_variance_ratio():
    d = design(profile_x=PrecisionProfile.constant_variance(4.0),
               profile_y=PrecisionProfile.constant_variance(1.0))
    assert d.lam_gen() == pytest.approx(4.0)
    d = design(profile_x=PrecisionProfile.constant_cv(0.1), profile_y=PrecisionProfile.constant_cv(0.1),
               beta_true=2.0)
    assert d.lam_gen() == pytest.approx(0.25)


def test_design_validation():
    with pytest.raises(DataError):
        design(mu_low=0.0)
    with pytest.raises(DataError):
        design(replicates=0)
    with pytest.raises(DataError):
        design(estimators=("bogus",))


def test_config_errors_list_fields():
    cfg = bundled_config("rl_bias")
    cfg["n"] = "many"
    cfg["profile_x"] = {"family": "Nope", "params": [1]}
    cfg["extra"] = 1
    with pytest.raises(ConfigError) as info:
        validate_config(cfg)
    assert "n" in info.value.fields
    assert any(f.startswith("profile_x") for f in info.value.fields)
    with pytest.raises(ConfigError) as info:
        load_designs({"studies": [bundled_config("rl_bias"), {"n": 5}]})
    assert all(f.startswith("studies/1") for f in info.value.fields)


@pytest.mark.parametrize("name, count", [("rl_bias", 1), ("constant_cv", 2), ("efficiency", 4)])
def test_bundled_configs_load(name, count):
    designs = load_designs(bundled_config(name))
    assert len(designs) == count
    for d in designs:
        assert d.replicates == 1000
        assert SimDesign.from_dict(d.to_dict()) == d
    with pytest.raises(ConfigError):
        bundled_config("nope")


def test_table_layout():
    res = run_study(with_replicates(design(estimators=("rl",), mdl=30.0, name="demo"), 5))
    lines = res.to_csv().splitlines()
    assert lines[0].split(",")[:4] == ["study", "estimator", "rmse_intercept", "eff_intercept"]
    assert lines[1].startswith("demo,utopian,")
    assert len(lines) == 3
    assert math.isfinite(res.mean_correlation)
