import types

import numpy as np
import pandas as pd
import pytest
from scipy import stats

import distreg as d
from distreg.diagnostics import acf_summary, crps_from_parameters, ess, mcse, quantile_residuals, rootogram_freq
from distreg.predict import c95


def _normal_crps(y, mu, sigma):
    z = (y - mu) / sigma
    return sigma * (z * (2 * stats.norm.cdf(z) - 1) + 2 * stats.norm.pdf(z) - 1 / np.sqrt(np.pi))


def test_crps_standard_normal_at_zero():
    out = crps_from_parameters(d.get_family("gaussian"), [0.0], {"mu": 0.0, "sigma": 1.0})
    assert out.crps[0] == pytest.approx(0.23370, abs=1e-5)
    assert out.converged[0]


def test_crps_matches_closed_form():
    rng = np.random.default_rng(1)
    y, mu, sigma = rng.normal(size=20), rng.normal(size=20), rng.uniform(0.2, 3, size=20)
    out = crps_from_parameters(d.get_family("gaussian"), y, {"mu": mu, "sigma": sigma})
    np.testing.assert_allclose(out.crps, _normal_crps(y, mu, sigma), atol=1e-5)
    assert np.all(out.crps >= 0)


def test_crps_point_mass_is_absolute_error():
    fam = types.SimpleNamespace(p=lambda t, par: (t >= par["c"]).astype(float))
    out = crps_from_parameters(fam, [0.5, 3.0, -2.0], {"c": np.array([1.0, 1.0, 1.0])})
    np.testing.assert_allclose(out.crps, [0.5, 2.0, 3.0], atol=1e-4)


def test_c95_on_grid():
    assert c95(np.arange(1, 101)) == pytest.approx((3.475, 50.5, 97.525))
    with pytest.raises(ValueError):
        c95([])


def _ar1(phi, n, seed):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / np.sqrt(1 - phi**2)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + e[i]
    return x


def test_acf_properties():
    x = _ar1(0.7, 20_000, 3)
    out = acf_summary(np.column_stack([x, np.random.default_rng(4).standard_normal(x.size)]), max_lag=10)
    assert out.loc[0, "V1"] == 1.0 and out.loc[0, "V2"] == 1.0
    assert np.all(out[["V1", "V2"]].abs() <= 1 + 1e-12)
    assert out.loc[1, "V1"] == pytest.approx(0.7, abs=0.03)
    assert out.loc[2, "V1"] == pytest.approx(0.49, abs=0.04)
    assert np.all(out.loc[1:, "V2"].abs() < 4 / np.sqrt(x.size))
    np.testing.assert_allclose(out["max"], out[["V1", "V2"]].abs().max(axis=1))


def test_acf_matches_direct_formula():
    x = np.random.default_rng(0).standard_normal(200)
    xc = x - x.mean()
    direct = [np.sum(xc[: x.size - k] * xc[k:]) / np.sum(xc * xc) for k in range(6)]
    np.testing.assert_allclose(acf_summary(x[:, None], max_lag=5)["V1"], direct, atol=1e-12)


def test_acf_constant_and_short_chains():
    out = acf_summary(pd.DataFrame({"a": np.ones(50), "mu.alpha": np.ones(50)}), max_lag=5)
    assert list(out.columns) == ["lag", "a", "max"]
    assert np.all(out.a[1:] == 0)
    with pytest.raises(ValueError):
        acf_summary(np.zeros((5, 1)), max_lag=10)


def test_ess_and_mcse_for_ar1():
    phi, n = 0.5, 50_000
    x = _ar1(phi, n, 9)
    assert ess(x) == pytest.approx(n * (1 - phi) / (1 + phi), rel=0.15)
    assert mcse(x) == pytest.approx(np.std(x) / np.sqrt(ess(x)), rel=1e-3)
    assert ess(np.ones(10)) == 10


def test_residuals_uniform_for_gaussian_fit():
    rng = np.random.default_rng(21)
    x = rng.uniform(size=2000)
    tab = pd.DataFrame({"x": x, "y": 1 + 2 * x + np.exp(-1 + x) * rng.standard_normal(x.size)})
    fr = d.model_frame(["y ~ x", "sigma ~ x"], tab, "gaussian")
    r = quantile_residuals(d.backfit(fr), fr).residuals
    assert stats.kstest(r, "norm").statistic < 0.035
    assert r.size == 2000


def test_discrete_residuals_seeded(swiss_frame, swiss_fit):
    a = quantile_residuals(swiss_fit, swiss_frame, seed=5)
    b = quantile_residuals(swiss_fit, swiss_frame, seed=5)
    c = quantile_residuals(swiss_fit, swiss_frame, seed=6)
    np.testing.assert_array_equal(a.residuals, b.residuals)
    assert not np.array_equal(a.residuals, c.residuals)
    assert a.seed == 5
    assert stats.kstest(a.residuals, "norm").pvalue > 1e-3


def test_rootogram_totals(swiss_frame, swiss_fit):
    r = rootogram_freq(swiss_fit, swiss_frame)
    assert list(r["count"]) == [0, 1]
    assert r.observed.sum() == swiss_frame.n
    assert r.expected.sum() == pytest.approx(swiss_frame.n)


def test_rootogram_ztnb_expected_sums_to_n():
    tab = d.datasets.simulate_ztnb(400, seed=3)
    fr = d.model_frame(["y ~ x1", "theta ~ 1"], tab, "ztnbinom")
    fit = d.backfit(fr)
    r = rootogram_freq(fit, fr, max_count=400)
    assert r["count"].iloc[0] == 1
    assert r.observed.sum() == 400
    assert r.expected.sum() == pytest.approx(400, rel=1e-6)


def test_rootogram_rejects_continuous(mcycle_frame):
    with pytest.raises(ValueError, match="count"):
        rootogram_freq(d.backfit(mcycle_frame, max_iter=5), mcycle_frame)
