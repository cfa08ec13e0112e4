import dataclasses

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

import distreg as d
from distreg.design import build_frame
from distreg.diagnostics import mcse
from distreg.family import LINKS
from distreg.formula import parse_formula_set
from distreg.sampler import GibbsPrior, SampleMatrix, saved_iterations, slice_step


class RecordingRng:
    """Generator wrapper remembering the last exponential draw (the slice level offset)."""

    def __init__(self, seed):
        self.g = np.random.default_rng(seed)
        self.last_exp = None

    def exponential(self):
        self.last_exp = self.g.exponential()
        return self.last_exp

    def uniform(self):
        return self.g.uniform()


def _normal(x):
    return -0.5 * x * x


def test_slice_normal_moments():
    rng = np.random.default_rng(11)
    x, out = 0.0, np.empty(20_000)
    for i in range(out.size):
        x = slice_step(_normal, x, rng=rng)
        out[i] = x
    assert abs(out.mean()) < 0.03
    assert 0.93 <= out.var() <= 1.07


def test_slice_returns_point_above_level():
    rng = RecordingRng(3)
    x = 0.3
    for _ in range(2000):
        f0 = _normal(x)
        x = slice_step(_normal, x, rng=rng)
        assert _normal(x) >= f0 - rng.last_exp


def test_slice_bimodal_visits_both_modes():
    def target(x):
        return np.logaddexp(-0.5 * (x - 3) ** 2, -0.5 * (x + 3) ** 2)

    rng = np.random.default_rng(5)
    x, out = 3.0, np.empty(20_000)
    for i in range(out.size):
        x = slice_step(target, x, rng=rng)
        out[i] = x
    assert 0.2 <= np.mean(out > 0) <= 0.8


def test_slice_rejects_nonfinite_start():
    with pytest.raises(ValueError):
        slice_step(lambda x: -np.inf, 0.0, rng=np.random.default_rng(0))


@settings(max_examples=100, deadline=None)
@given(n_iter=st.integers(1, 500), burnin=st.integers(0, 500), thin=st.integers(1, 40))
def test_retention_grid(n_iter, burnin, thin):
    if burnin > n_iter:
        with pytest.raises(ValueError):
            saved_iterations(n_iter, burnin, thin)
        return
    it = saved_iterations(n_iter, burnin, thin)
    assert it.size == len(range(burnin, n_iter + 1, thin))
    assert it[0] == burnin and it[-1] <= n_iter


@pytest.mark.parametrize("n_iter, burnin, thin", [(10, 0, 1), (10, 3, 4), (25, 25, 1), (31, 5, 7)])
def test_gmcmc_row_count(swiss_frame, swiss_fit, n_iter, burnin, thin):
    s = d.gmcmc(swiss_frame, swiss_fit.parameters(swiss_frame), n_iter=n_iter, burnin=burnin, thin=thin, seed=1)
    assert s.nsave == len(range(burnin, n_iter + 1, thin))


def test_gmcmc_reproducible_and_round_trip(swiss_frame, swiss_fit, tmp_path):
    start = swiss_fit.parameters(swiss_frame)
    a = d.gmcmc(swiss_frame, start, n_iter=200, burnin=50, seed=9)
    b = d.gmcmc(swiss_frame, start, n_iter=200, burnin=50, seed=9)
    assert a == b
    a.write(tmp_path / "samples.csv")
    assert SampleMatrix.read(tmp_path / "samples.csv") == a
    assert (tmp_path / "samples.meta.json").exists()


def test_gmcmc_columns_alpha_and_tau2(mcycle_frame):
    fit = d.backfit(mcycle_frame)
    s = d.gmcmc(mcycle_frame, fit.parameters(mcycle_frame), n_iter=300, burnin=100, seed=2)
    assert set(mcycle_frame.coef_names) <= set(s.colnames)
    for p in ("mu", "sigma"):
        a = s[f"{p}.alpha"]
        assert np.all((a >= 0) & (a <= 1))
        assert np.all(s[f"{p}.s.s(times).tau21"] > 0)
    assert np.all(s["mu.alpha"] > 0.999)  # Gaussian mean proposals are exact
    assert len(s.block_alpha) == 4


def _prior_only_frame(n=50):
    gauss = d.get_family("gaussian")
    fam = dataclasses.replace(
        gauss, name="flat", names=("mu",), links={"mu": LINKS["identity"]},
        d=lambda y, par, log=False: np.zeros(len(y)) if log else np.ones(len(y)),
        score={"mu": lambda y, par: np.zeros(len(y))},
        hess={"mu": lambda y, par: np.zeros(len(y))},
        init={"mu": lambda y: 0.0},
    )
    tab = pd.DataFrame({"y": np.zeros(n)})
    return build_frame(parse_formula_set(["y ~ 1"], fam), tab, fam)


def test_gmcmc_constant_likelihood_follows_prior():
    fr = _prior_only_frame()
    s = d.gmcmc(fr, n_iter=10_000, burnin=0, seed=4)
    x = s["mu.p.(Intercept)"]
    assert stats.kstest(x, stats.norm(0, 1000).cdf).statistic < 0.05


def test_gibbs_posterior_shape():
    tab, X, _ = d.datasets.simulate_lm(100, 3, seed=1)
    s = d.gibbs_lm(X, tab.y, GibbsPrior.flat(3, a=2.0), n_iter=500, burnin=100, thin=2, seed=1,
                   colnames=["(Intercept)", "x1", "x2"])
    assert s.info["a_post"] == 2.0 + 100 / 2 + 3 / 2
    assert s.colnames == ["mu.p.(Intercept)", "mu.p.x1", "mu.p.x2", "sigma"]
    assert s.nsave == len(range(100, 501, 2))


def test_gibbs_flat_prior_matches_ols():
    tab, X, _ = d.datasets.simulate_lm(200, 3, seed=2)
    y = tab.y.to_numpy()
    ols = np.linalg.lstsq(X, y, rcond=None)[0]
    s = d.gibbs_lm(X, y, GibbsPrior.flat(3), seed=3)
    for j, c in enumerate(s.colnames[:3]):
        assert abs(s[c].mean() - ols[j]) < 3 * mcse(s[c])


def test_gibbs_dominant_prior():
    tab, X, _ = d.datasets.simulate_lm(100, 3, seed=2)
    m = np.array([0.3, -2.0, 5.0])
    s = d.gibbs_lm(X, tab.y, GibbsPrior(m=m, M=1e-8 * np.eye(3)), n_iter=2000, burnin=500, thin=1, seed=3)
    np.testing.assert_allclose(s.draws[:, :3].mean(axis=0), m, atol=1e-3)


def test_gibbs_prior_validation():
    with pytest.raises(ValueError, match="positive definite"):
        GibbsPrior(m=np.zeros(2), M=np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(ValueError, match="symmetric"):
        GibbsPrior(m=np.zeros(2), M=np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        d.gibbs_lm(np.zeros((0, 2)), np.zeros(0), GibbsPrior.flat(2))


def test_constant_chain_statistics(swiss_frame, swiss_fit):
    p = swiss_fit.parameters(swiss_frame)
    names = swiss_frame.coef_names
    s = SampleMatrix(np.tile([p[c] for c in names], (20, 1)), names, 19, 0, 1)
    st_ = d.samplestats(s, swiss_frame)
    assert st_["pd"] == pytest.approx(0.0, abs=1e-9)
    assert st_["DIC"] == pytest.approx(-2 * swiss_fit.logLik)
    w = d.waic(s, swiss_frame)
    assert w["pWAIC"] == pytest.approx(0.0, abs=1e-9)
    assert w["WAIC"] == pytest.approx(-2 * swiss_fit.logLik)


def test_empty_samples_rejected(swiss_frame):
    s = SampleMatrix(np.zeros((0, len(swiss_frame.coef_names))), swiss_frame.coef_names, 1, 1, 1)
    with pytest.raises(ValueError, match="empty"):
        d.samplestats(s, swiss_frame)


def test_waic_close_to_dic_for_linear_model():
    tab, X, _ = d.datasets.simulate_lm(300, 4, seed=8)
    fr = d.model_frame("y ~ x1 + x2 + x3", tab, "gaussian")
    fit = d.backfit(fr)
    s = d.gmcmc(fr, fit.parameters(fr), n_iter=3000, burnin=500, seed=8)
    st_, w = d.samplestats(s, fr), d.waic(s, fr)
    assert w["pWAIC"] >= 0
    assert abs(w["WAIC"] - st_["DIC"]) / st_["DIC"] < 0.10
    assert st_["pd"] == pytest.approx(5, abs=1)
