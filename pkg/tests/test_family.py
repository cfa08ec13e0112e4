import numpy as np
import pytest
from scipy import stats

from distreg.family import HESS_FLOOR, get_family, lm_family


def _fd_check(fam, y, eta, k, h=1e-5):
    """Central difference of the summed log-likelihood w.r.t. each eta_k[i]."""
    par = fam.linkinv(eta)
    s = fam.score[k](y, par)
    fd = np.empty_like(s)
    for i in range(y.size):
        up = {p: v.copy() for p, v in eta.items()}
        dn = {p: v.copy() for p, v in eta.items()}
        up[k][i] += h
        dn[k][i] -= h
        fd[i] = (fam.loglik(y, fam.linkinv(up)) - fam.loglik(y, fam.linkinv(dn))) / (2 * h)
    return s, fd


def test_gaussian_score_and_hess():
    fam = get_family("gaussian")
    rng = np.random.default_rng(1)
    y = rng.normal(size=50)
    eta = {"mu": rng.normal(size=50), "sigma": rng.normal(scale=0.3, size=50)}
    for k in fam.names:
        s, fd = _fd_check(fam, y, eta, k)
        np.testing.assert_allclose(s, fd, rtol=1e-6, atol=1e-7)
    par = fam.linkinv(eta)
    np.testing.assert_allclose(fam.hess["mu"](y, par), 1 / par["sigma"] ** 2)
    np.testing.assert_allclose(fam.hess["sigma"](y, par), 2.0)


def test_gaussian_example_values():
    fam = get_family("gaussian")
    par = {"mu": np.array([0.0]), "sigma": np.array([1.0])}
    assert fam.score["mu"](np.array([1.0]), par)[0] == pytest.approx(1.0)
    assert fam.score["sigma"](np.array([1.0]), par)[0] == pytest.approx(0.0)
    assert fam.d(np.array([0.0]), par)[0] == pytest.approx(1 / np.sqrt(2 * np.pi))
    with pytest.raises(ValueError):
        fam.d(np.array([0.0]), {"mu": np.array([0.0]), "sigma": np.array([-1.0])})


def test_binomial():
    fam = get_family("binomial")
    y = np.array([0.0, 1.0, 1.0])
    par = {"pi": np.array([0.2, 0.5, 0.9])}
    np.testing.assert_allclose(fam.score["pi"](y, par), y - par["pi"])
    np.testing.assert_allclose(fam.hess["pi"](y, par), par["pi"] * (1 - par["pi"]))
    assert fam.loglik(y, par) == pytest.approx(np.log(0.8) + np.log(0.5) + np.log(0.9))
    with pytest.raises(ValueError):
        fam.score["pi"](np.array([2.0]), {"pi": np.array([0.5])})
    np.testing.assert_array_equal(fam.encode_response(["no", "yes", "no"]), [0, 1, 0])


def test_ztnbinom_density_sums_to_one():
    fam = get_family("ztnbinom")
    y = np.arange(1, 3000, dtype=float)
    par = {"mu": np.full(y.size, 5.0), "theta": np.full(y.size, 2.0)}
    assert np.sum(fam.d(y, par)) == pytest.approx(1.0, abs=1e-12)
    assert fam.d(np.array([0.0]), {"mu": np.array([5.0]), "theta": np.array([2.0])})[0] == 0.0


def test_ztnbinom_matches_truncated_nbinom():
    fam = get_family("ztnbinom")
    mu, theta = 3.0, 1.5
    p = theta / (theta + mu)
    y = np.arange(1, 20, dtype=float)
    par = {"mu": np.full(y.size, mu), "theta": np.full(y.size, theta)}
    ref = stats.nbinom.pmf(y, theta, p) / (1 - stats.nbinom.pmf(0, theta, p))
    np.testing.assert_allclose(fam.d(y, par), ref, rtol=1e-10)
    np.testing.assert_allclose(fam.p(y, par), np.cumsum(ref), rtol=1e-9)


def test_ztnbinom_score_finite_differences():
    fam = get_family("ztnbinom")
    rng = np.random.default_rng(3)
    y = rng.integers(1, 40, size=40).astype(float)
    eta = {"mu": rng.uniform(-1, 4, size=40), "theta": rng.uniform(-2, 2.5, size=40)}
    for k in fam.names:
        s, fd = _fd_check(fam, y, eta, k, h=1e-6)
        np.testing.assert_allclose(s, fd, rtol=1e-5, atol=1e-7)


def test_ztnbinom_hess_floor():
    fam = get_family("ztnbinom")
    rng = np.random.default_rng(4)
    y = rng.integers(1, 40, size=200).astype(float)
    par = {"mu": rng.uniform(0.2, 30, 200), "theta": rng.uniform(0.1, 10, 200)}
    for k in fam.names:
        h = fam.hess[k](y, par)
        assert np.all(h >= HESS_FLOOR) and np.all(np.isfinite(h))


def test_ztnbinom_random_draws_match_moments():
    fam = get_family("ztnbinom")
    rng = np.random.default_rng(5)
    n = 100_000
    par = {"mu": np.full(n, 4.0), "theta": np.full(n, 2.0)}
    y = fam.r(n, par, rng)
    assert y.min() >= 1
    p0 = (2 / 6) ** 2
    assert y.mean() == pytest.approx(4.0 / (1 - p0), rel=0.01)


def test_lm_family_score_is_exact_gradient():
    fam = lm_family(2)
    rng = np.random.default_rng(6)
    y = rng.normal(size=30)
    eta = {"mu": rng.normal(size=30)}
    s, fd = _fd_check(fam, y, eta, "mu")
    np.testing.assert_allclose(s, fd, rtol=1e-5)
    with pytest.raises(ValueError, match="degenerate"):
        fam.d(y, {"mu": y})


def test_unknown_family():
    with pytest.raises(ValueError, match="unknown family"):
        get_family("weibull")


def test_links_round_trip():
    for name in ("gaussian", "binomial", "ztnbinom"):
        fam = get_family(name)
        eta = {k: np.linspace(-2, 2, 7) for k in fam.names}
        back = fam.linkfun(fam.linkinv(eta))
        for k in fam.names:
            np.testing.assert_allclose(back[k], eta[k], atol=1e-12)
