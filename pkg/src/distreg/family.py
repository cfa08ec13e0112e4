"""Response distributions ("families") for distributional regression.

A family bundles everything the estimation engines need to know about a
response distribution: parameter names and link functions, density, cdf,
quantile function, random generator, and per-parameter score and Hessian
functions with respect to the predictors ``eta``. All functions take the
response first and a dict ``par`` of parameter values (on the parameter
scale, not the predictor scale).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd
from scipy import special, stats

__all__ = [
    "Link",
    "Family",
    "LINKS",
    "gaussian_family",
    "binomial_family",
    "ztnbinom_family",
    "lm_family",
    "get_family",
    "FAMILIES",
]

HESS_FLOOR = 1e-10


@dataclass(frozen=True)
class Link:
    name: str
    fun: Callable[[np.ndarray], np.ndarray]  # parameter -> predictor
    inv: Callable[[np.ndarray], np.ndarray]  # predictor -> parameter


def _expit(eta):
    return special.expit(eta)


LINKS = {
    "identity": Link("identity", lambda x: np.asarray(x, dtype=float), lambda e: np.asarray(e, dtype=float)),
    "log": Link("log", np.log, np.exp),
    "logit": Link("logit", special.logit, _expit),
}


@dataclass(frozen=True)
class Family:
    name: str
    names: tuple[str, ...]
    links: dict[str, Link]
    d: Callable
    p: Callable | None
    q: Callable | None
    r: Callable | None
    score: dict[str, Callable]
    hess: dict[str, Callable]
    init: dict[str, Callable] = field(default_factory=dict)
    discrete: bool = False
    support_min: int | None = None
    encode: Callable[[pd.Series], np.ndarray] | None = None
    options: dict = field(default_factory=dict)

    def loglik(self, y, par) -> float:
        return float(np.sum(self.d(y, par, log=True)))

    def linkinv(self, eta: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        return {k: self.links[k].inv(eta[k]) for k in self.names}

    def linkfun(self, par: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        return {k: self.links[k].fun(par[k]) for k in self.names}

    def encode_response(self, y) -> np.ndarray:
        if self.encode is not None:
            return self.encode(y)
        y = pd.Series(y)
        if not pd.api.types.is_numeric_dtype(y):
            raise TypeError(f"family {self.name!r} needs a numeric response")
        return np.asarray(y, dtype=float)

    def __repr__(self) -> str:
        links = ", ".join(f"{k} = {self.links[k].name}" for k in self.names)
        return f"Family: {self.name}\nLink function: {links}"


def _positive(par, key):
    v = np.asarray(par[key], dtype=float)
    if np.any(~(v > 0)):
        raise ValueError(f"parameter {key!r} must be positive")
    return v


# --------------------------------------------------------------------------
# Gaussian


def gaussian_family() -> Family:
    def d(y, par, log=False):
        sigma = _positive(par, "sigma")
        return stats.norm.logpdf(y, par["mu"], sigma) if log else stats.norm.pdf(y, par["mu"], sigma)

    def p(y, par):
        return stats.norm.cdf(y, par["mu"], _positive(par, "sigma"))

    def q(u, par):
        return stats.norm.ppf(u, par["mu"], _positive(par, "sigma"))

    def r(n, par, rng):
        return rng.normal(par["mu"], _positive(par, "sigma"), size=n)

    def score_mu(y, par):
        return (y - par["mu"]) / _positive(par, "sigma") ** 2

    def score_sigma(y, par):
        return -1.0 + (y - par["mu"]) ** 2 / _positive(par, "sigma") ** 2

    def hess_mu(y, par):
        return np.broadcast_to(1.0 / _positive(par, "sigma") ** 2, np.shape(y)).astype(float)

    def hess_sigma(y, par):
        return np.full(np.shape(y), 2.0)

    return Family(
        name="gaussian",
        names=("mu", "sigma"),
        links={"mu": LINKS["identity"], "sigma": LINKS["log"]},
        d=d, p=p, q=q, r=r,
        score={"mu": score_mu, "sigma": score_sigma},
        hess={"mu": hess_mu, "sigma": hess_sigma},
        init={"mu": lambda y: np.mean(y), "sigma": lambda y: max(np.std(y), 1e-4)},
    )


# --------------------------------------------------------------------------
# Binomial (Bernoulli) with logit link


def _encode_binary(y) -> np.ndarray:
    y = pd.Series(y)
    if pd.api.types.is_bool_dtype(y):
        return y.to_numpy(dtype=float)
    if pd.api.types.is_numeric_dtype(y):
        v = y.to_numpy(dtype=float)
        if not np.all(np.isin(v, (0.0, 1.0))):
            raise ValueError("binomial response must be 0/1")
        return v
    levels = sorted(y.dropna().unique())
    if len(levels) != 2:
        raise ValueError(f"binomial response needs exactly two levels, found {levels}")
    return (y == levels[1]).to_numpy(dtype=float)


def binomial_family() -> Family:
    eps = 1e-15

    def _pi(par):
        return np.clip(np.asarray(par["pi"], dtype=float), eps, 1 - eps)

    def _check(y):
        y = np.asarray(y, dtype=float)
        if np.any(~np.isin(y, (0.0, 1.0))):
            raise ValueError("binomial response must be 0 or 1")
        return y

    def d(y, par, log=False):
        y = _check(y)
        pi = _pi(par)
        ll = y * np.log(pi) + (1 - y) * np.log1p(-pi)
        return ll if log else np.exp(ll)

    def p(y, par):
        pi = _pi(par)
        y = np.asarray(y, dtype=float)
        return np.where(y < 0, 0.0, np.where(y < 1, 1 - pi, 1.0))

    def q(u, par):
        return (np.asarray(u) > 1 - _pi(par)).astype(float)

    def r(n, par, rng):
        return rng.binomial(1, _pi(par), size=n).astype(float)

    return Family(
        name="binomial",
        names=("pi",),
        links={"pi": LINKS["logit"]},
        d=d, p=p, q=q, r=r,
        score={"pi": lambda y, par: _check(y) - _pi(par)},
        hess={"pi": lambda y, par: np.broadcast_to(_pi(par) * (1 - _pi(par)), np.shape(y)).astype(float)},
        init={"pi": lambda y: float(np.clip(np.mean(y), 0.01, 0.99))},
        discrete=True,
        support_min=0,
        encode=_encode_binary,
    )


# --------------------------------------------------------------------------
# Zero-truncated negative binomial, mean mu and size theta of the
# untruncated distribution (Var = mu + mu^2 / theta before truncation).


def _ztnb_parts(par):
    mu = _positive(par, "mu")
    theta = _positive(par, "theta")
    lr = np.log(theta) - np.log(theta + mu)  # log(theta / (theta + mu))
    log_p0 = -theta * np.log1p(mu / theta)
    log1m_p0 = np.log(-np.expm1(log_p0))
    ratio = 1.0 / np.expm1(-log_p0)  # P0 / (1 - P0)
    return mu, theta, lr, log_p0, log1m_p0, ratio


def _check_counts(y):
    y = np.asarray(y, dtype=float)
    if np.any(y < 1) or np.any(y != np.floor(y)):
        raise ValueError("ztnbinom response must be integers >= 1")
    return y


def ztnbinom_family() -> Family:
    def d(y, par, log=False):
        y = np.asarray(y, dtype=float)
        mu, theta, lr, log_p0, log1m_p0, _ = _ztnb_parts(par)
        ok = (y >= 1) & (y == np.floor(y))
        ys = np.where(ok, y, 1.0)
        ll = (special.gammaln(ys + theta) - special.gammaln(theta) - special.gammaln(ys + 1)
              + theta * lr + ys * (np.log(mu) - np.log(theta + mu)) - log1m_p0)
        ll = np.where(ok, ll, -np.inf)
        return ll if log else np.exp(ll)

    def p(y, par):
        y = np.floor(np.asarray(y, dtype=float))
        mu, theta, _, log_p0, log1m_p0, _ = _ztnb_parts(par)
        prob = theta / (theta + mu)
        cdf = stats.nbinom.cdf(np.maximum(y, 0), theta, prob)
        out = (cdf - np.exp(log_p0)) / np.exp(log1m_p0)
        return np.where(y < 1, 0.0, np.clip(out, 0.0, 1.0))

    def q(u, par):
        mu, theta, _, log_p0, log1m_p0, _ = _ztnb_parts(par)
        p0 = np.exp(log_p0)
        target = p0 + np.asarray(u, dtype=float) * np.exp(log1m_p0)
        out = stats.nbinom.ppf(np.minimum(target, 1.0), theta, theta / (theta + mu))
        return np.maximum(out, 1.0)

    def r(n, par, rng):
        return q(rng.uniform(size=n), par)

    def score_mu(y, par):
        y = _check_counts(y)
        mu, theta, _, _, _, ratio = _ztnb_parts(par)
        c = theta * mu / (theta + mu)
        return theta * (y - mu) / (theta + mu) - ratio * c

    def score_theta(y, par):
        y = _check_counts(y)
        mu, theta, lr, _, _, ratio = _ztnb_parts(par)
        g = lr + mu / (theta + mu)  # d log P0 / d theta
        s = (special.digamma(y + theta) - special.digamma(theta) + lr
             + (mu - y) / (theta + mu) + ratio * g)
        return theta * s

    def hess_mu(y, par):
        y = _check_counts(y)
        mu, theta, _, log_p0, log1m_p0, ratio = _ztnb_parts(par)
        tm = theta + mu
        c = theta * mu / tm
        p0_over_sq = np.exp(log_p0 - 2 * log1m_p0)
        h = theta * mu * (theta + y) / tm**2 - c**2 * p0_over_sq + ratio * theta**2 * mu / tm**2
        return np.maximum(h, HESS_FLOOR)

    def hess_theta(y, par):
        y = _check_counts(y)
        mu, theta, lr, log_p0, log1m_p0, ratio = _ztnb_parts(par)
        tm = theta + mu
        g = lr + mu / tm
        s = (special.digamma(y + theta) - special.digamma(theta) + lr
             + (mu - y) / tm + ratio * g)
        dlr = mu / (theta * tm)
        dratio = np.exp(log_p0 - 2 * log1m_p0) * g
        ds = (special.polygamma(1, y + theta) - special.polygamma(1, theta) + dlr
              - (mu - y) / tm**2 + dratio * g + ratio * (dlr - mu / tm**2))
        h = -theta * (s + theta * ds)
        return np.maximum(h, HESS_FLOOR)

    def init_theta(y):
        m, v = np.mean(y), np.var(y)
        return float(m**2 / (v - m)) if v > m else 10.0

    return Family(
        name="ztnbinom",
        names=("mu", "theta"),
        links={"mu": LINKS["log"], "theta": LINKS["log"]},
        d=d, p=p, q=q, r=r,
        score={"mu": score_mu, "theta": score_theta},
        hess={"mu": hess_mu, "theta": hess_theta},
        init={"mu": lambda y: float(np.mean(y)), "theta": init_theta},
        discrete=True,
        support_min=1,
    )


# --------------------------------------------------------------------------
# Linear model with a plug-in residual standard deviation


def lm_family(p_effective: int) -> Family:
    """Gaussian mean-only model; sigma is the plug-in residual SD.

    ``sigma = sqrt(RSS / (n - p_effective))`` is computed from the whole
    response vector on every call, so densities are not pointwise
    independent. The score is the exact gradient of the summed
    log-likelihood including that dependence.
    """
    p_eff = int(p_effective)

    def _sigma(y, mu):
        y = np.asarray(y, dtype=float)
        n = y.size
        if n <= p_eff:
            raise ValueError(f"lm family needs more than {p_eff} observations, got {n}")
        rss = float(np.sum((y - mu) ** 2))
        if rss <= 0:
            raise ValueError("residual variance is zero; lm density is degenerate")
        return np.sqrt(rss / (n - p_eff)), n

    def d(y, par, log=False):
        sigma, _ = _sigma(y, par["mu"])
        return stats.norm.logpdf(y, par["mu"], sigma) if log else stats.norm.pdf(y, par["mu"], sigma)

    def p(y, par):
        sigma, _ = _sigma(y, par["mu"])
        return stats.norm.cdf(y, par["mu"], sigma)

    def score(y, par):
        sigma, n = _sigma(y, par["mu"])
        return (np.asarray(y) - par["mu"]) / sigma**2 * n / (n - p_eff)

    def hess(y, par):
        sigma, n = _sigma(y, par["mu"])
        return np.full(np.shape(y), n / ((n - p_eff) * sigma**2))

    return Family(
        name="lm",
        names=("mu",),
        links={"mu": LINKS["identity"]},
        d=d, p=p, q=None, r=None,
        score={"mu": score},
        hess={"mu": hess},
        init={"mu": lambda y: float(np.mean(y))},
        options={"p_effective": p_eff},
    )


FAMILIES = {
    "gaussian": gaussian_family,
    "binomial": binomial_family,
    "ztnbinom": ztnbinom_family,
    "lm": lm_family,
}


def get_family(name: str, **kwargs) -> Family:
    try:
        maker = FAMILIES[name]
    except KeyError:
        raise ValueError(f"unknown family {name!r}; choose from {sorted(FAMILIES)}") from None
    if name == "lm":
        return maker(kwargs.get("p_effective", 1))
    return maker()
