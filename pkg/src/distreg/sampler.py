"""MCMC samplers and sample-based information criteria.

``gmcmc`` updates each term block by a Metropolis-Hastings step with an
IWLS Gaussian proposal built at the current state; special terms are
moved by their own ``propose`` hook. ``gibbs_lm`` is the conjugate Gibbs
sampler for the normal linear model.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Mapping, Sequence

import numpy as np
from scipy import linalg, stats

from .engine import (IG_A, IG_B, NumericalError, W_MAX, W_MIN, _chol, compute_eta,
                     initial_state)

if TYPE_CHECKING:
    from .design import ModelFrame

__all__ = [
    "SampleMatrix",
    "GibbsPrior",
    "slice_step",
    "gmcmc",
    "gibbs_lm",
    "samplestats",
    "waic",
    "saved_iterations",
]


def saved_iterations(n_iter: int, burnin: int, thin: int) -> np.ndarray:
    """Iterations kept by the sampler: ``burnin, burnin + thin, ... <= n_iter``."""
    if thin < 1:
        raise ValueError("thin must be >= 1")
    if burnin < 0 or n_iter < 1 or burnin > n_iter:
        raise ValueError(f"need 0 <= burnin <= n_iter, got burnin={burnin}, n_iter={n_iter}")
    return np.arange(burnin, n_iter + 1, thin)


@dataclass
class SampleMatrix:
    """Saved draws, one row per kept iteration.

    Row ``i`` corresponds to iteration ``saved_iterations(...)[i]``; the
    starting state counts as iteration 0.
    """

    draws: np.ndarray
    colnames: list[str]
    n_iter: int
    burnin: int
    thin: int
    seed: int | None = None
    block_alpha: dict[str, float] = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 2 or self.draws.shape[1] != len(self.colnames):
            raise ValueError("draws must be a matrix with one column per name")

    @property
    def nsave(self) -> int:
        return self.draws.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.colnames.index(name)]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.column(name)

    def mean(self) -> dict[str, float]:
        return dict(zip(self.colnames, self.draws.mean(axis=0)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SampleMatrix):
            return NotImplemented
        return (self.colnames == other.colnames and np.array_equal(self.draws, other.draws)
                and (self.n_iter, self.burnin, self.thin, self.seed)
                == (other.n_iter, other.burnin, other.thin, other.seed))

    def meta(self) -> dict:
        return {"seed": self.seed, "n_iter": self.n_iter, "burnin": self.burnin, "thin": self.thin,
                "nsave": self.nsave, "block_alpha": self.block_alpha, "info": self.info}

    def write(self, path: str | Path) -> Path:
        """Write ``path`` (CSV) and ``<stem>.meta.json``; floats keep full precision."""
        path = Path(path)
        lines = [",".join(self.colnames)]
        lines += [",".join("%.17g" % v for v in row) for row in self.draws]
        path.write_text("\n".join(lines) + "\n")
        _sidecar(path).write_text(json.dumps(self.meta(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path: str | Path) -> "SampleMatrix":
        path = Path(path)
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        draws = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        meta = json.loads(_sidecar(path).read_text())
        return cls(draws=draws.reshape(-1, len(header)), colnames=header, n_iter=meta["n_iter"],
                   burnin=meta["burnin"], thin=meta["thin"], seed=meta["seed"],
                   block_alpha=meta.get("block_alpha", {}), info=meta.get("info", {}))


def _sidecar(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


# --------------------------------------------------------------------------
# slice sampling


def slice_step(log_target: Callable[[float], float], x0: float, w: float = 1.0, m_expand: int = 50,
               rng: np.random.Generator | None = None) -> float:
    """One univariate slice-sampling update with stepping out and shrinkage."""
    rng = np.random.default_rng() if rng is None else rng
    f0 = log_target(x0)
    if not np.isfinite(f0):
        raise ValueError("log target is not finite at the starting point")
    level = f0 - rng.exponential()
    left = x0 - w * rng.uniform()
    right = left + w
    j = int(np.floor(m_expand * rng.uniform()))
    k = m_expand - 1 - j
    while j > 0 and log_target(left) > level:
        left -= w
        j -= 1
    while k > 0 and log_target(right) > level:
        right += w
        k -= 1
    while True:
        x1 = left + rng.uniform() * (right - left)
        if log_target(x1) >= level:
            return float(x1)
        if x1 < x0:
            left = x1
        else:
            right = x1
        if right - left < 1e-300:
            return float(x0)


# --------------------------------------------------------------------------
# blockwise IWLS Metropolis-Hastings


def _column_layout(frame: "ModelFrame") -> list[str]:
    cols: list[str] = []
    for param in frame.family.names:
        for bl in frame.blocks[param]:
            cols.extend(bl.coef_names)
            cols.extend(bl.tau2_names)
        cols.append(f"{param}.alpha")
    return cols


def _proposal(frame, eta, param, bl, beta_j, tau2):
    """Mean, Cholesky factor and log-determinant of the IWLS proposal at ``eta``."""
    fam, y = frame.family, frame.y
    par = fam.linkinv(eta)
    s = np.asarray(fam.score[param](y, par), dtype=float)
    w = np.clip(np.asarray(fam.hess[param](y, par), dtype=float), W_MIN, W_MAX)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(w))):
        raise NumericalError(f"non-finite working quantities for parameter {param!r}")
    r = s / w + bl.fit(beta_j)  # z - eta_{-j}
    XW = bl.X.T * w
    P = XW @ bl.X
    if bl.penalties:
        P = P + bl.penalty(tau2)
    (L, lower), _ = _chol(P)
    L = np.tril(L)  # cho_factor leaves the other triangle unspecified
    mean = linalg.cho_solve((L, lower), XW @ r)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return mean, L, logdet


def _log_q(b, mean, L, logdet) -> float:
    d = L.T @ (b - mean)  # P = L L'
    return 0.5 * logdet - 0.5 * float(d @ d)


def _block_log_prior(bl, beta, tau2) -> float:
    if bl.penalties:
        return -0.5 * float(beta @ bl.penalty(tau2) @ beta)
    return 0.0


def _loglik(frame, eta) -> float:
    try:
        val = frame.family.loglik(frame.y, frame.family.linkinv(eta))
    except (ValueError, FloatingPointError):
        return -np.inf
    return val if np.isfinite(val) else -np.inf


def gmcmc(frame: "ModelFrame", start: Mapping[str, float] | None = None, n_iter: int = 1200,
          burnin: int = 200, thin: int = 1, seed: int | None = None) -> SampleMatrix:
    """Blockwise MCMC with IWLS proposals (a Gamerman-type sampler).

    Each regular block draws from the Gaussian approximation of its full
    conditional at the current state and is accepted with the
    Metropolis-Hastings ratio using the reverse proposal built at the
    candidate. Smoothing variances are drawn from their inverse-gamma full
    conditionals. The ``<param>.alpha`` column holds the acceptance
    probability of the iteration averaged over that parameter's blocks.
    """
    t0 = time.perf_counter()
    keep = saved_iterations(n_iter, burnin, thin)
    rng = np.random.default_rng(seed)
    fam = frame.family
    state = initial_state(frame, start)
    beta, tau2, eta = state.beta, state.tau2, state.eta
    ll = _loglik(frame, eta)
    if not np.isfinite(ll):
        raise NumericalError("log-likelihood is not finite at the starting values")

    colnames = _column_layout(frame)
    out = np.empty((keep.size, len(colnames)))
    alpha = {p: 0.0 for p in fam.names}
    acc_sum = {f"{p}:{bl.label}": 0.0 for p in fam.names for bl in frame.blocks[p]}

    def record(row):
        vals = []
        for param in fam.names:
            for j, bl in enumerate(frame.blocks[param]):
                vals.extend(beta[param][j])
                vals.extend(tau2[param][j][:len(bl.tau2_names)])
            vals.append(alpha[param])
        out[row] = vals

    row = 0
    if keep[0] == 0:
        record(0)
        row = 1
    for it in range(1, n_iter + 1):
        for param in fam.names:
            rates = []
            for j, bl in enumerate(frame.blocks[param]):
                if bl.n_coef == 0:
                    continue
                b_old = beta[param][j]
                fit_old = bl.fit(b_old)
                if bl.special is not None:
                    base = eta[param] - fit_old

                    def cond_ll(b, base=base, bl=bl, param=param):
                        e = dict(eta)
                        e[param] = base + bl.fit(b)
                        return _loglik(frame, e)

                    b_new = bl.special.propose(bl.special, b_old, cond_ll, rng)
                    beta[param][j] = b_new
                    eta[param] = base + bl.fit(b_new)
                    ll = _loglik(frame, eta)
                    a = 1.0
                else:
                    t2 = tau2[param][j]
                    mean, L, logdet = _proposal(frame, eta, param, bl, b_old, t2)
                    b_new = mean + linalg.solve_triangular(L.T, rng.standard_normal(bl.n_coef), lower=False)
                    e_new = dict(eta)
                    e_new[param] = eta[param] - fit_old + bl.fit(b_new)
                    ll_new = _loglik(frame, e_new)
                    if np.isfinite(ll_new):
                        try:
                            mean_r, L_r, logdet_r = _proposal(frame, e_new, param, bl, b_new, t2)
                        except NumericalError:
                            log_ratio = -np.inf
                        else:
                            log_ratio = (ll_new + _block_log_prior(bl, b_new, t2)
                                         - ll - _block_log_prior(bl, b_old, t2)
                                         + _log_q(b_old, mean_r, L_r, logdet_r)
                                         - _log_q(b_new, mean, L, logdet))
                    else:
                        log_ratio = -np.inf
                    a = float(np.exp(min(0.0, log_ratio))) if not np.isnan(log_ratio) else 0.0
                    if rng.uniform() < a:
                        beta[param][j] = b_new
                        eta = e_new
                        ll = ll_new
                    if bl.penalties and not bl.fixed:
                        b = beta[param][j]
                        new_t = []
                        for K, rk in zip(bl.penalties, bl.ranks):
                            shape = IG_A + 0.5 * rk
                            scale = IG_B + 0.5 * float(b @ K @ b)
                            new_t.append(scale / rng.gamma(shape))
                        tau2[param][j] = np.array(new_t)
                rates.append(a)
                acc_sum[f"{param}:{bl.label}"] += a
            alpha[param] = float(np.mean(rates)) if rates else 1.0
        if row < keep.size and it == keep[row]:
            record(row)
            row += 1

    return SampleMatrix(
        draws=out, colnames=colnames, n_iter=n_iter, burnin=burnin, thin=thin, seed=seed,
        block_alpha={k: v / n_iter for k, v in acc_sum.items()},
        info={"sampler": "gmcmc", "runtime": time.perf_counter() - t0},
    )


# --------------------------------------------------------------------------
# conjugate Gibbs sampler for the linear model


@dataclass
class GibbsPrior:
    """``beta | sigma2 ~ N(m, sigma2 M)`` and ``sigma2 ~ IG(a, b)``."""

    m: np.ndarray
    M: np.ndarray
    a: float = 1.0
    b: float = 1e-4

    def __post_init__(self):
        self.m = np.atleast_1d(np.asarray(self.m, dtype=float))
        M = np.asarray(self.M, dtype=float)
        if M.ndim == 1:
            M = np.diag(M)
        self.M = M
        if M.shape != (self.m.size, self.m.size):
            raise ValueError("prior covariance M must be p x p")
        if not np.allclose(M, M.T):
            raise ValueError("prior covariance M must be symmetric")
        try:
            np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            raise ValueError("prior covariance M must be positive definite") from None
        if self.a <= 0 or self.b <= 0:
            raise ValueError("inverse-gamma parameters a and b must be positive")

    @classmethod
    def flat(cls, p: int, scale: float = 1e5, a: float = 1.0, b: float = 1e-4) -> "GibbsPrior":
        return cls(m=np.zeros(p), M=scale * np.eye(p), a=a, b=b)


def gibbs_lm(X, y, prior: GibbsPrior, n_iter: int = 12000, burnin: int = 2000, thin: int = 10,
             start: Sequence[float] | None = None, seed: int | None = None,
             colnames: Sequence[str] | None = None) -> SampleMatrix:
    """Gibbs sampler for ``y = X beta + eps`` with normal/inverse-gamma priors.

    Alternates ``sigma2 ~ IG(a + n/2 + p/2, b + RSS/2 + (beta-m)' M^-1 (beta-m)/2)``
    and ``beta ~ N(mu_beta, Sigma_beta)``. Columns are ``mu.p.<col>`` and
    ``sigma`` (the standard deviation).
    """
    if colnames is None and hasattr(X, "columns"):
        colnames = [str(c) for c in X.columns]
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if n <= 0 or y.size != n:
        raise ValueError("need at least one observation and len(y) == nrow(X)")
    if prior.m.size != p:
        raise ValueError("prior dimension does not match X")
    colnames = list(colnames) if colnames is not None else [f"x{i + 1}" for i in range(p)]
    keep = saved_iterations(n_iter, burnin, thin)
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    Minv = linalg.inv(prior.M)
    XtX, Xty = X.T @ X, X.T @ y
    Minv_m = Minv @ prior.m
    a_post = prior.a + n / 2 + p / 2
    beta = np.linalg.lstsq(X, y, rcond=None)[0] if start is None else np.asarray(start, dtype=float)
    sigma2 = np.nan

    out = np.empty((keep.size, p + 1))
    row = 0
    if keep[0] == 0:
        resid = y - X @ beta
        out[0] = np.r_[beta, np.sqrt(resid @ resid / max(n - p, 1))]
        row = 1
    for it in range(1, n_iter + 1):
        resid = y - X @ beta
        dm = beta - prior.m
        b_post = prior.b + 0.5 * resid @ resid + 0.5 * dm @ Minv @ dm
        sigma2 = b_post / rng.gamma(a_post)
        prec = (XtX + Minv) / sigma2
        cf = linalg.cho_factor(prec, lower=True)
        mu = linalg.cho_solve(cf, (Xty + Minv_m) / sigma2)
        beta = mu + linalg.solve_triangular(cf[0].T, rng.standard_normal(p), lower=False)
        if row < keep.size and it == keep[row]:
            out[row] = np.r_[beta, np.sqrt(sigma2)]
            row += 1
    return SampleMatrix(draws=out, colnames=[f"mu.p.{c}" for c in colnames] + ["sigma"],
                        n_iter=n_iter, burnin=burnin, thin=thin, seed=seed,
                        info={"sampler": "gibbs_lm", "a_post": a_post,
                              "runtime": time.perf_counter() - t0})


# --------------------------------------------------------------------------
# sample statistics


def _row_beta(frame: "ModelFrame", samples: SampleMatrix, values: np.ndarray):
    idx = {c: i for i, c in enumerate(samples.colnames)}
    beta = {}
    for param in frame.family.names:
        beta[param] = []
        for bl in frame.blocks[param]:
            beta[param].append(np.array([values[idx[c]] for c in bl.coef_names], dtype=float))
    return beta


def _check(samples: SampleMatrix, frame: "ModelFrame"):
    if samples.nsave == 0:
        raise ValueError("empty sample matrix")
    missing = [c for c in frame.coef_names if c not in samples.colnames]
    if missing:
        raise ValueError(f"samples lack coefficient columns {missing}")


def _pointwise(frame: "ModelFrame", samples: SampleMatrix) -> np.ndarray:
    """``nsave x n`` matrix of pointwise log-densities."""
    out = np.empty((samples.nsave, frame.n))
    for i, values in enumerate(samples.draws):
        out[i] = _row_logdens(frame, samples, values)
    return out


def _row_logdens(frame: "ModelFrame", samples: SampleMatrix, values: np.ndarray) -> np.ndarray:
    """Pointwise log-density for one draw.

    Linear-model draws carry their own ``sigma`` column, which replaces the
    plug-in standard deviation of the ``lm`` family.
    """
    fam = frame.family
    eta = compute_eta(frame, _row_beta(frame, samples, values))
    par = fam.linkinv(eta)
    if fam.name == "lm" and "sigma" in samples.colnames:
        sigma = values[samples.colnames.index("sigma")]
        return stats.norm.logpdf(frame.y, par["mu"], sigma)
    return np.asarray(fam.d(frame.y, par, log=True), dtype=float)


def samplestats(samples: SampleMatrix, frame: "ModelFrame") -> dict[str, float]:
    """DIC and its effective number of parameters.

    ``D = -2 loglik``; ``pd = mean(D) - D(theta_bar)`` with ``theta_bar``
    the posterior mean of the coefficients; ``DIC = mean(D) + pd``.
    ``logLik`` is the posterior mean log-likelihood ``-mean(D) / 2``;
    ``logLik_at_mean`` is the log-likelihood at ``theta_bar``.
    """
    _check(samples, frame)
    dev = np.array([-2.0 * np.sum(_row_logdens(frame, samples, v)) for v in samples.draws])
    dbar = float(np.mean(dev))
    rows_equal = bool(np.all(samples.draws == samples.draws[0]))
    mean_row = samples.draws[0] if rows_equal else samples.draws.mean(axis=0)
    ll_bar = float(np.sum(_row_logdens(frame, samples, mean_row)))
    pd = dbar + 2.0 * ll_bar
    return {"DIC": dbar + pd, "pd": pd, "logLik": -dbar / 2, "logLik_at_mean": ll_bar}


def waic(samples: SampleMatrix, frame: "ModelFrame") -> dict[str, float]:
    """Widely applicable information criterion on the deviance scale.

    ``lppd = sum_i log mean_s p(y_i | theta_s)``,
    ``pWAIC = sum_i var_s log p(y_i | theta_s)``, ``WAIC = -2 (lppd - pWAIC)``.
    """
    _check(samples, frame)
    ld = _pointwise(frame, samples)
    mx = ld.max(axis=0)
    lppd = float(np.sum(mx + np.log(np.mean(np.exp(ld - mx), axis=0))))
    pw = float(np.sum(ld.var(axis=0, ddof=1))) if samples.nsave > 1 else 0.0
    return {"WAIC": -2.0 * (lppd - pw), "pWAIC": pw, "lppd": lppd}
