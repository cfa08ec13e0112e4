"""Model checking: quantile residuals, CRPS, rootograms and chain summaries."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd
from scipy import integrate, stats

from .predict import c95, fitted_parameters
from .sampler import SampleMatrix

if TYPE_CHECKING:
    from .design import ModelFrame

__all__ = [
    "ResidualSet",
    "quantile_residuals",
    "crps_numeric",
    "rootogram_freq",
    "acf_summary",
    "c95",
    "ess",
    "mcse",
]


@dataclass
class ResidualSet:
    residuals: np.ndarray
    type: str = "quantile"
    seed: int | None = None


def _response(frame, table):
    if table is None:
        return frame.y
    return frame.family.encode_response(table[frame.response])


def quantile_residuals(source, frame: "ModelFrame", table: pd.DataFrame | None = None,
                       seed: int | None = None) -> ResidualSet:
    """Randomized quantile residuals ``Phi^-1(F(y | theta))``.

    For discrete families ``u`` is drawn uniformly between ``F(y - 1)`` and
    ``F(y)`` with the given seed. ``theta`` are posterior-mean parameters.
    """
    fam = frame.family
    if fam.p is None:
        raise ValueError(f"family {fam.name} has no distribution function")
    par = fitted_parameters(source, frame, table)
    y = _response(frame, table)
    if fam.discrete:
        hi = np.asarray(fam.p(y, par), dtype=float)
        lo = np.asarray(fam.p(y - 1, par), dtype=float)
        u = lo + np.random.default_rng(seed).uniform(size=y.size) * (hi - lo)
    else:
        u = np.asarray(fam.p(y, par), dtype=float)
    u = np.clip(u, 1e-16, 1 - 1e-16)
    return ResidualSet(residuals=stats.norm.ppf(u), seed=seed if fam.discrete else None)


def _crps_one(F, y: float, epsabs: float = 1e-6) -> tuple[float, bool]:
    # t = y - v/(1-v) below the observation, t = y + v/(1-v) above
    def lower(v):
        return F(y - v / (1 - v)) ** 2 / (1 - v) ** 2

    def upper(v):
        return (1 - F(y + v / (1 - v))) ** 2 / (1 - v) ** 2

    ok = True
    total = 0.0
    for g in (lower, upper):
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                val, _ = integrate.quad(g, 0.0, 1.0, epsabs=epsabs, epsrel=1e-8, limit=200)
            except integrate.IntegrationWarning:
                warnings.simplefilter("ignore", integrate.IntegrationWarning)
                val, _ = integrate.quad(g, 0.0, 1.0, epsabs=epsabs, epsrel=1e-8, limit=200)
                ok = False
        total += val
    return total, ok


def crps_numeric(source, frame: "ModelFrame", table: pd.DataFrame | None = None,
                 epsabs: float = 1e-6) -> pd.DataFrame:
    """Continuous ranked probability score per observation by quadrature.

    Integrates ``(F(t) - 1{t >= y})^2`` over the real line as two
    semi-infinite integrals split at ``y``. The ``converged`` column flags
    rows where the quadrature reported trouble.
    """
    fam = frame.family
    if fam.p is None:
        raise ValueError(f"family {fam.name} has no distribution function")
    par = fitted_parameters(source, frame, table)
    y = _response(frame, table)
    return crps_from_parameters(fam, y, par, epsabs)


def crps_from_parameters(fam, y, par: dict[str, np.ndarray], epsabs: float = 1e-6) -> pd.DataFrame:
    y = np.asarray(y, dtype=float)
    vals, flags = np.empty(y.size), np.empty(y.size, dtype=bool)
    for i in range(y.size):
        pi = {k: np.asarray(v, dtype=float).ravel()[i] if np.ndim(v) else float(v) for k, v in par.items()}

        def F(t, pi=pi):
            return float(fam.p(np.asarray(t), pi))

        vals[i], flags[i] = _crps_one(F, float(y[i]), epsabs)
    return pd.DataFrame({"crps": vals, "converged": flags})


def rootogram_freq(source, frame: "ModelFrame", table: pd.DataFrame | None = None, max_count: int = 50,
                   min_count: int | None = None) -> pd.DataFrame:
    """Observed and expected frequencies for counts ``min_count..max_count``.

    ``expected[j] = sum_i d(j | theta_i)`` at posterior-mean parameters;
    ``min_count`` defaults to the family's support minimum.
    """
    fam = frame.family
    if not fam.discrete:
        raise ValueError(f"family {fam.name} is not a count family")
    lo = fam.support_min if min_count is None else int(min_count)
    if fam.name == "binomial":
        max_count = min(max_count, 1)
    par = fitted_parameters(source, frame, table)
    y = _response(frame, table)
    counts = np.arange(lo, max_count + 1)
    expected = np.array([np.sum(fam.d(np.full(y.size, float(j)), par)) for j in counts])
    observed = np.array([np.sum(y == j) for j in counts])
    sd = np.where(expected > 0, (observed - expected) / np.sqrt(np.where(expected > 0, expected, 1)), np.nan)
    return pd.DataFrame({"count": counts, "observed": observed, "expected": expected, "std_dev": sd})


def _acf(x: np.ndarray, max_lag: int) -> np.ndarray:
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = x.size
    c0 = float(x @ x) / n
    if c0 == 0:
        out = np.zeros(max_lag + 1)
        out[0] = 1.0
        return out
    m = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, m)
    acov = np.fft.irfft(f * np.conj(f), m)[: max_lag + 1] / n
    out = acov / acov[0]
    out[0] = 1.0
    return out


def acf_summary(samples, max_lag: int = 40) -> pd.DataFrame:
    """Sample autocorrelations per column plus the per-lag maximum ``max``.

    ``samples`` may be a SampleMatrix, a DataFrame or a 2-d array.
    Acceptance-rate columns are skipped. Constant columns get zero
    autocorrelation beyond lag 0.
    """
    if isinstance(samples, SampleMatrix):
        df = pd.DataFrame(samples.draws, columns=samples.colnames)
    elif isinstance(samples, pd.DataFrame):
        df = samples
    else:
        arr = np.asarray(samples, dtype=float)
        arr = arr.reshape(len(arr), -1)
        df = pd.DataFrame(arr, columns=[f"V{i + 1}" for i in range(arr.shape[1])])
    df = df[[c for c in df.columns if not str(c).endswith(".alpha")]]
    if len(df) < max_lag + 2:
        raise ValueError(f"need at least {max_lag + 2} draws for {max_lag} lags, got {len(df)}")
    out = pd.DataFrame({c: _acf(df[c].to_numpy(), max_lag) for c in df.columns})
    out.insert(0, "lag", np.arange(max_lag + 1))
    out["max"] = out.drop(columns="lag").abs().max(axis=1)
    return out


def ess(x) -> float:
    """Effective sample size from Geyer's initial positive sequence."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.var(x) == 0:
        return float(n)
    rho = _acf(x, n - 1)
    tau = 1.0
    for k in range(1, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2 * pair
    return float(n / tau)


def mcse(x) -> float:
    """Monte-Carlo standard error of the mean of a chain."""
    x = np.asarray(x, dtype=float)
    return float(np.std(x, ddof=1) / np.sqrt(ess(x)))
