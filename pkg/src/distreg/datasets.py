"""Bundled example data and synthetic data generators."""

from __future__ import annotations

from importlib import resources

import numpy as np
import pandas as pd

__all__ = ["load_swisslabor", "load_mcycle", "gamart", "simulate_ztnb", "simulate_growth", "simulate_lm"]


def _load(name: str) -> pd.DataFrame:
    with resources.files("distreg").joinpath("data", name).open("r") as fh:
        return pd.read_csv(fh)


def load_swisslabor() -> pd.DataFrame:
    """Swiss labor-force participation of 872 women (participation, income, age, ...)."""
    df = _load("SwissLabor.csv")
    for col in ("participation", "foreign"):
        df[col] = pd.Categorical(df[col], categories=["no", "yes"])
    return df


def load_mcycle() -> pd.DataFrame:
    """Simulated motorcycle crash: head acceleration ``accel`` over ``times`` (ms)."""
    return _load("mcycle.csv")


def gamart(n: int = 500, seed: int | None = None) -> pd.DataFrame:
    """Artificial data for additive location-scale models.

    Covariates ``x1, x2, x3`` are uniform on [0, 1] and ``fac`` has
    levels ``low, medium, high``. The response is
    ``num = 1.2 + sin(2 pi x1) + 0.5 x2^2 + 0.3 [fac=medium] + 0.6 [fac=high] + e``
    with ``e ~ N(0, exp(-1 + x3)^2)``. ``bin`` is ``num > median``, ``cnt``
    is Poisson with mean ``exp(0.5 + sin(2 pi x1))``.
    """
    rng = np.random.default_rng(seed)
    x1, x2, x3 = rng.uniform(size=(3, n))
    fac = rng.choice(["low", "medium", "high"], size=n)
    eff = np.select([fac == "medium", fac == "high"], [0.3, 0.6], 0.0)
    mu = 1.2 + np.sin(2 * np.pi * x1) + 0.5 * x2**2 + eff
    num = mu + np.exp(-1 + x3) * rng.standard_normal(n)
    return pd.DataFrame({
        "num": num,
        "bin": np.where(num > np.median(num), "yes", "no"),
        "cnt": rng.poisson(np.exp(0.5 + np.sin(2 * np.pi * x1))),
        "x1": x1, "x2": x2, "x3": x3,
        "fac": pd.Categorical(fac, categories=["low", "medium", "high"]),
    })


def ztnb_truth(x1: np.ndarray, x2: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """``log mu = 0.5 + sin(2 pi x1)``, ``log theta = 0.3 + 0.5 x2`` (or 0.3 without x2)."""
    mu = np.exp(0.5 + np.sin(2 * np.pi * x1))
    theta = np.exp(0.3 + (0.0 if x2 is None else 0.5 * x2))
    return {"mu": mu, "theta": np.broadcast_to(theta, mu.shape).astype(float)}


def simulate_ztnb(n: int = 5000, seed: int | None = None) -> pd.DataFrame:
    """Zero-truncated negative binomial counts with one informative smooth.

    ``x1`` drives ``mu`` through ``ztnb_truth``; ``x2`` acts on ``theta``
    linearly; ``x3`` is pure noise. All covariates are uniform on [0, 1].
    """
    from .family import ztnbinom_family

    rng = np.random.default_rng(seed)
    x1, x2, x3 = rng.uniform(size=(3, n))
    par = ztnb_truth(x1, x2)
    y = ztnbinom_family().r(n, par, rng)
    return pd.DataFrame({"y": y.astype(int), "x1": x1, "x2": x2, "x3": x3})


def growth_truth(time: np.ndarray) -> dict[str, np.ndarray]:
    """Gompertz-like mean ``2 + 1/(1 + exp(0.5 (15 - t)))`` and sd ``exp(-3 + 2 cos(6 t/30 - 3))``."""
    time = np.asarray(time, dtype=float)
    return {"mu": 2 + 1 / (1 + np.exp(0.5 * (15 - time))),
            "sigma": np.exp(-3 + 2 * np.cos(time / 30 * 6 - 3))}


def simulate_growth(reps: int = 20, seed: int | None = None) -> pd.DataFrame:
    """Growth-curve data at ``time = 1..30`` repeated ``reps`` times."""
    rng = np.random.default_rng(seed)
    time = np.tile(np.arange(1, 31, dtype=float), reps)
    tr = growth_truth(time)
    return pd.DataFrame({"time": time, "y": tr["mu"] + tr["sigma"] * rng.standard_normal(time.size)})


def simulate_lm(n: int = 500, p: int = 6, sigma: float = 1.0, seed: int | None = None):
    """Linear model data: intercept plus ``p - 1`` standard normal columns.

    Returns ``(table, X, beta)`` with ``beta = (1, 0.5, -0.5, 1, -1, ...)``.
    """
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, p - 1))
    X = np.column_stack([np.ones(n), Z])
    beta = np.array([1.0] + [(0.5, -0.5, 1.0, -1.0)[i % 4] for i in range(p - 1)])
    y = X @ beta + sigma * rng.standard_normal(n)
    table = pd.DataFrame(Z, columns=[f"x{i + 1}" for i in range(p - 1)])
    table.insert(0, "y", y)
    return table, X, beta
