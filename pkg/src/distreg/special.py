"""Special model terms: nonlinear in their coefficients, with custom hooks.

A special term supplies its own fit function plus an ``update`` hook used by
the mode-finding backfitter and a ``propose`` hook used by the MCMC
sampler. The engines only ever call these hooks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .sampler import slice_step

__all__ = ["SpecialTerm", "gompertz", "gompertz_term", "special_update", "special_propose", "make_special"]


@dataclass
class SpecialTerm:
    label: str
    x: np.ndarray
    fit_fun: Callable[[np.ndarray, np.ndarray], np.ndarray]
    log_prior: Callable[[np.ndarray], float]
    n_params: int
    start: np.ndarray
    center: bool = True
    edf: float = 0.0
    update: Callable | None = None
    propose: Callable | None = None
    slice_width: float = 1.0
    slice_max_steps: int = 50
    calls: dict = field(default_factory=lambda: {"update": 0, "propose": 0})

    def fitted(self, X: np.ndarray, beta: np.ndarray) -> np.ndarray:
        """Fitted values at ``X``; centered by the training-data mean of the curve."""
        with np.errstate(over="ignore", invalid="ignore"):
            f = self.fit_fun(np.asarray(X, dtype=float).ravel(), beta)
            if self.center:
                f = f - np.mean(self.fit_fun(self.x, beta))
        return f


def gompertz(x: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """``b1 * exp(-b2 * exp(-b3 * x))``."""
    with np.errstate(over="ignore", invalid="ignore"):
        return beta[0] * np.exp(-beta[1] * np.exp(-beta[2] * x))


def _normal_log_prior(sd: float):
    def log_prior(beta):
        beta = np.asarray(beta, dtype=float)
        return float(np.sum(-0.5 * np.log(2 * np.pi * sd**2) - 0.5 * (beta / sd) ** 2))
    return log_prior


def gompertz_term(x, label: str = "s2(x)", center: bool = True) -> SpecialTerm:
    """Gompertz growth curve term with independent N(0, 1000^2) priors."""
    return SpecialTerm(
        label=label,
        x=np.asarray(x, dtype=float).ravel(),
        fit_fun=gompertz,
        log_prior=_normal_log_prior(1000.0),
        n_params=3,
        start=np.array([0.0, 0.5, 0.1]),
        center=center,
        edf=3.0,
        update=special_update,
        propose=special_propose,
    )


def special_update(term: SpecialTerm, w: np.ndarray, partial_residual: np.ndarray,
                   beta: np.ndarray | None = None) -> np.ndarray:
    """Weighted penalized least-squares step for a special term.

    Minimizes ``sum(w * (r - f(x; b))**2) - 2 * log_prior(b)`` starting
    from ``beta``; the returned coefficients never have a larger
    objective than the starting point.
    """
    term.calls["update"] += 1
    beta0 = term.start if beta is None else np.asarray(beta, dtype=float)
    w = np.asarray(w, dtype=float)
    r = np.asarray(partial_residual, dtype=float)

    def objective(b):
        f = term.fitted(term.x, b)
        val = np.sum(w * (r - f) ** 2) - 2.0 * term.log_prior(b)
        return float(val) if np.isfinite(val) else 1e300

    best, best_val = beta0.copy(), objective(beta0)
    for x0 in (beta0, term.start):
        for method in ("BFGS", "Nelder-Mead"):
            opts = {"maxiter": 2000, "xatol": 1e-10, "fatol": 1e-12} if method == "Nelder-Mead" else {"gtol": 1e-8}
            try:
                res = optimize.minimize(objective, x0, method=method, options=opts)
            except (ValueError, FloatingPointError, np.linalg.LinAlgError):
                continue
            if res.fun < best_val:
                best, best_val = np.asarray(res.x, dtype=float), float(res.fun)
        if best_val < objective(beta0):
            break
    # polish: the objective can be tiny in absolute terms near an exact fit
    res = optimize.minimize(objective, best, method="Nelder-Mead",
                            options={"maxiter": 4000, "xatol": 1e-12, "fatol": 1e-18})
    if res.fun < best_val:
        best = np.asarray(res.x, dtype=float)
    return best


def special_propose(term: SpecialTerm, beta: np.ndarray, loglik: Callable[[np.ndarray], float],
                    rng: np.random.Generator) -> np.ndarray:
    """One coordinate-wise slice-sampling sweep over the term's coefficients.

    ``loglik(b)`` is the model log-likelihood with this term's coefficients
    set to ``b``; the term's log-prior is added here.
    """
    term.calls["propose"] += 1
    beta = np.asarray(beta, dtype=float).copy()

    def cond(b):
        val = loglik(b) + term.log_prior(b)
        return val if np.isfinite(val) else -np.inf

    if not np.isfinite(cond(beta)):
        raise ValueError(f"{term.label}: log full conditional is not finite at the current state")
    for i in range(beta.size):
        def target(v, i=i):
            b = beta.copy()
            b[i] = v
            return cond(b)
        beta[i] = slice_step(target, beta[i], w=term.slice_width, m_expand=term.slice_max_steps, rng=rng)
    return beta


_SPECIALS = {"gc": gompertz_term}


def make_special(bs: str, x, label: str) -> SpecialTerm:
    try:
        maker = _SPECIALS[bs]
    except KeyError:
        raise ValueError(f"unknown special term basis {bs!r}") from None
    return maker(x, label=label)
