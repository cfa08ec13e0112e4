"""Posterior-mode optimizers: IWLS backfitting and componentwise boosting."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Mapping

import numpy as np
from scipy import linalg, special

if TYPE_CHECKING:
    from .design import ModelFrame, TermBlock
    from .family import Family

__all__ = [
    "WorkingQuantities",
    "FitState",
    "working_quantities",
    "iwls_solve",
    "iwls_update",
    "update_tau2",
    "backfit",
    "boost",
    "initial_state",
    "compute_eta",
    "log_prior_block",
    "IG_A",
    "IG_B",
]

log = logging.getLogger(__name__)

W_MIN, W_MAX = 1e-10, 1e10
IG_A, IG_B = 1.0, 1e-4
LOG_TAU2_BOUNDS = (-20.0, 20.0)


class NumericalError(RuntimeError):
    pass


@dataclass
class WorkingQuantities:
    w: np.ndarray
    z: np.ndarray


@dataclass
class FitState:
    """Coefficients, smoothing variances and predictors of one fit.

    ``beta`` and ``tau2`` are keyed by parameter name and hold one array
    per term block, in block order.
    """

    beta: dict[str, list[np.ndarray]]
    tau2: dict[str, list[np.ndarray]]
    eta: dict[str, np.ndarray]
    edf_blocks: dict[str, list[float]] = field(default_factory=dict)
    logLik: float = np.nan
    logPost: float = np.nan
    converged: bool = False
    iterations: int = 0
    runtime: float = 0.0
    optimizer: str = ""
    # boosting only
    contributions: dict[str, float] = field(default_factory=dict)
    contribution_path: dict[str, np.ndarray] = field(default_factory=dict)
    selected: list[str] = field(default_factory=list)
    loglik_path: np.ndarray | None = None

    @property
    def edf(self) -> float:
        return float(sum(sum(v) for v in self.edf_blocks.values()))

    def AICc(self, n: int) -> float:
        return aicc(self.logLik, self.edf, n)

    def parameters(self, frame: "ModelFrame") -> dict[str, float]:
        """Flat ``name -> value`` map following the coefficient naming convention."""
        out: dict[str, float] = {}
        for param in frame.family.names:
            for j, bl in enumerate(frame.blocks[param]):
                out.update(zip(bl.coef_names, map(float, self.beta[param][j])))
                out.update(zip(bl.tau2_names, map(float, self.tau2[param][j])))
        return out

    def copy(self) -> "FitState":
        return FitState(
            beta={k: [b.copy() for b in v] for k, v in self.beta.items()},
            tau2={k: [t.copy() for t in v] for k, v in self.tau2.items()},
            eta={k: v.copy() for k, v in self.eta.items()},
            edf_blocks={k: list(v) for k, v in self.edf_blocks.items()},
            logLik=self.logLik, logPost=self.logPost, converged=self.converged,
            iterations=self.iterations, runtime=self.runtime, optimizer=self.optimizer,
        )


def aicc(loglik: float, edf: float, n: int) -> float:
    denom = n - edf - 1
    if denom <= 0:
        return np.inf
    return -2.0 * loglik + 2.0 * edf + 2.0 * edf * (edf + 1) / denom


# --------------------------------------------------------------------------
# shared state helpers


def compute_eta(frame: "ModelFrame", beta: Mapping[str, list[np.ndarray]]) -> dict[str, np.ndarray]:
    eta = {}
    for param in frame.family.names:
        e = np.zeros(frame.n)
        for j, bl in enumerate(frame.blocks[param]):
            if bl.n_coef:
                e = e + bl.fit(beta[param][j])
        eta[param] = e
    return eta


def initial_state(frame: "ModelFrame", start: Mapping[str, float] | None = None) -> FitState:
    """Family-init intercepts and zero coefficients, overridden by ``start``.

    ``start`` is a flat name -> value map (e.g. ``FitState.parameters``);
    names not in the model are ignored.
    """
    fam = frame.family
    beta: dict[str, list[np.ndarray]] = {}
    tau2: dict[str, list[np.ndarray]] = {}
    for param in fam.names:
        beta[param], tau2[param] = [], []
        for bl in frame.blocks[param]:
            b = bl.start()
            if bl.intercept_index is not None and param in fam.init:
                b[bl.intercept_index] = float(fam.links[param].fun(np.asarray(fam.init[param](frame.y))))
            beta[param].append(b)
            tau2[param].append(np.asarray(bl.tau2, dtype=float).copy())
    if start:
        for param in fam.names:
            for j, bl in enumerate(frame.blocks[param]):
                for i, nm in enumerate(bl.coef_names):
                    if nm in start:
                        beta[param][j][i] = float(start[nm])
                for i, nm in enumerate(bl.tau2_names):
                    if nm in start:
                        tau2[param][j][i] = float(start[nm])
    state = FitState(beta=beta, tau2=tau2, eta=compute_eta(frame, beta))
    state.edf_blocks = {p: [_nominal_edf(bl) for bl in frame.blocks[p]] for p in fam.names}
    return state


def _nominal_edf(bl: "TermBlock") -> float:
    if bl.special is not None:
        return float(bl.special.edf)
    return float(bl.n_coef)


def log_prior_block(bl: "TermBlock", beta: np.ndarray, tau2: np.ndarray) -> float:
    """Log prior of one block: Gaussian kernel for smooths, custom for specials.

    Parametric blocks carry a fixed vague Gaussian prior. Inverse-gamma
    hyperpriors of estimated smoothing variances are included.
    """
    if bl.special is not None:
        return float(bl.special.log_prior(beta))
    lp = 0.0
    for K, t, rk in zip(bl.penalties, tau2, bl.ranks):
        lp += -0.5 * rk * np.log(2 * np.pi * t) - 0.5 * float(beta @ K @ beta) / t
        if not bl.fixed:
            lp += IG_A * np.log(IG_B) - special.gammaln(IG_A) - (IG_A + 1) * np.log(t) - IG_B / t
    return float(lp)


def log_posterior(frame: "ModelFrame", state: FitState) -> float:
    ll = frame.family.loglik(frame.y, frame.family.linkinv(state.eta))
    lp = sum(log_prior_block(bl, state.beta[p][j], state.tau2[p][j])
             for p in frame.family.names for j, bl in enumerate(frame.blocks[p]) if bl.n_coef)
    return ll + lp


# --------------------------------------------------------------------------
# IWLS building blocks


def working_quantities(family: "Family", k: str, y: np.ndarray, eta: Mapping[str, np.ndarray]) -> WorkingQuantities:
    """Weights ``w = hess_k`` and working response ``z = eta_k + score_k / w``."""
    for name, e in eta.items():
        if not np.all(np.isfinite(e)):
            raise NumericalError(f"non-finite predictor for parameter {name!r}")
    par = family.linkinv(eta)
    s = np.asarray(family.score[k](y, par), dtype=float)
    w = np.clip(np.asarray(family.hess[k](y, par), dtype=float), W_MIN, W_MAX)
    z = eta[k] + s / w
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(w))):
        raise NumericalError(f"non-finite working quantities for parameter {k!r}")
    return WorkingQuantities(w=w, z=z)


def _chol(P: np.ndarray):
    """Cholesky factor of ``P`` with a ridge of at most ``1e-7 * trace`` if needed."""
    try:
        return linalg.cho_factor(P, lower=True), 0.0
    except linalg.LinAlgError:
        pass
    tr = max(np.trace(P), 1e-12)
    for jitter in tr * np.array([1e-12, 1e-10, 1e-9, 1e-8, 1e-7]):
        try:
            c = linalg.cho_factor(P + jitter * np.eye(P.shape[0]), lower=True)
        except linalg.LinAlgError:
            continue
        log.debug("IWLS system needed ridge jitter %.3g", jitter)
        return c, jitter
    raise NumericalError("IWLS system is singular even after jitter")


def iwls_solve(X: np.ndarray, w: np.ndarray, r: np.ndarray, G: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Penalized weighted least squares ``(X'WX + G)^-1 X'W r``.

    Returns the coefficients and the effective degrees of freedom
    ``trace((X'WX + G)^-1 X'WX)``.
    """
    XW = X.T * w
    XWX = XW @ X
    P = XWX if G is None else XWX + G
    cf, _ = _chol(P)
    beta = linalg.cho_solve(cf, XW @ r)
    edf = float(np.trace(linalg.cho_solve(cf, XWX)))
    return beta, edf


def iwls_update(block: "TermBlock", w: np.ndarray, partial_residual: np.ndarray,
                tau2: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    G = block.penalty(tau2) if block.penalties else None
    return iwls_solve(block.X, w, partial_residual, G)


def _golden(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-3) -> float:
    g = (np.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    x = (a + b) / 2
    # the interior optimum search can miss a monotone criterion's endpoint
    cands = [(f(x), x), (f(lo), lo), (f(hi), hi)]
    return min(cands)[1]


def update_tau2(block: "TermBlock", w: np.ndarray, partial_residual: np.ndarray,
                edf_other: float = 0.0, n: int | None = None) -> np.ndarray:
    """Smoothing variance minimizing the AICc of the block's working model.

    The working model is the weighted least-squares fit of the partial
    residuals, whose deviance is ``sum(w * (r - X beta)^2)``. ``edf_other``
    adds the degrees of freedom of all other terms to the penalty.
    """
    if block.fixed or not block.penalties:
        return np.asarray(block.tau2, dtype=float)
    n = w.size if n is None else n
    X, r = block.X, partial_residual
    XW = X.T * w
    XWX = XW @ X
    XWr = XW @ r
    rWr = float(r @ (w * r))
    K = block.penalties[0]

    def crit(logt):
        cf, _ = _chol(XWX + K / np.exp(logt))
        beta = linalg.cho_solve(cf, XWr)
        edf = float(np.trace(linalg.cho_solve(cf, XWX)))
        rss = rWr - 2 * beta @ XWr + beta @ XWX @ beta
        return max(rss, 0.0) + _aicc_penalty(edf + edf_other, n)

    return np.array([np.exp(_golden(crit, *LOG_TAU2_BOUNDS))])


def _aicc_penalty(edf: float, n: int) -> float:
    denom = n - edf - 1
    if denom <= 0:
        return np.inf
    return 2.0 * edf + 2.0 * edf * (edf + 1) / denom


# --------------------------------------------------------------------------
# backfitting


def _objective(frame, eta, bl, beta, tau2) -> float:
    ll = frame.family.loglik(frame.y, frame.family.linkinv(eta))
    if bl.special is not None:
        return ll + bl.special.log_prior(beta)
    if bl.penalties:
        return ll - 0.5 * float(beta @ bl.penalty(tau2) @ beta)
    return ll


def backfit(frame: "ModelFrame", start: Mapping[str, float] | None = None, max_iter: int = 400,
            eps: float = 1e-4, update_variances: bool = True, verbose: bool = False) -> FitState:
    """Posterior mode by blockwise IWLS backfitting (zigzag over all terms).

    Each block update is a penalized IWLS step on the partial residuals;
    smoothing variances are re-selected by AICc every sweep. A step that
    lowers the penalized log-likelihood is halved until it does not.
    """
    t0 = time.perf_counter()
    fam, y = frame.family, frame.y
    state = initial_state(frame, start)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta_old = {k: v.copy() for k, v in state.eta.items()}
        for param in fam.names:
            for j, bl in enumerate(frame.blocks[param]):
                if bl.n_coef == 0:
                    continue
                wq = working_quantities(fam, param, y, state.eta)
                beta_old = state.beta[param][j]
                fit_old = bl.fit(beta_old)
                r = wq.z - (state.eta[param] - fit_old)
                tau2 = state.tau2[param][j]
                if bl.special is not None:
                    beta_new = bl.special.update(bl.special, wq.w, r, beta_old)
                    edf = float(bl.special.edf)
                else:
                    if update_variances and not bl.fixed:
                        edf_other = state.edf - state.edf_blocks[param][j]
                        tau2 = update_tau2(bl, wq.w, r, edf_other, frame.n)
                    beta_new, edf = iwls_update(bl, wq.w, r, tau2)
                    if bl.kind == "p":
                        edf = float(bl.n_coef)
                state.tau2[param][j] = tau2
                beta_new = _guarded_step(frame, state, param, j, bl, beta_old, beta_new, tau2)
                state.beta[param][j] = beta_new
                state.eta[param] = state.eta[param] - fit_old + bl.fit(beta_new)
                state.edf_blocks[param][j] = edf
        change = max(np.linalg.norm(state.eta[k] - eta_old[k]) / (np.linalg.norm(eta_old[k]) + 1e-10)
                     for k in fam.names)
        if verbose:
            log.info("backfit iteration %d: eta change %.3g", it, change)
        if change < eps:
            converged = True
            break
    state.eta = compute_eta(frame, state.beta)
    _finalize(frame, state)
    state.converged, state.iterations = converged, it
    state.optimizer = "bfit"
    state.runtime = time.perf_counter() - t0
    if not converged:
        log.warning("backfitting did not converge in %d iterations", max_iter)
    return state


def _guarded_step(frame, state, param, j, bl, beta_old, beta_new, tau2, max_halvings: int = 25):
    fit_old = bl.fit(beta_old)
    base = state.eta[param] - fit_old

    def obj(b):
        eta = dict(state.eta)
        eta[param] = base + bl.fit(b)
        try:
            val = _objective(frame, eta, bl, b, tau2)
        except (ValueError, FloatingPointError):
            return -np.inf
        return val if np.isfinite(val) else -np.inf

    f_old = obj(beta_old)
    step = beta_new - beta_old
    for _ in range(max_halvings):
        b = beta_old + step
        if obj(b) >= f_old - 1e-10 * max(1.0, abs(f_old)):
            return b
        step = step / 2
    return beta_old


def _finalize(frame: "ModelFrame", state: FitState) -> None:
    """Recompute edf with the final weights plus logLik and logPost."""
    fam = frame.family
    for param in fam.names:
        try:
            wq = working_quantities(fam, param, frame.y, state.eta)
        except NumericalError:
            continue
        for j, bl in enumerate(frame.blocks[param]):
            if bl.n_coef == 0:
                state.edf_blocks[param][j] = 0.0
            elif bl.kind == "p":
                state.edf_blocks[param][j] = float(bl.n_coef)
            elif bl.special is not None:
                state.edf_blocks[param][j] = float(bl.special.edf)
            elif bl.penalties:
                _, edf = iwls_update(bl, wq.w, np.zeros(frame.n), state.tau2[param][j])
                state.edf_blocks[param][j] = edf
            else:
                state.edf_blocks[param][j] = float(bl.n_coef)
    state.logLik = fam.loglik(frame.y, fam.linkinv(state.eta))
    state.logPost = log_posterior(frame, state)


# --------------------------------------------------------------------------
# componentwise gradient boosting


def _tau2_for_df(X: np.ndarray, w: np.ndarray, K: np.ndarray, df: float) -> float:
    XWX = (X.T * w) @ X

    def edf(logt):
        cf, _ = _chol(XWX + K / np.exp(logt))
        return float(np.trace(linalg.cho_solve(cf, XWX)))

    lo, hi = LOG_TAU2_BOUNDS
    if edf(hi) <= df:
        return float(np.exp(hi))
    if edf(lo) >= df:
        return float(np.exp(lo))
    for _ in range(60):
        mid = (lo + hi) / 2
        if edf(mid) < df:
            lo = mid
        else:
            hi = mid
    return float(np.exp((lo + hi) / 2))


def boost(frame: "ModelFrame", maxit: int = 1000, nu: float = 0.1, start: Mapping[str, float] | None = None,
          df: float = 4.0, min_gain: float = 1e-8, verbose: bool = False) -> FitState:
    """Componentwise gradient boosting with IWLS base learners.

    Every iteration refreshes all intercepts, then evaluates a shrunken
    IWLS step for each candidate term and applies only the one with the
    largest log-likelihood gain. Smooth base learners use a fixed
    smoothing variance giving ``df`` degrees of freedom at the start.
    Candidates are named ``"<term>.<param>"``.
    """
    t0 = time.perf_counter()
    fam, y = frame.family, frame.y
    state = initial_state(frame, start)

    # candidates: (name, param, block index, column index array or None)
    cands = []
    for param in fam.names:
        for j, bl in enumerate(frame.blocks[param]):
            if bl.kind == "p":
                for label, cols in bl.term_columns.items():
                    if label != "(Intercept)":
                        cands.append((f"{label}.{param}", param, j, np.asarray(cols)))
            elif bl.n_coef:
                cands.append((f"{bl.label}.{param}", param, j, None))

    penalties = {}
    for name, param, j, cols in cands:
        bl = frame.blocks[param][j]
        if bl.kind == "s":
            wq = working_quantities(fam, param, y, state.eta)
            t2 = _tau2_for_df(bl.X, wq.w, bl.penalties[0], min(df, bl.n_coef))
            state.tau2[param][j] = np.array([t2])
            penalties[name] = bl.penalty(np.array([t2]))

    contrib = {c[0]: 0.0 for c in cands}
    path = {c[0]: [] for c in cands}
    ll_path = []
    ll = fam.loglik(y, fam.linkinv(state.eta))
    it = 0
    converged = False
    for it in range(1, maxit + 1):
        ll = _boost_intercepts(frame, state, ll)
        best = None
        for name, param, j, cols in cands:
            bl = frame.blocks[param][j]
            wq = working_quantities(fam, param, y, state.eta)
            u = wq.z - state.eta[param]
            beta = state.beta[param][j].copy()
            if bl.special is not None:
                fit_old = bl.fit(beta)
                upd = bl.special.update(bl.special, wq.w, u + fit_old, beta)
                beta_new = beta + nu * (upd - beta)
                eta_k = state.eta[param] - fit_old + bl.fit(beta_new)
            else:
                X = bl.X if cols is None else bl.X[:, cols]
                delta, _ = iwls_solve(X, wq.w, u, penalties.get(name))
                beta_new = beta.copy()
                if cols is None:
                    beta_new += nu * delta
                else:
                    beta_new[cols] += nu * delta
                eta_k = state.eta[param] + nu * (X @ delta)
            eta = dict(state.eta)
            eta[param] = eta_k
            try:
                ll_new = fam.loglik(y, fam.linkinv(eta))
            except ValueError:
                continue
            gain = ll_new - ll
            if np.isfinite(gain) and (best is None or gain > best[0]):
                best = (gain, name, param, j, beta_new, eta_k, ll_new)
        if best is None or best[0] < min_gain:
            converged = True
            it -= 1
            break
        gain, name, param, j, beta_new, eta_k, ll = best
        state.beta[param][j] = beta_new
        state.eta[param] = eta_k
        contrib[name] += gain
        state.selected.append(name)
        for c in contrib:
            path[c].append(contrib[c])
        ll_path.append(ll)
        if verbose and it % 100 == 0:
            log.info("boost iteration %d: logLik %.4f, selected %s", it, ll, name)

    state.eta = compute_eta(frame, state.beta)
    _finalize(frame, state)
    state.contributions = contrib
    state.contribution_path = {c: np.asarray(v) for c, v in path.items()}
    state.loglik_path = np.asarray(ll_path)
    state.converged = converged
    state.iterations = it
    state.optimizer = "boost"
    state.runtime = time.perf_counter() - t0
    return state


def _boost_intercepts(frame, state, ll):
    fam, y = frame.family, frame.y
    for param in fam.names:
        for j, bl in enumerate(frame.blocks[param]):
            if bl.intercept_index is None:
                continue
            par = fam.linkinv(state.eta)
            s = np.sum(fam.score[param](y, par))
            w = np.sum(np.clip(fam.hess[param](y, par), W_MIN, W_MAX))
            step = s / w
            for _ in range(30):
                eta = dict(state.eta)
                eta[param] = state.eta[param] + step
                try:
                    ll_new = fam.loglik(y, fam.linkinv(eta))
                except ValueError:
                    ll_new = -np.inf
                if ll_new >= ll:
                    state.beta[param][j][bl.intercept_index] += step
                    state.eta = eta
                    ll = ll_new
                    break
                step /= 2
    return ll
