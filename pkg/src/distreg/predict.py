"""Prediction from a mode fit or from posterior samples."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence, Union

import numpy as np
import pandas as pd

from .engine import FitState
from .sampler import SampleMatrix

if TYPE_CHECKING:
    from .design import ModelFrame

__all__ = ["PredictionRequest", "predict", "prob_exceed", "fitted_parameters", "c95"]

Source = Union[FitState, SampleMatrix]

TARGETS = ("link", "parameter", "term")
SUMMARIES = ("mean", "c95", "identity")


def c95(x) -> tuple[float, float, float]:
    """Empirical 2.5% quantile, mean and 97.5% quantile (type-7 interpolation)."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("c95 of an empty sample")
    lo, hi = np.quantile(x, [0.025, 0.975])
    return float(lo), float(np.mean(x)), float(hi)


@dataclass
class PredictionRequest:
    """What to predict and how to summarize it over samples.

    ``terms`` restricts the predictor to the listed term labels (``None``
    means all terms); ``parameters`` restricts the distribution parameters.
    Inverse links are only applied to full predictors, so ``target="parameter"``
    cannot be combined with a term subset.
    """

    target: str = "parameter"
    terms: Sequence[str] | None = None
    intercept: bool = True
    summary: str = "mean"
    parameters: Sequence[str] | None = None

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValueError(f"target must be one of {TARGETS}, got {self.target!r}")
        if self.summary not in SUMMARIES:
            raise ValueError(f"summary must be one of {SUMMARIES}, got {self.summary!r}")
        if self.target == "parameter" and (self.terms is not None or not self.intercept):
            raise ValueError("parameter predictions need the full predictor; use target='link' or 'term'")
        if self.target == "term" and not self.terms:
            raise ValueError("target='term' needs at least one term label")


def _draws(source: Source, frame: "ModelFrame") -> list[dict[str, list[np.ndarray]]]:
    """Coefficient sets of a mode fit (one) or of every saved sample."""
    if isinstance(source, FitState):
        return [source.beta]
    if isinstance(source, SampleMatrix):
        idx = {c: i for i, c in enumerate(source.colnames)}
        missing = [c for c in frame.coef_names if c not in idx]
        if missing:
            raise ValueError(f"samples lack coefficient columns {missing}")
        out = []
        for row in source.draws:
            out.append({p: [row[[idx[c] for c in bl.coef_names]] for bl in frame.blocks[p]]
                        for p in frame.family.names})
        return out
    raise TypeError("source must be a FitState or a SampleMatrix")


def _designs(frame: "ModelFrame", newdata: pd.DataFrame | None, param: str):
    out = []
    for bl in frame.blocks[param]:
        out.append(bl.X if newdata is None else bl.builder(newdata))
    return out


def _block_fit(bl, X, beta, terms, intercept):
    """Contribution of one block restricted to the requested terms."""
    if bl.n_coef == 0:
        return 0.0
    if bl.kind != "p":
        return bl.fit(beta, X) if terms is None or bl.label in terms else 0.0
    keep = np.zeros(bl.n_coef, dtype=bool)
    for label, cols in bl.term_columns.items():
        if label == "(Intercept)":
            keep[cols] = intercept
        elif terms is None or label in terms:
            keep[cols] = True
    return X[:, keep] @ beta[keep]


def predict(source: Source, frame: "ModelFrame", newdata: pd.DataFrame | None = None,
            req: PredictionRequest | None = None) -> dict[str, np.ndarray] | pd.DataFrame:
    """Evaluate predictors, parameters or terms for every coefficient draw.

    With ``summary="mean"`` the result is a DataFrame with one column per
    parameter; ``"c95"`` gives ``<param>.2.5%``, ``<param>.mean`` and
    ``<param>.97.5%`` columns (pointwise bands); ``"identity"`` returns a
    dict of ``n x nsave`` matrices. ``newdata=None`` uses the training rows.
    """
    req = PredictionRequest() if req is None else req
    fam = frame.family
    params = list(fam.names) if req.parameters is None else list(req.parameters)
    for p in params:
        if p not in fam.names:
            raise ValueError(f"unknown parameter {p!r}")
    if req.terms is not None:
        known = {lbl for p in params for bl in frame.blocks[p]
                 for lbl in ([bl.label] if bl.kind != "p" else bl.term_columns)}
        bad = [t for t in req.terms if t not in known]
        if bad:
            raise ValueError(f"unknown term label(s) {bad}")
    terms = None if req.terms is None else set(req.terms)
    draws = _draws(source, frame)
    designs = {p: _designs(frame, newdata, p) for p in fam.names}
    n = frame.n if newdata is None else len(newdata)

    res = {}
    eta_all = []
    for beta in draws:
        eta = {}
        for p in fam.names if req.target == "parameter" else params:
            e = np.zeros(n)
            for bl, X, b in zip(frame.blocks[p], designs[p], beta[p]):
                e = e + _block_fit(bl, X, b, terms, req.intercept)
            eta[p] = e
        if req.target == "parameter":
            eta = fam.linkinv(eta)
        eta_all.append(eta)
    for p in params:
        res[p] = np.column_stack([np.broadcast_to(e[p], (n,)) for e in eta_all])

    if req.summary == "identity":
        return res
    if req.summary == "mean":
        return pd.DataFrame({p: m.mean(axis=1) for p, m in res.items()})
    cols = {}
    for p, m in res.items():
        lo, hi = np.quantile(m, [0.025, 0.975], axis=1)
        cols[f"{p}.2.5%"], cols[f"{p}.mean"], cols[f"{p}.97.5%"] = lo, m.mean(axis=1), hi
    return pd.DataFrame(cols)


def fitted_parameters(source: Source, frame: "ModelFrame", newdata: pd.DataFrame | None = None) -> dict[str, np.ndarray]:
    """Posterior-mean (or mode) distribution parameters per row."""
    df = predict(source, frame, newdata, PredictionRequest(target="parameter", summary="mean"))
    return {p: df[p].to_numpy() for p in frame.family.names}


def prob_exceed(source: Source, frame: "ModelFrame", newdata: pd.DataFrame | None, threshold: float) -> np.ndarray:
    """``P(Y >= threshold) = 1 - F(threshold - 1)`` at the posterior-mean parameters."""
    fam = frame.family
    if fam.p is None:
        raise ValueError(f"family {fam.name} has no distribution function")
    par = fitted_parameters(source, frame, newdata)
    n = len(next(iter(par.values())))
    return 1.0 - np.asarray(fam.p(np.full(n, threshold - 1.0), par), dtype=float)
