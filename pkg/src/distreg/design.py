"""Model frame construction: design matrices, P-spline bases and penalties."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd
from scipy.interpolate import BSpline

from .family import Family, lm_family
from .formula import FormulaSet, TermSpec, eval_transform
from .special import SpecialTerm, make_special

__all__ = [
    "TermBlock",
    "ModelFrame",
    "build_frame",
    "pspline_knots",
    "pspline_basis",
    "difference_penalty",
    "centering_transform",
    "center_block",
    "FrameError",
]

MAX_BLOCK_COEFS = 2000
PARAMETRIC_PRIOR_SD = 1000.0


class FrameError(ValueError):
    """Data and formula do not fit together."""


def pspline_knots(xmin: float, xmax: float, k: int, degree: int) -> np.ndarray:
    """Equally spaced knots giving ``k`` B-splines of the given degree on [xmin, xmax]."""
    nint = k - degree
    dx = (xmax - xmin) / nint
    return xmin + dx * np.arange(-degree, nint + degree + 1)


def difference_penalty(k: int, order: int) -> np.ndarray:
    D = np.diff(np.eye(k), n=order, axis=0)
    return D.T @ D


def _bspline_design(x: np.ndarray, knots: np.ndarray, degree: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    lo, hi = knots[0], knots[-1]
    tol = 1e-10 * (hi - lo)
    if np.any(x < lo - tol) or np.any(x > hi + tol):
        bad = x[(x < lo - tol) | (x > hi + tol)]
        raise FrameError(f"covariate value(s) {bad[:3].tolist()} outside the basis support [{lo:g}, {hi:g}]")
    x = np.clip(x, lo, hi)
    return BSpline.design_matrix(x, knots, degree, extrapolate=True).toarray()


def pspline_basis(x, k: int = 10, degree: int = 3, penalty_order: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """B-spline design matrix and difference penalty for one covariate.

    Returns ``(X, K)`` with ``X`` of shape ``(n, k)`` and ``K = D'D`` where
    ``D`` is the ``penalty_order``-th difference matrix.
    """
    x = np.asarray(x, dtype=float)
    if k < degree + 1:
        raise ValueError(f"k = {k} too small for degree {degree}")
    if not 0 < penalty_order < k:
        raise ValueError("penalty_order must be in [1, k)")
    fin = x[np.isfinite(x)]
    if np.unique(fin).size < 2:
        raise ValueError("P-spline covariate needs at least two distinct finite values")
    knots = pspline_knots(fin.min(), fin.max(), k, degree)
    return _bspline_design(x, knots, degree), difference_penalty(k, penalty_order)


def centering_transform(X: np.ndarray) -> np.ndarray:
    """Null-space basis ``Z`` of the sum-to-zero constraint ``1'X beta = 0``."""
    C = X.sum(axis=0).reshape(-1, 1)
    Q, _ = np.linalg.qr(C, mode="complete")
    return Q[:, 1:]


def center_block(X: np.ndarray, K: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reparameterize ``(X, K)`` so that every fitted curve has zero mean."""
    Z = centering_transform(X)
    return X @ Z, Z.T @ K @ Z


def _matrix_rank(K: np.ndarray) -> int:
    ev = np.linalg.eigvalsh(K)
    return int(np.sum(ev > max(ev.max(), 1.0) * 1e-10))


@dataclass
class TermBlock:
    """One model term of one distribution parameter.

    ``kind`` is ``"p"`` for the parametric block (intercept and all linear
    columns), ``"s"`` for a P-spline smooth and ``"special"`` for terms
    with their own fit function and update/propose hooks.
    """

    label: str
    kind: str
    param: str
    X: np.ndarray
    coef_names: list[str]
    builder: Callable[[pd.DataFrame], np.ndarray]
    penalties: list[np.ndarray] = field(default_factory=list)
    tau2: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tau2_names: list[str] = field(default_factory=list)
    ranks: list[int] = field(default_factory=list)
    fixed: bool = True
    columns: list[str] = field(default_factory=list)
    term_columns: dict[str, list[int]] = field(default_factory=dict)
    intercept_index: int | None = None
    special: SpecialTerm | None = None

    @property
    def n_coef(self) -> int:
        return len(self.coef_names)

    def fit(self, beta: np.ndarray, X: np.ndarray | None = None) -> np.ndarray:
        X = self.X if X is None else X
        if self.special is not None:
            return self.special.fitted(X, beta)
        return X @ beta

    def penalty(self, tau2: np.ndarray | None = None) -> np.ndarray:
        """Prior precision ``G(tau2) = sum_l K_l / tau2_l``."""
        tau2 = self.tau2 if tau2 is None else tau2
        G = np.zeros((self.n_coef, self.n_coef))
        for K, t in zip(self.penalties, tau2):
            G += K / t
        return G

    def start(self) -> np.ndarray:
        if self.special is not None:
            return np.asarray(self.special.start, dtype=float).copy()
        return np.zeros(self.n_coef)


@dataclass
class ModelFrame:
    family: Family
    y: np.ndarray
    blocks: dict[str, list[TermBlock]]
    formula: FormulaSet
    response: str
    n_dropped: int = 0
    registry: dict[str, tuple[str, int, int]] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def coef_names(self) -> list[str]:
        return list(self.registry)

    @property
    def tau2_names(self) -> list[str]:
        return [nm for bl in self.all_blocks() for nm in bl.tau2_names]

    def all_blocks(self):
        for param in self.family.names:
            yield from self.blocks[param]

    def block(self, param: str, label: str) -> TermBlock:
        for bl in self.blocks[param]:
            if bl.label == label:
                return bl
        raise KeyError(f"no term {label!r} for parameter {param!r}")


def _is_categorical(col: pd.Series) -> bool:
    return not pd.api.types.is_numeric_dtype(col) or pd.api.types.is_bool_dtype(col)


def _levels(col: pd.Series) -> list:
    return sorted(col.dropna().astype(str).unique())


def _parametric_block(param: str, terms: list[TermSpec], table: pd.DataFrame) -> TermBlock:
    # Each entry: (term label, column names, builder(newdata) -> (n, m) array)
    pieces: list[tuple[str, list[str], Callable]] = []
    intercept_index = None
    for t in terms:
        if t.kind == "intercept":
            intercept_index = sum(len(p[1]) for p in pieces)
            pieces.append((t.label, ["(Intercept)"], lambda d: np.ones((len(d), 1))))
        elif t.kind == "linear":
            var = t.variables[0]
            col = table[var]
            if _is_categorical(col):
                levels = _levels(col)
                if len(levels) < 2:
                    raise FrameError(f"categorical column '{var}' has fewer than two levels")

                def build_cat(d, var=var, levels=levels):
                    v = d[var].astype(str)
                    unseen = set(v.unique()) - set(levels)
                    if unseen:
                        raise FrameError(f"unseen level(s) {sorted(unseen)} of '{var}'")
                    return np.column_stack([(v == lev).to_numpy(dtype=float) for lev in levels[1:]])

                pieces.append((t.label, [f"{var}{lev}" for lev in levels[1:]], build_cat))
            else:
                pieces.append((t.label, [var], lambda d, var=var: _numeric(d, var).reshape(-1, 1)))
        elif t.kind == "transform":
            if _is_categorical(table[t.variables[0]]):
                raise FrameError(f"{t.label}: column '{t.variables[0]}' is not numeric")
            pieces.append((t.label, [t.label], lambda d, t=t: eval_transform(t, d).reshape(-1, 1)))
        elif t.kind == "poly":
            var = t.variables[0]
            deg = t.options["degree"]
            pieces.append((t.label, [f"{t.label}{j}" for j in range(1, deg + 1)],
                           lambda d, var=var, deg=deg: _numeric(d, var)[:, None] ** np.arange(1, deg + 1)))

    def builder(d: pd.DataFrame) -> np.ndarray:
        if not pieces:
            return np.zeros((len(d), 0))
        return np.column_stack([p[2](d) for p in pieces])

    columns = [c for p in pieces for c in p[1]]
    term_columns = {}
    pos = 0
    for label, cols, _ in pieces:
        term_columns[label] = list(range(pos, pos + len(cols)))
        pos += len(cols)
    X = builder(table)
    k = len(columns)
    # vague N(0, PARAMETRIC_PRIOR_SD^2) prior, held fixed
    return TermBlock(
        label="p", kind="p", param=param, X=X,
        coef_names=[f"{param}.p.{c}" for c in columns],
        builder=builder, columns=columns, term_columns=term_columns,
        intercept_index=intercept_index, fixed=True,
        penalties=[np.eye(k)] if k else [], tau2=np.array([PARAMETRIC_PRIOR_SD**2]) if k else np.zeros(0),
        ranks=[k] if k else [],
    )


def _numeric(d: pd.DataFrame, var: str) -> np.ndarray:
    col = d[var]
    if _is_categorical(col):
        raise FrameError(f"column '{var}' is not numeric")
    return col.to_numpy(dtype=float)


def _smooth_block(param: str, t: TermSpec, table: pd.DataFrame) -> TermBlock:
    var = t.variables[0]
    if _is_categorical(table[var]):
        raise FrameError(f"{t.label}: smooth over categorical column '{var}'")
    x = table[var].to_numpy(dtype=float)
    k, degree, order = t.options["k"], t.options["degree"], t.options["penalty_order"]
    if np.unique(x).size < k:
        raise FrameError(f"{t.label}: {np.unique(x).size} distinct values but basis dimension k = {k}")
    knots = pspline_knots(x.min(), x.max(), k, degree)
    Xraw = _bspline_design(x, knots, degree)
    Z = centering_transform(Xraw)
    K = Z.T @ difference_penalty(k, order) @ Z
    K = (K + K.T) / 2

    def builder(d: pd.DataFrame) -> np.ndarray:
        return _bspline_design(_numeric(d, var), knots, degree) @ Z

    Xc = Xraw @ Z
    prefix = f"{param}.s.{t.label}"
    return TermBlock(
        label=t.label, kind="s", param=param, X=Xc,
        coef_names=[f"{prefix}.b{i}" for i in range(1, Xc.shape[1] + 1)],
        builder=builder, penalties=[K], tau2=np.array([1.0]),
        tau2_names=[f"{prefix}.tau21"], ranks=[_matrix_rank(K)], fixed=False,
    )


def _special_block(param: str, t: TermSpec, table: pd.DataFrame) -> TermBlock:
    var = t.variables[0]
    x = _numeric(table, var)
    term = make_special(t.options["bs"], x, label=t.label)

    def builder(d: pd.DataFrame) -> np.ndarray:
        return _numeric(d, var).reshape(-1, 1)

    return TermBlock(
        label=t.label, kind="special", param=param, X=x.reshape(-1, 1),
        coef_names=[f"{param}.s.{t.label}.b{i}" for i in range(1, term.n_params + 1)],
        builder=builder, fixed=True, special=term,
    )


def _used_columns(fs: FormulaSet) -> list[str]:
    cols = [fs.response]
    for terms in fs.terms.values():
        for t in terms:
            cols.extend(v for v in t.variables if v not in cols)
    return cols


def build_frame(fs: FormulaSet, table: pd.DataFrame, family: Family) -> ModelFrame:
    """Set up design and penalty matrices for every distribution parameter.

    Rows with missing values in any used column are dropped. Smooth terms
    are centered at build time; the parametric block holds the intercept
    and all linear columns in formula order.
    """
    cols = _used_columns(fs)
    missing = [c for c in cols if c not in table.columns]
    if missing:
        raise FrameError(f"unknown column(s) {missing}")
    if list(fs.terms) != list(family.names):
        raise FrameError(f"formula parameters {list(fs.terms)} do not match family {list(family.names)}")
    sub = table[cols]
    keep = sub.notna().all(axis=1).to_numpy()
    data = table.loc[keep].reset_index(drop=True)
    if len(data) < 1:
        raise FrameError("no complete rows in data")
    y = family.encode_response(data[fs.response])

    blocks: dict[str, list[TermBlock]] = {}
    for param, terms in fs.terms.items():
        plist = [_parametric_block(param, [t for t in terms if t.kind in ("intercept", "linear", "transform", "poly")], data)]
        for t in terms:
            if t.kind == "smooth":
                plist.append(_smooth_block(param, t, data))
            elif t.kind == "special":
                plist.append(_special_block(param, t, data))
        for bl in plist:
            if bl.n_coef > MAX_BLOCK_COEFS:
                raise FrameError(f"term {bl.label} has {bl.n_coef} coefficients (limit {MAX_BLOCK_COEFS})")
        blocks[param] = plist

    if family.name == "lm":
        family = lm_family(sum(bl.n_coef for bls in blocks.values() for bl in bls))

    registry = {}
    for param in family.names:
        for j, bl in enumerate(blocks[param]):
            for i, nm in enumerate(bl.coef_names):
                if nm in registry:
                    raise FrameError(f"duplicate coefficient name {nm}")
                registry[nm] = (param, j, i)
    return ModelFrame(family=family, y=y, blocks=blocks, formula=fs, response=fs.response,
                      n_dropped=int((~keep).sum()), registry=registry)
