"""Model formula mini-language.

One formula per distribution parameter, e.g.::

    accel ~ s(times, k = 20)
    sigma ~ s(times, k = 20)

Supported terms: bare column names, ``1`` / ``-1`` (intercept control),
``I(expr)`` arithmetic transforms of a single column, ``poly(x, d)`` raw
polynomials, ``s(x, ...)`` P-spline smooths and ``s2(x, bs = "gc")``
special (Gompertz growth curve) terms.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import pandas as pd

__all__ = [
    "FormulaError",
    "TermSpec",
    "FormulaSet",
    "parse_formula",
    "parse_formula_set",
    "eval_transform",
    "render_term",
    "render_formula_set",
]

SMOOTH_DEFAULTS = {"k": 10, "bs": "ps", "degree": 3, "penalty_order": 2}
SPECIAL_DEFAULTS = {"bs": "gc"}
SMOOTH_BASES = ("ps",)
SPECIAL_BASES = ("gc",)

# Functions that are part of the wider model-term family but not built here.
_UNSUPPORTED = ("te", "ti", "t2", "la", "lin", "rs", "n")


class FormulaError(ValueError):
    """Raised for malformed or unsupported formula text."""


@dataclass(frozen=True)
class TermSpec:
    kind: str  # intercept | linear | transform | poly | smooth | special
    variables: tuple[str, ...] = ()
    expr: Any = None
    options: dict = field(default_factory=dict)
    label: str = ""


@dataclass
class FormulaSet:
    response: str
    terms: dict[str, list[TermSpec]]

    @property
    def parameters(self) -> list[str]:
        return list(self.terms)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FormulaSet):
            return NotImplemented
        return (self.response == other.response
                and list(self.terms) == list(other.terms)
                and all(self.terms[k] == other.terms[k] for k in self.terms))


# --------------------------------------------------------------------------
# tokenizer

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_.][A-Za-z0-9_.]*)
  | (?P<str>"[^"]*"|'[^']*')
  | (?P<op>\*\*|[~+\-*/^(),=])
""", re.VERBOSE)


def _tokenize(text: str) -> list[tuple[str, str]]:
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise FormulaError(f"unexpected character {text[pos]!r} in {text!r}")
        pos = m.end()
        kind = m.lastgroup
        if kind == "ws":
            continue
        val = m.group()
        if kind == "op" and val == "**":
            val = "^"
        out.append((kind, val))
    out.append(("end", ""))
    return out


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self, offset: int = 0) -> tuple[str, str]:
        return self.toks[min(self.i + offset, len(self.toks) - 1)]

    def next(self) -> tuple[str, str]:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, val: str) -> None:
        kind, v = self.next()
        if v != val or kind == "str":
            raise FormulaError(f"expected {val!r} but found {v or 'end of input'!r} in {self.text!r}")

    def fail(self, msg: str):
        raise FormulaError(f"{msg} in {self.text!r}")

    # formula := [name '~'] rhs
    def formula(self) -> tuple[str | None, list[TermSpec], bool]:
        lhs = None
        if self.peek()[0] == "name" and self.peek(1)[1] == "~":
            lhs = self.next()[1]
            self.next()
        elif self.peek()[1] == "~":
            self.next()
        if self.peek()[0] == "end":
            self.fail("empty formula")
        terms: list[TermSpec] = []
        intercept = True
        sign = "+"
        if self.peek()[1] == "-":
            self.next()
            sign = "-"
        while True:
            kind, val = self.peek()
            if kind == "num" and float(val) in (0.0, 1.0):
                self.next()
                if sign == "-" and float(val) == 1.0:
                    intercept = False
                elif sign == "+" and float(val) == 0.0:
                    intercept = False
                elif sign == "+":
                    intercept = True
                else:
                    self.fail("only '-1' may be subtracted")
            elif sign == "-":
                self.fail("only '-1' may be subtracted")
            else:
                terms.append(self.term())
            kind, val = self.next()
            if kind == "end":
                break
            if val not in ("+", "-"):
                self.fail(f"unexpected {val!r}")
            sign = val
        return lhs, terms, intercept

    def term(self) -> TermSpec:
        kind, name = self.next()
        if kind != "name":
            self.fail(f"unexpected {name or 'end of input'!r}")
        if self.peek()[1] != "(":
            return TermSpec("linear", (name,), label=name)
        self.next()
        if name == "I":
            expr = self.expr()
            self.expect(")")
            vars_ = sorted(_expr_vars(expr))
            if len(vars_) != 1:
                self.fail("I() must reference exactly one variable")
            return TermSpec("transform", (vars_[0],), expr=expr,
                            label=f"I({_render_expr(expr)})")
        if name == "poly":
            kind, var = self.next()
            if kind != "name":
                self.fail("poly() needs a variable name")
            self.expect(",")
            kind, deg = self.next()
            if kind != "num" or float(deg) != int(float(deg)) or int(float(deg)) < 1:
                self.fail("poly() degree must be a positive integer")
            self.expect(")")
            d = int(float(deg))
            return TermSpec("poly", (var,), options={"degree": d}, label=f"poly({var}, {d})")
        if name in ("s", "s2"):
            return self.smooth(name)
        if name in _UNSUPPORTED:
            self.fail(f"term constructor '{name}()' is not supported")
        self.fail(f"unknown function '{name}()'")

    def smooth(self, fun: str) -> TermSpec:
        kind, var = self.next()
        if kind != "name":
            self.fail(f"{fun}() needs a variable name")
        opts: dict[str, Any] = {}
        while self.peek()[1] == ",":
            self.next()
            kind, key = self.next()
            if kind != "name" or self.peek()[1] != "=":
                self.fail(f"{fun}() accepts a single variable; use key = value options")
            self.next()
            kind, val = self.next()
            if kind == "num":
                v: Any = float(val)
                if v == int(v):
                    v = int(v)
            elif kind == "str":
                v = val[1:-1]
            elif kind == "name":
                v = val
            else:
                self.fail(f"bad value for {key}")
            if key in opts:
                self.fail(f"duplicate option {key}")
            opts[key] = v
        self.expect(")")
        if fun == "s":
            unknown = set(opts) - set(SMOOTH_DEFAULTS)
            if unknown:
                self.fail(f"unknown s() option(s) {sorted(unknown)}")
            full = {**SMOOTH_DEFAULTS, **opts}
            if full["bs"] not in SMOOTH_BASES:
                self.fail(f"basis bs = \"{full['bs']}\" is not supported")
            for key in ("k", "degree", "penalty_order"):
                if not isinstance(full[key], int):
                    self.fail(f"{key} must be an integer")
            if full["k"] < 3 or full["k"] < full["degree"] + 1:
                self.fail(f"k = {full['k']} too small for degree {full['degree']}")
            if not 1 <= full["penalty_order"] < full["k"]:
                self.fail("penalty_order must be in [1, k)")
            return TermSpec("smooth", (var,), options=full, label=f"s({var})")
        unknown = set(opts) - set(SPECIAL_DEFAULTS)
        if unknown:
            self.fail(f"unknown s2() option(s) {sorted(unknown)}")
        full = {**SPECIAL_DEFAULTS, **opts}
        if full["bs"] not in SPECIAL_BASES:
            self.fail(f"special basis bs = \"{full['bs']}\" is not supported")
        return TermSpec("special", (var,), options=full, label=f"s2({var})")

    # arithmetic for I(): expr := add
    def expr(self):
        left = self.mul()
        while self.peek()[1] in ("+", "-"):
            op = self.next()[1]
            left = ("bin", op, left, self.mul())
        return left

    def mul(self):
        left = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.next()[1]
            left = ("bin", op, left, self.unary())
        return left

    def unary(self):
        if self.peek()[1] == "-":
            self.next()
            return ("neg", self.unary())
        if self.peek()[1] == "+":
            self.next()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.next()
            # right associative; exponent may carry a sign
            return ("bin", "^", base, self.unary())
        return base

    def atom(self):
        kind, val = self.next()
        if kind == "num":
            return ("num", float(val))
        if kind == "name":
            if self.peek()[1] == "(":
                self.fail(f"function calls are not allowed inside I(): {val}")
            return ("var", val)
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        self.fail(f"unexpected {val or 'end of input'!r} in expression")


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _expr_vars(e) -> set[str]:
    tag = e[0]
    if tag == "var":
        return {e[1]}
    if tag == "num":
        return set()
    if tag == "neg":
        return _expr_vars(e[1])
    return _expr_vars(e[2]) | _expr_vars(e[3])


def _fmt_num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() and abs(v) < 1e15 else repr(float(v))


def _render_expr(e, parent: int = 0, right: bool = False) -> str:
    tag = e[0]
    if tag == "num":
        return _fmt_num(e[1])
    if tag == "var":
        return e[1]
    if tag == "neg":
        s = "-" + _render_expr(e[1], _PREC["neg"])
        return f"({s})" if parent > _PREC["neg"] else s
    op = e[1]
    p = _PREC[op]
    if op == "^":
        s = f"{_render_expr(e[2], p + 1)}^{_render_expr(e[3], p, right=True)}"
    else:
        s = f"{_render_expr(e[2], p)} {op} {_render_expr(e[3], p, right=True)}"
    need = parent > p or (parent == p and right and op != "^")
    return f"({s})" if need else s


def _eval_expr(e, env: dict[str, np.ndarray]) -> np.ndarray:
    tag = e[0]
    if tag == "num":
        return np.float64(e[1])
    if tag == "var":
        return env[e[1]]
    if tag == "neg":
        return -_eval_expr(e[1], env)
    a = _eval_expr(e[2], env)
    b = _eval_expr(e[3], env)
    op = e[1]
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if np.any(np.asarray(b) == 0):
            raise ZeroDivisionError("division by zero in transform expression")
        return a / b
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.power(a, b)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite value in transform expression")
    return out


def parse_formula(text: str) -> tuple[str | None, list[TermSpec]]:
    """Parse one formula into ``(lhs, terms)`` with the intercept prepended."""
    lhs, terms, intercept = _Parser(text).formula()
    if intercept:
        terms.insert(0, TermSpec("intercept", label="(Intercept)"))
    labels = [t.label for t in terms]
    dup = {lab for lab in labels if labels.count(lab) > 1}
    if dup:
        raise FormulaError(f"duplicate term(s) {sorted(dup)} in {text!r}")
    return lhs, terms


def parse_formula_set(texts: Sequence[str] | str, family) -> FormulaSet:
    """Parse formulas for all distribution parameters of ``family``.

    The first formula carries the response and belongs to the first
    parameter. Later formulas bind to a parameter by their left-hand side,
    or by position when they have none. Parameters without a formula get
    an intercept-only predictor.
    """
    if isinstance(texts, str):
        texts = [texts]
    if not texts:
        raise FormulaError("no formula given")
    names = list(family.names)
    if len(texts) > len(names):
        raise FormulaError(f"{len(texts)} formulas for {len(names)} parameters of family {family.name!r}")
    assigned: dict[str, list[TermSpec]] = {}
    response = None
    for pos, text in enumerate(texts):
        lhs, terms = parse_formula(text)
        if pos == 0:
            if lhs is None:
                raise FormulaError(f"first formula needs a response: {text!r}")
            response = lhs
            param = names[0]
        elif lhs is None:
            param = names[pos]
        elif lhs in names:
            param = lhs
        else:
            raise FormulaError(f"'{lhs}' is not a parameter of family {family.name!r} {names}")
        if param in assigned:
            raise FormulaError(f"parameter {param!r} has more than one formula")
        assigned[param] = terms
    full = {}
    for name in names:
        full[name] = assigned.get(name, [TermSpec("intercept", label="(Intercept)")])
    return FormulaSet(response=response, terms=full)


def render_term(t: TermSpec) -> str:
    if t.kind == "intercept":
        return "1"
    if t.kind in ("linear", "transform", "poly"):
        return t.label
    defaults = SMOOTH_DEFAULTS if t.kind == "smooth" else SPECIAL_DEFAULTS
    fun = "s" if t.kind == "smooth" else "s2"
    extra = []
    for key, val in t.options.items():
        if key == "bs" and t.kind == "special":
            extra.append(f'bs = "{val}"')
        elif defaults.get(key) != val:
            extra.append(f'{key} = "{val}"' if isinstance(val, str) else f"{key} = {val}")
    return f"{fun}({', '.join([t.variables[0], *extra])})"


def render_formula_set(fs: FormulaSet) -> list[str]:
    out = []
    for pos, (param, terms) in enumerate(fs.terms.items()):
        lhs = fs.response if pos == 0 else param
        parts = [render_term(t) for t in terms if t.kind != "intercept"]
        if not any(t.kind == "intercept" for t in terms):
            parts.append("-1")
        if not parts:
            parts = ["1"]
        rhs = parts[0]
        for p in parts[1:]:
            rhs += f" - 1" if p == "-1" else f" + {p}"
        out.append(f"{lhs} ~ {rhs}")
    return out


def eval_transform(spec: TermSpec, table: pd.DataFrame) -> np.ndarray:
    """Evaluate an ``I(...)`` term on a data table."""
    if spec.kind != "transform":
        raise FormulaError(f"{spec.label} is not a transform term")
    var = spec.variables[0]
    if var not in table:
        raise KeyError(f"column '{var}' not found")
    col = table[var]
    if not pd.api.types.is_numeric_dtype(col):
        raise TypeError(f"column '{var}' used in {spec.label} is not numeric")
    x = np.asarray(col, dtype=float)
    out = _eval_expr(spec.expr, {var: x})
    return np.broadcast_to(np.asarray(out, dtype=float), x.shape).copy()
