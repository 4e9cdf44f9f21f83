"""Expression model for piecewise-smooth functions.

The supported class is multivariate polynomials combined through sums,
scalar multiples, max, min, abs and affine pre-composition.  Everything in
this class is finite-valued, locally Lipschitz and semi-algebraic, and the
active max/min selections give an explicit decomposition into smooth
polynomial pieces with exact gradients.

``abs(e)`` desugars to ``max(e, -e)`` at parse time, so downstream rules
only ever see five node kinds.
"""
from __future__ import annotations

import functools
import itertools
import re
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

# a monomial is (coefficient, exponent tuple)
Monomial = tuple[float, tuple[int, ...]]


class ParseError(ValueError):
    """Syntax or validation error in the DSL, with source position."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


@dataclass(frozen=True)
class Poly:
    n: int
    monomials: tuple[Monomial, ...]


@dataclass(frozen=True)
class Sum:
    children: tuple["FuncExpr", ...]


@dataclass(frozen=True)
class Scale:
    c: float
    child: "FuncExpr"


@dataclass(frozen=True)
class Max:
    children: tuple["FuncExpr", ...]


@dataclass(frozen=True)
class Min:
    children: tuple["FuncExpr", ...]


@dataclass(frozen=True)
class AffinePre:
    # evaluates child at A @ x + b; A is rows-of-tuples, shape (child_dim, n)
    A: tuple[tuple[float, ...], ...]
    b: tuple[float, ...]
    child: "FuncExpr"


FuncExpr = Union[Poly, Sum, Scale, Max, Min, AffinePre]


# ---------------------------------------------------------------------------
# dimensions and polynomial arithmetic

def dim(e: FuncExpr) -> int:
    if isinstance(e, Poly):
        return e.n
    if isinstance(e, (Sum, Max, Min)):
        return dim(e.children[0])
    if isinstance(e, Scale):
        return dim(e.child)
    if isinstance(e, AffinePre):
        return len(e.A[0]) if e.A else 0
    raise TypeError(type(e))


def _canon_poly(n: int, monomials: Iterable[Monomial]) -> Poly:
    acc: dict[tuple[int, ...], float] = {}
    for c, exps in monomials:
        if len(exps) != n:
            raise ValueError("exponent arity mismatch")
        if any(p < 0 for p in exps):
            raise ValueError("negative exponent")
        acc[exps] = acc.get(exps, 0.0) + c
    kept = [(c, e) for e, c in acc.items() if c != 0.0]
    kept.sort(key=lambda m: m[1], reverse=True)
    return Poly(n, tuple(kept))


def poly_const(n: int, c: float) -> Poly:
    return _canon_poly(n, [(c, (0,) * n)])


def poly_var(n: int, i: int) -> Poly:
    exps = tuple(1 if j == i else 0 for j in range(n))
    return _canon_poly(n, [(1.0, exps)])


def poly_add(a: Poly, b: Poly) -> Poly:
    return _canon_poly(a.n, a.monomials + b.monomials)


def poly_mul(a: Poly, b: Poly) -> Poly:
    out = []
    for ca, ea in a.monomials:
        for cb, eb in b.monomials:
            out.append((ca * cb, tuple(p + q for p, q in zip(ea, eb))))
    return _canon_poly(a.n, out)


def poly_scale(c: float, a: Poly) -> Poly:
    return _canon_poly(a.n, [(c * cm, e) for cm, e in a.monomials])


def poly_pow(a: Poly, p: int) -> Poly:
    out = poly_const(a.n, 1.0)
    for _ in range(p):
        out = poly_mul(out, a)
    return out


def _as_const(e: FuncExpr) -> float | None:
    """Return the value of a constant polynomial, else None."""
    if isinstance(e, Poly):
        if not e.monomials:
            return 0.0
        if len(e.monomials) == 1 and all(p == 0 for p in e.monomials[0][1]):
            return e.monomials[0][0]
    return None


# ---------------------------------------------------------------------------
# smart constructors (normalization used by the parser)

def make_sum(children: list[FuncExpr]) -> FuncExpr:
    flat: list[FuncExpr] = []
    for ch in children:
        if isinstance(ch, Sum):
            flat.extend(ch.children)
        else:
            flat.append(ch)
    n = dim(flat[0])
    poly_part = poly_const(n, 0.0)
    rest: list[FuncExpr] = []
    for ch in flat:
        if isinstance(ch, Poly):
            poly_part = poly_add(poly_part, ch)
        else:
            rest.append(ch)
    if poly_part.monomials:
        rest.append(poly_part)
    if not rest:
        return poly_const(n, 0.0)
    if len(rest) == 1:
        return rest[0]
    return Sum(tuple(rest))


def scale(c: float, e: FuncExpr) -> FuncExpr:
    if isinstance(e, Poly):
        return poly_scale(c, e)
    if isinstance(e, Scale):
        return scale(c * e.c, e.child)
    if c == 1.0:
        return e
    return Scale(c, e)


def negate(e: FuncExpr) -> FuncExpr:
    return scale(-1.0, e)


def make_abs(e: FuncExpr) -> FuncExpr:
    # definitional desugaring: abs(e) == max(e, -e)
    return Max((e, negate(e)))


# ---------------------------------------------------------------------------
# parser

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[a-zA-Z_][a-zA-Z_0-9]*)"
    r"|(?P<op>[-+*^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            raise ParseError(f"unexpected character {stripped[0]!r}", pos)
        if m.lastgroup is None:
            break
        tokens.append((m.lastgroup, m.group(m.lastgroup), m.start(m.lastgroup)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, n: int):
        self.tokens = _tokenize(text)
        self.n = n
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.next()
        if val != value:
            raise ParseError(f"expected {value!r}, found {val or 'end of input'!r}", pos)

    def parse(self) -> FuncExpr:
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", pos)
        return e

    def expr(self) -> FuncExpr:
        kind, val, _ = self.peek()
        if val in ("+", "-"):
            self.next()
            first = self.term()
            if val == "-":
                first = negate(first)
        else:
            first = self.term()
        parts = [first]
        while self.peek()[1] in ("+", "-"):
            _, op, _ = self.next()
            t = self.term()
            parts.append(negate(t) if op == "-" else t)
        return make_sum(parts)

    def term(self) -> FuncExpr:
        factors = [self.factor()]
        while self.peek()[1] == "*":
            self.next()
            factors.append(self.factor())
        out = factors[0]
        for f in factors[1:]:
            out = self._mul(out, f)
        return out

    def _mul(self, a: FuncExpr, b: FuncExpr) -> FuncExpr:
        if isinstance(a, Poly) and isinstance(b, Poly):
            return poly_mul(a, b)
        ca, cb = _as_const(a), _as_const(b)
        if ca is not None:
            return scale(ca, b)
        if cb is not None:
            return scale(cb, a)
        pos = self.peek()[2]
        raise ParseError("product of non-polynomial subexpressions is not supported", pos)

    def factor(self) -> FuncExpr:
        base = self.atom()
        while self.peek()[1] == "^":
            self.next()
            kind, val, pos = self.next()
            if val == "-":
                raise ParseError("negative exponent", pos)
            if kind != "num" or not val.isdigit():
                raise ParseError("expected nonnegative integer exponent", pos)
            if not isinstance(base, Poly):
                raise ParseError("power of non-polynomial subexpression", pos)
            base = poly_pow(base, int(val))
        return base

    def atom(self) -> FuncExpr:
        kind, val, pos = self.next()
        if kind == "num":
            return poly_const(self.n, float(val))
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "name":
            if val in ("max", "min"):
                self.expect("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.next()
                    args.append(self.expr())
                self.expect(")")
                if len(args) < 2:
                    raise ParseError(f"{val} needs at least two arguments", pos)
                return Max(tuple(args)) if val == "max" else Min(tuple(args))
            if val == "abs":
                self.expect("(")
                e = self.expr()
                self.expect(")")
                return make_abs(e)
            m = re.fullmatch(r"x(\d+)", val)
            if m:
                idx = int(m.group(1))
                if not 1 <= idx <= self.n:
                    raise ParseError(
                        f"variable x{idx} out of range for dimension {self.n}", pos
                    )
                return poly_var(self.n, idx - 1)
            raise ParseError(f"unknown identifier {val!r}", pos)
        raise ParseError(f"unexpected token {val or 'end of input'!r}", pos)


def parse_expr(text: str, n: int) -> FuncExpr:
    """Parse a DSL string into a validated expression of ambient dimension n."""
    if n < 1:
        raise ValueError("dimension must be positive")
    return _Parser(text, n).parse()


# ---------------------------------------------------------------------------
# printing (inverse of parse up to whitespace / canonical polynomial form)

def _format_monomial(c: float, exps: tuple[int, ...], first: bool) -> str:
    parts = []
    for i, p in enumerate(exps):
        if p == 1:
            parts.append(f"x{i + 1}")
        elif p > 1:
            parts.append(f"x{i + 1}^{p}")
    mag = abs(c)
    if not parts:
        body = repr(mag)
    elif mag == 1.0:
        body = "*".join(parts)
    else:
        body = "*".join([repr(mag)] + parts)
    if first:
        return body if c >= 0 else "-" + body
    return (" + " if c >= 0 else " - ") + body


def format_expr(e: FuncExpr) -> str:
    """Pretty-print an expression in the DSL grammar."""
    if isinstance(e, Poly):
        if not e.monomials:
            return "0"
        out = ""
        for k, (c, exps) in enumerate(e.monomials):
            out += _format_monomial(c, exps, first=(k == 0))
        return out
    if isinstance(e, Sum):
        out = ""
        for k, ch in enumerate(e.children):
            part = f"({format_expr(ch)})" if isinstance(ch, Sum) else format_expr(ch)
            if k == 0:
                out = part
            elif part.startswith("-"):
                out += " - " + part[1:]
            else:
                out += " + " + part
        return out
    if isinstance(e, Scale):
        return f"{e.c!r}*({format_expr(e.child)})"
    if isinstance(e, Max):
        return "max(" + ", ".join(format_expr(ch) for ch in e.children) + ")"
    if isinstance(e, Min):
        return "min(" + ", ".join(format_expr(ch) for ch in e.children) + ")"
    if isinstance(e, AffinePre):
        raise ValueError("affine pre-composition has no DSL form")
    raise TypeError(type(e))


# ---------------------------------------------------------------------------
# evaluation

@functools.lru_cache(maxsize=None)
def _poly_terms(p: Poly) -> tuple[tuple[float, tuple[tuple[int, int], ...]], ...]:
    return tuple(
        (c, tuple((i, q) for i, q in enumerate(exps) if q > 0))
        for c, exps in p.monomials
    )


def _poly_eval(p: Poly, x) -> float:
    val = 0.0
    for c, factors in _poly_terms(p):
        t = c
        for i, q in factors:
            t *= x[i] ** q
        val += t
    return val


@functools.lru_cache(maxsize=None)
def _poly_grad(p: Poly) -> tuple[Poly, ...]:
    grads = []
    for i in range(p.n):
        mons = []
        for c, exps in p.monomials:
            if exps[i] > 0:
                new = list(exps)
                new[i] -= 1
                mons.append((c * exps[i], tuple(new)))
        grads.append(_canon_poly(p.n, mons))
    return tuple(grads)


def _gen_source(e: FuncExpr) -> str:
    """Python expression source for evaluating e at a sequence x."""
    if isinstance(e, Poly):
        parts = []
        for c, factors in _poly_terms(e):
            t = [repr(c)]
            for i, q in factors:
                t.append(f"x[{i}]" if q == 1 else f"x[{i}]**{q}")
            parts.append("*".join(t))
        return "(" + ("+".join(parts) if parts else "0.0") + ")"
    if isinstance(e, Sum):
        return "(" + "+".join(_gen_source(ch) for ch in e.children) + ")"
    if isinstance(e, Scale):
        return f"({e.c!r}*{_gen_source(e.child)})"
    if isinstance(e, Max):
        return "max(" + ",".join(_gen_source(ch) for ch in e.children) + ")"
    if isinstance(e, Min):
        return "min(" + ",".join(_gen_source(ch) for ch in e.children) + ")"
    raise TypeError(type(e))  # AffinePre: no flat source, fall back


@functools.lru_cache(maxsize=None)
def _compiled(e: FuncExpr):
    try:
        src = "lambda x: " + _gen_source(e)
    except TypeError:
        return None
    return eval(compile(src, "<expr>", "eval"), {"__builtins__": {}, "max": max, "min": min}, {})


def eval_expr(f: FuncExpr, x) -> float:
    """Exact recursive evaluation of f at a point."""
    x = np.asarray(x, dtype=float)
    return _eval(f, x)


def _eval(e: FuncExpr, x) -> float:
    fn = _compiled(e)
    if fn is not None:
        return float(fn(x.tolist() if isinstance(x, np.ndarray) else x))
    if isinstance(e, Poly):
        return _poly_eval(e, x)
    if isinstance(e, Sum):
        return sum(_eval(ch, x) for ch in e.children)
    if isinstance(e, Scale):
        return e.c * _eval(e.child, x)
    if isinstance(e, Max):
        return max(_eval(ch, x) for ch in e.children)
    if isinstance(e, Min):
        return min(_eval(ch, x) for ch in e.children)
    if isinstance(e, AffinePre):
        y = np.asarray(e.A, dtype=float) @ x + np.asarray(e.b, dtype=float)
        return _eval(e.child, y)
    raise TypeError(type(e))


# ---------------------------------------------------------------------------
# active smooth pieces

Selection = tuple[tuple[tuple[int, ...], int], ...]  # sorted (path, child index)


def activity_threshold(act_tol: float, node_value: float) -> float:
    # relative tolerance: exact ties only happen on measure-zero sets in floats
    return act_tol * (1.0 + abs(node_value))


@dataclass(frozen=True)
class SmoothPiece:
    """One active max/min selection: a smooth polynomial composite near x."""

    expr: FuncExpr
    selection: Selection
    validity_radius: float

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return _sel_value(self.expr, x, dict(self.selection), ())

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return _sel_grad(self.expr, x, dict(self.selection), ())


def _sel_value(e, x, sel, path) -> float:
    if isinstance(e, Poly):
        return _poly_eval(e, x)
    if isinstance(e, Sum):
        return sum(
            _sel_value(ch, x, sel, path + (i,)) for i, ch in enumerate(e.children)
        )
    if isinstance(e, Scale):
        return e.c * _sel_value(e.child, x, sel, path + (0,))
    if isinstance(e, (Max, Min)):
        i = sel[path]
        return _sel_value(e.children[i], x, sel, path + (i,))
    if isinstance(e, AffinePre):
        y = np.asarray(e.A, dtype=float) @ x + np.asarray(e.b, dtype=float)
        return _sel_value(e.child, y, sel, path + (0,))
    raise TypeError(type(e))


def _sel_grad(e, x, sel, path) -> np.ndarray:
    if isinstance(e, Poly):
        return np.array([_poly_eval(g, x) for g in _poly_grad(e)])
    if isinstance(e, Sum):
        return sum(_sel_grad(ch, x, sel, path + (i,)) for i, ch in enumerate(e.children))
    if isinstance(e, Scale):
        return e.c * _sel_grad(e.child, x, sel, path + (0,))
    if isinstance(e, (Max, Min)):
        i = sel[path]
        return _sel_grad(e.children[i], x, sel, path + (i,))
    if isinstance(e, AffinePre):
        A = np.asarray(e.A, dtype=float)
        y = A @ x + np.asarray(e.b, dtype=float)
        return A.T @ _sel_grad(e.child, y, sel, path + (0,))
    raise TypeError(type(e))


def _enumerate_selections(e, x, path, act_tol):
    """All active selections of the subtree, with the smallest inactivity gap."""
    if isinstance(e, Poly):
        return [({}, np.inf)]
    if isinstance(e, Scale):
        return _enumerate_selections(e.child, x, path + (0,), act_tol)
    if isinstance(e, AffinePre):
        y = np.asarray(e.A, dtype=float) @ x + np.asarray(e.b, dtype=float)
        return _enumerate_selections(e.child, y, path + (0,), act_tol)
    if isinstance(e, Sum):
        combos = [({}, np.inf)]
        for i, ch in enumerate(e.children):
            child_sels = _enumerate_selections(ch, x, path + (i,), act_tol)
            combos = [
                ({**s1, **s2}, min(m1, m2))
                for s1, m1 in combos
                for s2, m2 in child_sels
            ]
        return combos
    if isinstance(e, (Max, Min)):
        vals = [_eval(ch, x) for ch in e.children]
        node_val = max(vals) if isinstance(e, Max) else min(vals)
        thresh = activity_threshold(act_tol, node_val)
        out = []
        gaps = [abs(node_val - v) for v in vals]
        inactive_gap = min(
            (g for g in gaps if g > thresh), default=np.inf
        )
        for i, (v, g) in enumerate(zip(vals, gaps)):
            if g <= thresh:
                for s, m in _enumerate_selections(e.children[i], x, path + (i,), act_tol):
                    out.append(({**s, path: i}, min(m, inactive_gap)))
        return out
    raise TypeError(type(e))


def active_pieces(f: FuncExpr, x, act_tol: float = 1e-9) -> list[SmoothPiece]:
    """Every smooth selection that achieves the max/min values at x.

    The activity test at each choice node is relative:
    ``|child - node| <= act_tol * (1 + |node value|)``.
    """
    if act_tol < 0:
        raise ValueError("act_tol must be nonnegative")
    x = np.asarray(x, dtype=float)
    pieces = []
    for sel, margin in _enumerate_selections(f, x, (), act_tol):
        selection = tuple(sorted(sel.items()))
        p = SmoothPiece(f, selection, 0.0)
        g = p.gradient(x)
        radius = margin / (2.0 * (1.0 + float(np.linalg.norm(g))))
        pieces.append(SmoothPiece(f, selection, float(radius)))
    return pieces


def piece_gradient(p: SmoothPiece, x) -> np.ndarray:
    """Exact gradient of the selected smooth composite."""
    return p.gradient(x)


def active_signature(f: FuncExpr, x, act_tol: float = 1e-9) -> frozenset:
    """Hashable fingerprint of the active selection set (used for events)."""
    return frozenset(
        sel for sel, _ in (
            (tuple(sorted(s.items())), m)
            for s, m in _enumerate_selections(f, np.asarray(x, dtype=float), (), act_tol)
        )
    )
