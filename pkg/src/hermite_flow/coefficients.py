"""Coefficient fields drawn from a differentiation-closed symbolic family.

Members are sympy expressions built from constants, coordinates ``x1..xd``,
sums, products, positive integer powers, ``sin``/``cos``/``tanh`` of affine
arguments and ``exp`` of a negative-definite quadratic.  Derivatives of members
stay in the family, so exact high-order derivatives are always available.

Text form is a small prefix grammar, e.g. ``(add 1 (mul 0.5 (sin x1)))``.
"""
from __future__ import annotations

import hashlib
import math
from functools import cached_property, lru_cache

import numpy as np
import sympy as sp

MAX_DERIVATIVE_ORDER = 6

BOUNDED = "bounded"
LINEAR = "linear"
SUPERLINEAR = "superlinear"


class FamilyError(ValueError):
    """Expression is outside the supported coefficient family."""


class DerivativeOrderError(ValueError):
    """Requested derivative exceeds the evaluator bound."""


@lru_cache(maxsize=None)
def symbols(dim: int) -> tuple[sp.Symbol, ...]:
    return tuple(sp.Symbol(f"x{j + 1}", real=True) for j in range(dim))


# ---------------------------------------------------------------------------
# prefix grammar

_OPS = {"add", "sub", "mul", "neg", "pow", "sin", "cos", "tanh", "exp"}


def _tokenize(text: str) -> list[str]:
    return text.replace("(", " ( ").replace(")", " ) ").split()


def parse_prefix(text: str, dim: int) -> sp.Expr:
    """Parse a prefix expression such as ``(mul 0.5 (sin x1))`` into sympy."""
    tokens = _tokenize(str(text))
    if not tokens:
        raise FamilyError("empty coefficient expression")
    xs = symbols(dim)
    pos = 0

    def atom(tok: str) -> sp.Expr:
        if tok.startswith("x") and tok[1:].isdigit():
            j = int(tok[1:])
            if not 1 <= j <= dim:
                raise FamilyError(f"coordinate {tok} out of range for dim {dim}")
            return xs[j - 1]
        if tok == "pi":
            return sp.pi
        try:
            val = float(tok)
        except ValueError:
            raise FamilyError(f"unknown token {tok!r}") from None
        if not math.isfinite(val):
            raise FamilyError(f"non-finite constant {tok!r}")
        return sp.Integer(int(val)) if val.is_integer() else sp.Float(val, 17)

    def expr() -> sp.Expr:
        nonlocal pos
        if pos >= len(tokens):
            raise FamilyError("unexpected end of expression")
        tok = tokens[pos]
        pos += 1
        if tok == ")":
            raise FamilyError("unexpected ')'")
        if tok != "(":
            return atom(tok)
        if pos >= len(tokens):
            raise FamilyError("unexpected end of expression")
        op = tokens[pos]
        pos += 1
        if op not in _OPS:
            raise FamilyError(f"unknown operator {op!r}")
        args = []
        while pos < len(tokens) and tokens[pos] != ")":
            args.append(expr())
        if pos >= len(tokens):
            raise FamilyError("missing ')'")
        pos += 1
        return _build(op, args)

    out = expr()
    if pos != len(tokens):
        raise FamilyError(f"trailing tokens: {' '.join(tokens[pos:])}")
    return out


def _build(op: str, args: list[sp.Expr]) -> sp.Expr:
    unary = {"neg": lambda a: -a, "sin": sp.sin, "cos": sp.cos, "tanh": sp.tanh, "exp": sp.exp}
    if op in unary:
        if len(args) != 1:
            raise FamilyError(f"{op} takes one argument, got {len(args)}")
        return unary[op](args[0])
    if op == "add":
        return sp.Add(*args)
    if op == "mul":
        return sp.Mul(*args)
    if op == "sub":
        if len(args) != 2:
            raise FamilyError("sub takes two arguments")
        return args[0] - args[1]
    if op == "pow":
        if len(args) != 2 or not (args[1].is_Integer and args[1] > 0):
            raise FamilyError("pow takes a base and a positive integer exponent")
        return args[0] ** args[1]
    raise FamilyError(f"unknown operator {op!r}")


def to_prefix(expr: sp.Expr) -> str:
    """Serialize a family member back to the prefix grammar."""
    if expr.is_Symbol:
        return expr.name
    if expr is sp.pi:
        return "pi"
    if expr.is_Number:
        val = float(expr)
        return str(int(val)) if val.is_integer() and abs(val) < 2 ** 53 else repr(val)
    if expr.is_Add:
        return "(add " + " ".join(to_prefix(a) for a in expr.args) + ")"
    if expr.is_Mul:
        return "(mul " + " ".join(to_prefix(a) for a in expr.args) + ")"
    if expr.is_Pow:
        return f"(pow {to_prefix(expr.base)} {to_prefix(expr.exp)})"
    for fn, name in ((sp.sin, "sin"), (sp.cos, "cos"), (sp.tanh, "tanh"), (sp.exp, "exp")):
        if isinstance(expr, fn):
            return f"({name} {to_prefix(expr.args[0])})"
    raise FamilyError(f"cannot serialize {expr}")


# ---------------------------------------------------------------------------
# family membership and growth


def _poly_degree(expr: sp.Expr, xs) -> int | None:
    if not expr.free_symbols:
        return 0
    try:
        return sp.Poly(expr, *xs).total_degree()
    except sp.PolynomialError:
        return None


def growth_degree(expr: sp.Expr, xs) -> int:
    """Structural polynomial growth order; raises FamilyError outside the family."""
    if expr.is_Number or expr is sp.pi:
        return 0
    if expr.is_Symbol:
        if expr not in xs:
            raise FamilyError(f"unknown symbol {expr}")
        return 1
    if expr.is_Add:
        return max(growth_degree(a, xs) for a in expr.args)
    if expr.is_Mul:
        return sum(growth_degree(a, xs) for a in expr.args)
    if expr.is_Pow:
        if not (expr.exp.is_Integer and expr.exp > 0):
            raise FamilyError(f"only positive integer powers are allowed: {expr}")
        return growth_degree(expr.base, xs) * int(expr.exp)
    if isinstance(expr, (sp.sin, sp.cos, sp.tanh)):
        deg = _poly_degree(expr.args[0], xs)
        if deg is None or deg > 1:
            raise FamilyError(f"argument of {type(expr).__name__} must be affine: {expr}")
        return 0
    if isinstance(expr, sp.exp):
        arg = expr.args[0]
        deg = _poly_degree(arg, xs)
        if deg == 0:
            return 0
        if deg != 2:
            raise FamilyError(f"exp argument must be a negative-definite quadratic: {expr}")
        H = np.array(sp.hessian(arg, xs).tolist(), dtype=float)
        if np.any(np.linalg.eigvalsh(H) >= 0):
            raise FamilyError(f"exp argument must be a negative-definite quadratic: {expr}")
        return 0
    raise FamilyError(f"unsupported expression: {expr}")


def growth_class(expr: sp.Expr, dim: int) -> str:
    deg = growth_degree(expr, symbols(dim))
    return BOUNDED if deg == 0 else LINEAR if deg == 1 else SUPERLINEAR


# ---------------------------------------------------------------------------


class CoefficientFunction:
    """A family member on ``R^dim`` with growth metadata and cached derivatives."""

    def __init__(self, expr, dim: int, declared: str | None = None, max_order: int = MAX_DERIVATIVE_ORDER):
        self.expr = sp.sympify(expr)
        self.dim = int(dim)
        self.max_order = max_order
        self.growth = growth_class(self.expr, self.dim)
        if declared not in (None, BOUNDED, LINEAR):
            raise ValueError(f"unknown growth class {declared!r}")
        self.declared = declared

    @classmethod
    def parse(cls, text: str, dim: int, declared: str | None = None) -> "CoefficientFunction":
        return cls(parse_prefix(text, dim), dim, declared)

    @property
    def is_constant(self) -> bool:
        return not self.expr.free_symbols

    @property
    def is_zero(self) -> bool:
        return self.expr == 0

    @property
    def value(self) -> float:
        if not self.is_constant:
            raise ValueError(f"{self} is not constant")
        return float(self.expr)

    def prefix(self) -> str:
        return to_prefix(self.expr)

    def digest(self) -> str:
        return hashlib.sha256(self.prefix().encode()).hexdigest()[:16]

    @cached_property
    def _fn(self):
        return sp.lambdify(symbols(self.dim), self.expr, modules="numpy")

    def __call__(self, *x):
        if len(x) == 1 and self.dim > 1:
            x = tuple(np.asarray(x[0]))
        vals = self._fn(*x)
        shape = np.broadcast(*[np.asarray(v) for v in x]).shape if x else ()
        return np.broadcast_to(np.asarray(vals, dtype=float), shape)

    @lru_cache(maxsize=None)
    def derivative(self, order) -> "CoefficientFunction":
        """``d^order`` for a multi-index (tuple) or, in 1-d, an integer order."""
        order = (int(order),) if np.isscalar(order) else tuple(int(o) for o in order)
        if len(order) != self.dim:
            raise ValueError(f"derivative multi-index {order} does not match dim {self.dim}")
        if sum(order) > self.max_order:
            raise DerivativeOrderError(
                f"derivative of order {sum(order)} exceeds the evaluator bound {self.max_order}"
            )
        expr = self.expr
        for x, k in zip(symbols(self.dim), order):
            if k:
                expr = sp.diff(expr, x, k)
        return CoefficientFunction(sp.expand(expr), self.dim, max_order=self.max_order)

    def sup_estimate(self, radius: float = 50.0, points: int = 2001) -> float:
        """Max |value| on a grid over [-radius, radius]^d (d <= 2)."""
        grid = np.linspace(-radius, radius, points if self.dim == 1 else 401)
        mesh = np.meshgrid(*([grid] * self.dim), indexing="ij")
        return float(np.max(np.abs(self(*mesh))))

    def _coerce(self, other) -> "CoefficientFunction":
        return coefficient(other, self.dim)

    def __add__(self, other):
        return CoefficientFunction(sp.expand(self.expr + self._coerce(other).expr), self.dim)

    __radd__ = __add__

    def __sub__(self, other):
        return CoefficientFunction(sp.expand(self.expr - self._coerce(other).expr), self.dim)

    def __rsub__(self, other):
        return CoefficientFunction(sp.expand(self._coerce(other).expr - self.expr), self.dim)

    def __mul__(self, other):
        return CoefficientFunction(sp.expand(self.expr * self._coerce(other).expr), self.dim)

    __rmul__ = __mul__

    def __neg__(self):
        return CoefficientFunction(-self.expr, self.dim)

    def equals(self, other, atol: float = 1e-12, samples: int = 64) -> bool:
        """Numerical equality on random points; symbolic simplification is too slow here."""
        other = self._coerce(other)
        rng = np.random.default_rng(0)
        pts = rng.normal(scale=3.0, size=(self.dim, samples))
        return bool(np.allclose(self(*pts), other(*pts), atol=atol, rtol=0))

    def __eq__(self, other):
        return isinstance(other, CoefficientFunction) and self.dim == other.dim and self.expr == other.expr

    def __hash__(self):
        return hash((self.dim, sp.srepr(self.expr)))

    def __repr__(self):
        return f"CoefficientFunction({self.prefix()}, dim={self.dim}, growth={self.growth})"


def coefficient(value, dim: int) -> CoefficientFunction:
    """Coerce numbers, prefix strings, sympy expressions or members to a member."""
    if isinstance(value, CoefficientFunction):
        if value.dim != dim:
            raise ValueError(f"coefficient has dim {value.dim}, expected {dim}")
        return value
    if isinstance(value, str):
        return CoefficientFunction.parse(value, dim)
    if isinstance(value, dict):
        return CoefficientFunction.parse(value["expr"], dim, declared=value.get("growth"))
    if isinstance(value, (int, float, np.integer, np.floating)):
        val = float(value)
        return CoefficientFunction(sp.Integer(int(val)) if val.is_integer() else sp.Float(val, 17), dim)
    if isinstance(value, sp.Basic):
        return CoefficientFunction(value, dim)
    raise TypeError(f"cannot interpret {value!r} as a coefficient")
