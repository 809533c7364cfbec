"""Small symbolic expression language for problem data.

Expressions are immutable trees over the coordinate variables ``x0, x1``
(macroscopic) and ``y0, y1`` (microscopic) plus named parameters that are
bound at evaluation time.  Evaluation works on floats and on numpy arrays
(broadcasting), which is what the assembly routines use.

Grammar::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('+' | '-') unary | power
    power   := atom ('^' INTEGER)?
    atom    := NUMBER | IDENT | FUNC '(' expr ')' | '(' expr ')'

``FUNC`` is one of ``sin cos exp sqrt``; exponents are non-negative integer
literals.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Union

import numpy as np

VARIABLES = ("x0", "x1", "y0", "y1")
FUNCTIONS = ("sin", "cos", "exp", "sqrt")

Number = Union[float, np.ndarray]


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, text: str, position: int):
        super().__init__(f"{message} at position {position}: {text!r}")
        self.text = text
        self.position = position


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, position: int | None = None):
        where = "" if position is None else f" at position {position}"
        super().__init__(f"unknown identifier {name!r}{where}")
        self.name = name
        self.position = position


class EvaluationError(ArithmeticError):
    pass


# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------


class Expr:
    """Base class of all expression nodes."""

    __slots__ = ()

    def __add__(self, other):
        return Add(self, as_expr(other))

    def __radd__(self, other):
        return Add(as_expr(other), self)

    def __sub__(self, other):
        return Sub(self, as_expr(other))

    def __rsub__(self, other):
        return Sub(as_expr(other), self)

    def __mul__(self, other):
        return Mul(self, as_expr(other))

    def __rmul__(self, other):
        return Mul(as_expr(other), self)

    def __truediv__(self, other):
        return Div(self, as_expr(other))

    def __rtruediv__(self, other):
        return Div(as_expr(other), self)

    def __neg__(self):
        return Neg(self)

    def __pow__(self, n: int):
        return Pow(self, n)

    def __str__(self) -> str:
        return to_str(self)


@dataclass(frozen=True, eq=True, repr=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Param(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Func(Expr):
    name: str
    arg: Expr


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int

    def __post_init__(self):
        if not isinstance(self.exponent, (int, np.integer)) or self.exponent < 0:
            raise ExprError(f"exponent must be a non-negative integer, got {self.exponent!r}")


ZERO = Const(0.0)
ONE = Const(1.0)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)):
        return Const(float(value))
    raise TypeError(f"cannot convert {type(value).__name__} to Expr")


def var(name: str) -> Var:
    if name not in VARIABLES:
        raise UnknownIdentifierError(name)
    return Var(name)


def sin(e) -> Expr:
    return Func("sin", as_expr(e))


def cos(e) -> Expr:
    return Func("cos", as_expr(e))


def exp(e) -> Expr:
    return Func("exp", as_expr(e))


def sqrt(e) -> Expr:
    return Func("sqrt", as_expr(e))


@dataclass(frozen=True)
class VecExpr:
    """Two-component vector of expressions, e.g. a micro-domain map."""

    components: tuple[Expr, Expr]

    def __post_init__(self):
        if len(self.components) != 2:
            raise ExprError("VecExpr needs exactly 2 components")

    def __getitem__(self, k: int) -> Expr:
        return self.components[k]

    def __iter__(self):
        return iter(self.components)

    def __len__(self) -> int:
        return 2


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[a-zA-Z_][a-zA-Z0-9_]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, params: frozenset[str]):
        self.text = text
        self.params = params
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value:
            found = "end of input" if kind == "end" else repr(val)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", self.text, pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {val!r}", self.text, pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            rhs = self.term()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            rhs = self.unary()
            e = Mul(e, rhs) if op == "*" else Div(e, rhs)
        return e

    def unary(self) -> Expr:
        if self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            kind, val, pos = self.take()
            if kind != "number" or not val.isdigit():
                raise ExprSyntaxError("exponent must be a non-negative integer literal", self.text, pos)
            return Pow(base, int(val))
        return base

    def atom(self) -> Expr:
        kind, val, pos = self.take()
        if kind == "number":
            return Const(float(val))
        if kind == "ident":
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Func(val, arg)
            if self.peek()[1] == "(":
                raise UnknownIdentifierError(val, pos)
            if val in VARIABLES:
                return Var(val)
            if val in self.params:
                return Param(val)
            raise UnknownIdentifierError(val, pos)
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(val)
        raise ExprSyntaxError(f"unexpected {found}", self.text, pos)


def parse(text: str, params: Iterable[str] = ()) -> Expr:
    """Parse ``text`` into an expression tree.

    Identifiers other than ``x0, x1, y0, y1`` and the four function names
    must appear in ``params``.
    """
    return _Parser(text, frozenset(params)).parse()


# --------------------------------------------------------------------------
# Printing
# --------------------------------------------------------------------------

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}


def _prec(e: Expr) -> int:
    if isinstance(e, Const) and e.value < 0:
        return 3
    return _PREC.get(type(e), 5)


def to_str(e: Expr) -> str:
    """Print ``e`` in the parser's grammar; ``parse(to_str(e))`` is exact."""
    if isinstance(e, Const):
        v = e.value
        if not math.isfinite(v):
            raise ExprError(f"cannot print non-finite constant {v}")
        s = repr(float(v))
        return s
    if isinstance(e, (Var, Param)):
        return e.name
    if isinstance(e, Func):
        return f"{e.name}({to_str(e.arg)})"
    if isinstance(e, Neg):
        inner = to_str(e.arg)
        if _prec(e.arg) <= 3:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Pow):
        inner = to_str(e.base)
        if _prec(e.base) <= 4:
            inner = f"({inner})"
        return f"{inner}^{e.exponent}"
    p = _PREC[type(e)]
    left = to_str(e.left)
    if _prec(e.left) < p:
        left = f"({left})"
    right = to_str(e.right)
    # right operand of - and / needs parentheses at equal precedence
    if _prec(e.right) < p or (_prec(e.right) == p and isinstance(e, (Sub, Div))):
        right = f"({right})"
    sym = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(e)]
    return f"{left} {sym} {right}"


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


def _any(mask) -> bool:
    return bool(np.any(mask))


def evaluate(e: Expr, env: Mapping[str, Number]) -> Number:
    """Evaluate ``e`` with variables and parameters bound in ``env``.

    Array bindings broadcast; a subtree without free symbols evaluates to
    a plain float.
    """
    if isinstance(e, Const):
        return e.value
    if isinstance(e, (Var, Param)):
        try:
            return env[e.name]
        except KeyError:
            raise UnknownIdentifierError(e.name) from None
    if isinstance(e, Neg):
        return -evaluate(e.arg, env)
    if isinstance(e, Add):
        return evaluate(e.left, env) + evaluate(e.right, env)
    if isinstance(e, Sub):
        return evaluate(e.left, env) - evaluate(e.right, env)
    if isinstance(e, Mul):
        return evaluate(e.left, env) * evaluate(e.right, env)
    if isinstance(e, Div):
        num = evaluate(e.left, env)
        den = evaluate(e.right, env)
        if _any(np.asarray(den) == 0):
            raise EvaluationError(f"division by zero in {to_str(e)}")
        return num / den
    if isinstance(e, Pow):
        base = evaluate(e.base, env)
        if e.exponent == 2:
            return base * base
        return base ** e.exponent
    if isinstance(e, Func):
        a = evaluate(e.arg, env)
        if e.name == "sin":
            return np.sin(a) if isinstance(a, np.ndarray) else math.sin(a)
        if e.name == "cos":
            return np.cos(a) if isinstance(a, np.ndarray) else math.cos(a)
        if e.name == "exp":
            return np.exp(a) if isinstance(a, np.ndarray) else math.exp(a)
        if e.name == "sqrt":
            if _any(np.asarray(a) < 0):
                raise EvaluationError(f"sqrt of negative value in {to_str(e)}")
            return np.sqrt(a) if isinstance(a, np.ndarray) else math.sqrt(a)
    raise ExprError(f"unsupported node {type(e).__name__}")


def evaluate_on(e: Expr, env: Mapping[str, Number], shape: tuple[int, ...]) -> np.ndarray:
    """Like :func:`evaluate` but always returns a float array of ``shape``."""
    out = evaluate(e, env)
    return np.broadcast_to(np.asarray(out, dtype=float), shape)


def free_symbols(e: Expr) -> set[str]:
    if isinstance(e, (Var, Param)):
        return {e.name}
    if isinstance(e, Const):
        return set()
    out: set[str] = set()
    for child in _children(e):
        out |= free_symbols(child)
    return out


def _children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, (Neg, Func)):
        return (e.arg,)
    if isinstance(e, Pow):
        return (e.base,)
    if isinstance(e, (Add, Sub, Mul, Div)):
        return (e.left, e.right)
    return ()


# --------------------------------------------------------------------------
# Simplification
# --------------------------------------------------------------------------


def _is(e: Expr, value: float) -> bool:
    return isinstance(e, Const) and e.value == value


def simplify(e: Expr) -> Expr:
    """Constant folding plus additive and multiplicative identities."""
    if isinstance(e, (Const, Var, Param)):
        return e
    if isinstance(e, Neg):
        a = simplify(e.arg)
        if isinstance(a, Const):
            return Const(-a.value)
        if isinstance(a, Neg):
            return a.arg
        return Neg(a)
    if isinstance(e, Func):
        a = simplify(e.arg)
        if isinstance(a, Const):
            try:
                return Const(float(evaluate(Func(e.name, a), {})))
            except EvaluationError:
                return Func(e.name, a)
        return Func(e.name, a)
    if isinstance(e, Pow):
        b = simplify(e.base)
        if e.exponent == 0:
            return ONE
        if e.exponent == 1:
            return b
        if isinstance(b, Const):
            return Const(b.value ** e.exponent)
        if isinstance(b, Pow):
            return Pow(b.base, b.exponent * e.exponent)
        return Pow(b, e.exponent)

    a = simplify(e.left)
    b = simplify(e.right)
    if isinstance(e, Add):
        if isinstance(a, Const) and isinstance(b, Const):
            return Const(a.value + b.value)
        if _is(a, 0.0):
            return b
        if _is(b, 0.0):
            return a
        if isinstance(b, Neg):
            return Sub(a, b.arg)
        return Add(a, b)
    if isinstance(e, Sub):
        if isinstance(a, Const) and isinstance(b, Const):
            return Const(a.value - b.value)
        if _is(b, 0.0):
            return a
        if _is(a, 0.0):
            return simplify(Neg(b))
        if isinstance(b, Neg):
            return Add(a, b.arg)
        return Sub(a, b)
    if isinstance(e, Mul):
        if isinstance(a, Const) and isinstance(b, Const):
            return Const(a.value * b.value)
        if _is(a, 0.0) or _is(b, 0.0):
            return ZERO
        if _is(a, 1.0):
            return b
        if _is(b, 1.0):
            return a
        if _is(a, -1.0):
            return simplify(Neg(b))
        if _is(b, -1.0):
            return simplify(Neg(a))
        if isinstance(b, Const):
            a, b = b, a
        # c1 * (c2 * z) -> (c1 c2) * z
        if isinstance(a, Const) and isinstance(b, Mul) and isinstance(b.left, Const):
            return simplify(Mul(Const(a.value * b.left.value), b.right))
        if isinstance(a, Neg):
            return simplify(Neg(Mul(a.arg, b)))
        if isinstance(b, Neg):
            return simplify(Neg(Mul(a, b.arg)))
        return Mul(a, b)
    if isinstance(e, Div):
        if isinstance(a, Const) and isinstance(b, Const) and b.value != 0:
            return Const(a.value / b.value)
        if _is(a, 0.0) and not _is(b, 0.0):
            return ZERO
        if _is(b, 1.0):
            return a
        return Div(a, b)
    raise ExprError(f"unsupported node {type(e).__name__}")


# --------------------------------------------------------------------------
# Differentiation and substitution
# --------------------------------------------------------------------------


def _d(e: Expr, v: str) -> Expr:
    if isinstance(e, Const) or isinstance(e, Param):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if isinstance(e, Neg):
        return Neg(_d(e.arg, v))
    if isinstance(e, Add):
        return Add(_d(e.left, v), _d(e.right, v))
    if isinstance(e, Sub):
        return Sub(_d(e.left, v), _d(e.right, v))
    if isinstance(e, Mul):
        return Add(Mul(_d(e.left, v), e.right), Mul(e.left, _d(e.right, v)))
    if isinstance(e, Div):
        num = Sub(Mul(_d(e.left, v), e.right), Mul(e.left, _d(e.right, v)))
        return Div(num, Pow(e.right, 2))
    if isinstance(e, Pow):
        if e.exponent == 0:
            return ZERO
        return Mul(Mul(Const(float(e.exponent)), Pow(e.base, e.exponent - 1)), _d(e.base, v))
    if isinstance(e, Func):
        da = _d(e.arg, v)
        if e.name == "sin":
            outer = Func("cos", e.arg)
        elif e.name == "cos":
            outer = Neg(Func("sin", e.arg))
        elif e.name == "exp":
            outer = e
        else:  # sqrt
            outer = Div(ONE, Mul(Const(2.0), e))
        return Mul(outer, da)
    raise ExprError(f"unsupported node {type(e).__name__}")


def diff(e: Expr, v: str) -> Expr:
    """Exact derivative of ``e`` with respect to the variable ``v``."""
    if v not in VARIABLES:
        raise UnknownIdentifierError(v)
    return simplify(_d(simplify(e), v))


def laplacian(e: Expr, variables: tuple[str, str]) -> Expr:
    return simplify(Add(diff(diff(e, variables[0]), variables[0]), diff(diff(e, variables[1]), variables[1])))


def gradient(e: Expr, variables: tuple[str, str]) -> tuple[Expr, Expr]:
    return diff(e, variables[0]), diff(e, variables[1])


def compose(e: Expr, subst: Mapping[str, Expr]) -> Expr:
    """Simultaneously replace variables by expressions."""
    if isinstance(e, Var):
        return subst.get(e.name, e)
    if isinstance(e, (Const, Param)):
        return e
    if isinstance(e, Neg):
        return Neg(compose(e.arg, subst))
    if isinstance(e, Func):
        return Func(e.name, compose(e.arg, subst))
    if isinstance(e, Pow):
        return Pow(compose(e.base, subst), e.exponent)
    return type(e)(compose(e.left, subst), compose(e.right, subst))


def bind_params(e: Expr, params: Mapping[str, float]) -> Expr:
    """Replace bound parameters by constants (then fold)."""
    if isinstance(e, Param):
        return Const(float(params[e.name])) if e.name in params else e
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Neg):
        return Neg(bind_params(e.arg, params))
    if isinstance(e, Func):
        return Func(e.name, bind_params(e.arg, params))
    if isinstance(e, Pow):
        return Pow(bind_params(e.base, params), e.exponent)
    return type(e)(bind_params(e.left, params), bind_params(e.right, params))
