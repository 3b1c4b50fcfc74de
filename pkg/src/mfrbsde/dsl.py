"""A small expression language for drivers, obstacles and terminal payoffs.

Grammar (whitespace-insensitive)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := primary ("^" unary)?
    primary := NUMBER | VARIABLE
             | ("abs" | "exp" | "log" | "sq") "(" expr ")"
             | ("min" | "max") "(" expr "," expr ")"
             | "(" expr ")"

Variables are ``t y z b m1 am``: time, the value unknown, the martingale
integrand, the Brownian state, and the mean and absolute mean of the current
marginal law. ``^`` is right-associative and binds tighter than unary minus,
so ``-x^2`` is ``-(x^2)``.

Evaluation is vectorized: variables may be bound to numpy arrays and the
result broadcasts. Domain violations (log of a non-positive number, division
by zero, anything that would yield NaN) raise :class:`EvalDomainError`
instead of propagating NaN.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigError, NumericError

VARIABLES = ("t", "y", "z", "b", "m1", "am")
UNARY_FUNCS = ("abs", "exp", "log", "sq")
BINARY_FUNCS = ("min", "max")


class ParseError(ConfigError):
    def __init__(self, message: str, offset: int, source: str = ""):
        super().__init__(f"{message} at byte {offset}" + (f" in {source!r}" if source else ""))
        self.offset = offset


class UnknownIdentifierError(ParseError):
    def __init__(self, name: str, offset: int, source: str = ""):
        super().__init__(f"unknown identifier {name!r}", offset, source)
        self.name = name


class EvalDomainError(NumericError):
    def __init__(self, message: str, subexpr: "Expr"):
        super().__init__(f"{message} in subexpression {to_source(subexpr)!r}")
        self.subexpr = subexpr


# ------------------------------------------------------------------- AST

@dataclass(frozen=True)
class Num:
    value: float

    def __post_init__(self):
        v = float(self.value)
        if not math.isfinite(v) or v < 0 or (v == 0 and math.copysign(1.0, v) < 0):
            raise ValueError(f"numeric literals are finite and non-negative, got {self.value!r}")
        object.__setattr__(self, "value", v)


@dataclass(frozen=True)
class Var:
    name: str

    def __post_init__(self):
        if self.name not in VARIABLES:
            raise ValueError(f"unknown variable {self.name!r}")


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or one of UNARY_FUNCS
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # + - * / ^ min max
    left: "Expr"
    right: "Expr"


Expr = Union[Num, Var, Unary, Binary]


def variables(e: Expr) -> frozenset:
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Num):
        return frozenset()
    if isinstance(e, Unary):
        return variables(e.arg)
    return variables(e.left) | variables(e.right)


# ---------------------------------------------------------------- tokens

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


def _tokenize(src: str):
    tokens = []
    pos = 0
    byte_pos = 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:
            raise ParseError(f"unexpected character {src[pos]!r}", byte_pos, src)
        text = m.group()
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, text, byte_pos))
        byte_pos += len(text.encode("utf-8"))
        pos = m.end()
    tokens.append(("end", "", byte_pos))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        kind, got, off = self.take()
        if got != text:
            shown = repr(got) if kind != "end" else "end of input"
            raise ParseError(f"expected {text!r} but found {shown}", off, self.src)

    def parse(self):
        e = self.expr()
        kind, text, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {text!r}", off, self.src)
        return e

    def expr(self):
        left = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            left = Binary(op, left, self.term())
        return left

    def term(self):
        left = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            left = Binary(op, left, self.unary())
        return left

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return Unary("neg", self.unary())
        return self.power()

    def power(self):
        base = self.primary()
        if self.peek()[1] == "^":
            self.take()
            return Binary("^", base, self.unary())
        return base

    def primary(self):
        kind, text, off = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "ident":
            if text in VARIABLES:
                return Var(text)
            if text in UNARY_FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Unary(text, arg)
            if text in BINARY_FUNCS:
                self.expect("(")
                a = self.expr()
                self.expect(",")
                b = self.expr()
                self.expect(")")
                return Binary(text, a, b)
            raise UnknownIdentifierError(text, off, self.src)
        if text == "(":
            e = self.expr()
            self.expect(")")
            return e
        shown = repr(text) if kind != "end" else "end of input"
        raise ParseError(f"expected a number, variable, function or '(' but found {shown}", off, self.src)


def parse(src: str) -> Expr:
    if not isinstance(src, str):
        raise ConfigError(f"expression must be a string, got {type(src).__name__}")
    return _Parser(src).parse()


# --------------------------------------------------------------- printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}
_ATOM = 5


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC.get(e.op, _ATOM)
    if isinstance(e, Unary):
        return _PREC.get(e.op, _ATOM)
    return _ATOM


def _wrap(e: Expr, needs: bool) -> str:
    s = to_source(e)
    return f"({s})" if needs else s


def to_source(e: Expr) -> str:
    """Print ``e`` with the minimal parentheses that parse back to the same tree."""
    if isinstance(e, Num):
        v = e.value
        return str(int(v)) if v.is_integer() and v < 1e15 else repr(v)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            return "-" + _wrap(e.arg, _prec(e.arg) < _PREC["neg"])
        return f"{e.op}({to_source(e.arg)})"
    if e.op in BINARY_FUNCS:
        return f"{e.op}({to_source(e.left)}, {to_source(e.right)})"
    if e.op == "^":
        return f"{_wrap(e.left, _prec(e.left) < _ATOM)}^{_wrap(e.right, _prec(e.right) < _PREC['neg'])}"
    p = _PREC[e.op]
    return f"{_wrap(e.left, _prec(e.left) < p)} {e.op} {_wrap(e.right, _prec(e.right) <= p)}"


# ------------------------------------------------------------- evaluation

def evaluate(e: Expr, env: dict):
    """Evaluate ``e`` with variables bound from ``env`` (floats or broadcastable arrays)."""
    with np.errstate(all="ignore"):
        return _eval(e, env)


def _checked(result, node):
    if np.any(np.isnan(result)):
        raise EvalDomainError("result is not a number", node)
    return result


def _eval(e, env):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise EvalDomainError(f"variable {e.name!r} is not bound", e) from None
    if isinstance(e, Unary):
        a = _eval(e.arg, env)
        if e.op == "neg":
            return -a
        if e.op == "abs":
            return np.abs(a)
        if e.op == "sq":
            return a * a
        if e.op == "exp":
            return np.exp(a)
        if np.any(np.asarray(a) <= 0):
            raise EvalDomainError("log of a non-positive value", e)
        return np.log(a)
    a = _eval(e.left, env)
    b = _eval(e.right, env)
    op = e.op
    if op == "+":
        return _checked(a + b, e)
    if op == "-":
        return _checked(a - b, e)
    if op == "*":
        return _checked(a * b, e)
    if op == "/":
        if np.any(np.asarray(b) == 0):
            raise EvalDomainError("division by zero", e)
        return _checked(a / b, e)
    if op == "^":
        if np.any((np.asarray(a) == 0) & (np.asarray(b) < 0)):
            raise EvalDomainError("zero raised to a negative power", e)
        return _checked(np.power(np.asarray(a, dtype=float), b), e)
    if op == "min":
        return np.minimum(a, b)
    return np.maximum(a, b)


def evaluate_scalar(e: Expr, **env) -> float:
    for k, v in env.items():
        if not math.isfinite(v):
            raise NumericError(f"environment value {k}={v!r} is not finite")
    return float(_checked(evaluate(e, env), e))


def compile_expr(src_or_expr) -> "CompiledExpr":
    e = parse(src_or_expr) if isinstance(src_or_expr, str) else src_or_expr
    return CompiledExpr(e)


class CompiledExpr:
    """A parsed expression bundled with its source and free variables."""

    __slots__ = ("expr", "source", "free")

    def __init__(self, expr: Expr):
        self.expr = expr
        self.source = to_source(expr)
        self.free = variables(expr)

    def __call__(self, **env):
        return _checked(evaluate(self.expr, env), self.expr)

    def uses(self, *names) -> bool:
        return any(n in self.free for n in names)

    def __eq__(self, other):
        if not isinstance(other, CompiledExpr):
            return NotImplemented
        return self.expr == other.expr

    def __hash__(self):
        return hash(self.expr)

    def __repr__(self):
        return f"CompiledExpr({self.source!r})"
