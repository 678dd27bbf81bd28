"""Arithmetic expression mini-language for clock maps, histories and forcings.

Grammar (EBNF):

    expr    = term , { ("+" | "-") , term } ;
    term    = factor , { ("*" | "/") , factor } ;
    factor  = "-" , factor | power ;
    power   = atom , [ "^" , factor ] ;            (* right associative *)
    atom    = NUMBER | VAR | FUNC , "(" , expr , ")" | "(" , expr , ")" ;
    VAR     = "t" | "w" , DIGIT , { DIGIT } ;      (* w1, w2, ... *)
    FUNC    = "sin" | "cos" | "exp" | "log" | "sqrt" | "abs" ;
    NUMBER  = decimal literal, optional fraction and exponent ;

Precedence: ^  >  unary -  >  * /  >  + -.  Values are IEEE doubles;
evaluation accepts scalars or numpy arrays for the variable bindings.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "Expr", "Num", "Var", "Neg", "Bin", "Fn",
    "ExprError", "ExprSyntaxError", "UnboundVariableError", "EvalDomainError",
    "parse", "evaluate", "to_source", "free_vars", "validate_vars",
]

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "abs")


class ExprError(Exception):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnboundVariableError(ExprError):
    pass


class EvalDomainError(ExprError):
    pass


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Fn:
    name: str
    arg: "Expr"


Expr = Union[Num, Var, Neg, Bin, Fn]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)

_VAR_RE = re.compile(r"^(t|w[1-9]\d*)$")


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = []
        pos = 0
        while pos < len(source):
            m = _TOKEN.match(source, pos)
            if m is None or m.end() == pos:
                raise ExprSyntaxError(f"unexpected character {source[pos:pos+1]!r}", pos)
            kind = m.lastgroup
            self.tokens.append((kind, m.group(kind), m.start(kind)))
            pos = m.end()
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None, len(self.source))

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, val, pos = self.take()
        if kind != "op" or val != op:
            raise ExprSyntaxError(f"expected {op!r}", pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, pos = self.peek()
        if kind is not None:
            raise ExprSyntaxError(f"unexpected token {val!r}", pos)
        return e

    def expr(self) -> Expr:
        node = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                node = Bin(val, node, self.term())
            else:
                return node

    def term(self) -> Expr:
        node = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.take()
                node = Bin(val, node, self.factor())
            else:
                return node

    def factor(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return Neg(self.factor())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.take()
            return Bin("^", base, self.factor())
        return base

    def atom(self) -> Expr:
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "ident":
            if val in FUNCTIONS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return Fn(val, arg)
            if _VAR_RE.match(val):
                return Var(val)
            raise ExprSyntaxError(f"unknown identifier {val!r}", pos)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        raise ExprSyntaxError(f"expected a value, got {val!r}" if val else "unexpected end of input", pos)


def parse(source: str) -> Expr:
    """Parse source text into an immutable AST."""
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(source).parse()


# precedence levels used by the printer; parenthesise children that bind
# more loosely than the context requires
_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def to_source(e: Expr) -> str:
    """Render the AST back to text; parse(to_source(e)) is structurally e."""
    return _render(e, 0)


def _render(e: Expr, context: int) -> str:
    if isinstance(e, Num):
        s = repr(e.value)
        return s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Fn):
        return f"{e.name}({_render(e.arg, 0)})"
    if isinstance(e, Neg):
        inner = _render(e.arg, _PREC["neg"])
        text = f"-{inner}"
        return f"({text})" if context > _PREC["neg"] else text
    if isinstance(e, Bin):
        p = _PREC[e.op]
        if e.op == "^":
            # right associative; left operand must bind strictly tighter
            lhs = _render(e.lhs, p + 1)
            rhs = _render(e.rhs, p)
        else:
            lhs = _render(e.lhs, p)
            rhs = _render(e.rhs, p + 1)
        text = f"{lhs}{e.op}{rhs}"
        return f"({text})" if context > p else text
    raise TypeError(f"not an Expr node: {e!r}")


def free_vars(e: Expr) -> set:
    if isinstance(e, Num):
        return set()
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Neg):
        return free_vars(e.arg)
    if isinstance(e, Fn):
        return free_vars(e.arg)
    if isinstance(e, Bin):
        return free_vars(e.lhs) | free_vars(e.rhs)
    raise TypeError(f"not an Expr node: {e!r}")


def validate_vars(e: Expr, allowed) -> None:
    """Raise UnboundVariableError if e uses a variable outside `allowed`."""
    extra = free_vars(e) - set(allowed)
    if extra:
        raise UnboundVariableError(
            f"variable(s) {sorted(extra)} not permitted here (allowed: {sorted(allowed)})")


def _check_positive(name, x):
    if np.any(np.asarray(x) <= 0):
        raise EvalDomainError(f"{name} of non-positive argument")


def evaluate(e: Expr, bindings: dict):
    """Evaluate with the given variable bindings (floats or numpy arrays)."""
    result = _eval(e, bindings)
    if not np.all(np.isfinite(result)):
        raise EvalDomainError("non-finite result (overflow or invalid operation)")
    return result


def _eval(e: Expr, env: dict):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise UnboundVariableError(f"unbound variable {e.name!r}") from None
    if isinstance(e, Neg):
        return -_eval(e.arg, env)
    if isinstance(e, Fn):
        x = _eval(e.arg, env)
        if e.name == "sin":
            return np.sin(x)
        if e.name == "cos":
            return np.cos(x)
        if e.name == "exp":
            with np.errstate(over="ignore"):
                return np.exp(x)
        if e.name == "log":
            _check_positive("log", x)
            return np.log(x)
        if e.name == "sqrt":
            if np.any(np.asarray(x) < 0):
                raise EvalDomainError("sqrt of negative argument")
            return np.sqrt(x)
        if e.name == "abs":
            return np.abs(x)
        raise ExprError(f"unknown function {e.name!r}")
    if isinstance(e, Bin):
        a = _eval(e.lhs, env)
        b = _eval(e.rhs, env)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if np.any(np.asarray(b) == 0):
                raise EvalDomainError("division by zero")
            return a / b
        if e.op == "^":
            return _pow(a, b)
        raise ExprError(f"unknown operator {e.op!r}")
    raise TypeError(f"not an Expr node: {e!r}")


def _pow(a, b):
    b_arr = np.asarray(b, dtype=float)
    integral = np.all(b_arr == np.floor(b_arr))
    a_arr = np.asarray(a, dtype=float)
    if np.any(a_arr < 0) and not integral:
        raise EvalDomainError("negative base with non-integer exponent")
    if np.any((a_arr == 0) & (b_arr < 0)):
        raise EvalDomainError("zero base with negative exponent")
    with np.errstate(over="ignore"):
        return np.power(a, b)
