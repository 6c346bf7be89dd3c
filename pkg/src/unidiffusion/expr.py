"""A small arithmetic expression language for initial data and forcings.

Grammar (see docs/expressions.md for the full reference):

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := NUMBER | 'pi' | 'x' | 'y' | 't' | NAME '(' expr (',' expr)* ')'
            | '(' expr ')'

'^' binds tighter than unary minus, so -x^2 means -(x^2).  Functions:
sin, cos, exp, abs, pos, neg, step (one argument) and min, max (two
arguments).  pos(s) and neg(s) are the positive and negative parts with
pos(s) + neg(s) = s; step(s) is 1 where s >= 0 and 0 elsewhere.

Evaluation is vectorised over numpy arrays bound to x, y, t.  It is total
on finite inputs except for division by zero and domain errors (for
example 0^-1), which raise EvaluationError instead of propagating NaN.
All error messages carry the byte offset of the offending token.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ExpressionError",
    "ParseError",
    "EvaluationError",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "parse",
    "evaluate",
    "unparse",
    "free_variables",
]


class ExpressionError(ValueError):
    """Base class for expression language failures."""


class ParseError(ExpressionError):
    """Syntax error; `offset` is the byte offset into the source text."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class EvaluationError(ExpressionError):
    """Runtime failure such as division by zero."""


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Node = Num | Var | Neg | BinOp | Call

VARIABLES = ("x", "y", "t")
FUNCTIONS = {
    "sin": 1,
    "cos": 1,
    "exp": 1,
    "abs": 1,
    "pos": 1,
    "neg": 1,
    "step": 1,
    "min": 2,
    "max": 2,
}

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<number>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),])"
    r")"
)


def _byte_offset(source: str, char_index: int) -> int:
    return len(source[:char_index].encode("utf-8"))


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        if match is None or match.end() == match.start():
            stripped = source[pos:].lstrip()
            if not stripped:
                break
            bad = pos + (len(source[pos:]) - len(stripped))
            raise ParseError(
                f"unexpected character {source[bad]!r}", _byte_offset(source, bad)
            )
        kind = match.lastgroup
        text = match.group(kind)
        tokens.append((kind, text, _byte_offset(source, match.start(kind))))
        pos = match.end()
    tokens.append(("end", "", _byte_offset(source, len(source))))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.index = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.index]

    def advance(self) -> tuple[str, str, int]:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def expect_op(self, symbol: str) -> None:
        kind, text, offset = self.peek()
        if kind != "op" or text != symbol:
            raise ParseError(f"expected {symbol!r}", offset)
        self.advance()

    def parse(self) -> Node:
        node = self.expression()
        kind, text, offset = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected trailing input {text!r}", offset)
        return node

    def expression(self) -> Node:
        node = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.advance()
                node = BinOp(text, node, self.term())
            else:
                return node

    def term(self) -> Node:
        node = self.unary()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.advance()
                node = BinOp(text, node, self.unary())
            else:
                return node

    def unary(self) -> Node:
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, text, offset = self.advance()
        if kind == "number":
            value = float(text)
            if not math.isfinite(value):
                raise ParseError("number literal overflows", offset)
            return Num(value)
        if kind == "name":
            if text == "pi":
                return Num(math.pi)
            if text in VARIABLES:
                return Var(text)
            if text in FUNCTIONS:
                self.expect_op("(")
                args = [self.expression()]
                while True:
                    k, t, o = self.peek()
                    if k == "op" and t == ",":
                        self.advance()
                        args.append(self.expression())
                    elif k == "op" and t == ")":
                        self.advance()
                        break
                    else:
                        raise ParseError("expected ',' or ')'", o)
                arity = FUNCTIONS[text]
                if len(args) != arity:
                    raise ParseError(
                        f"{text} takes {arity} argument(s), got {len(args)}", offset
                    )
                return Call(text, tuple(args))
            raise ParseError(f"unknown identifier {text!r}", offset)
        if kind == "op" and text == "(":
            node = self.expression()
            self.expect_op(")")
            return node
        if kind == "end":
            raise ParseError("unexpected end of input", offset)
        raise ParseError(f"unexpected token {text!r}", offset)


def parse(source: str) -> Node:
    """Parse `source` into an AST, raising ParseError with a byte offset."""
    return _Parser(source).parse()


def _eval(node: Node, env: dict):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return np.negative(_eval(node.operand, env))
    if isinstance(node, BinOp):
        left = _eval(node.left, env)
        right = _eval(node.right, env)
        if node.op == "+":
            return np.add(left, right)
        if node.op == "-":
            return np.subtract(left, right)
        if node.op == "*":
            return np.multiply(left, right)
        if node.op == "/":
            if np.any(np.equal(right, 0.0)):
                raise EvaluationError("division by zero")
            return np.divide(left, right)
        if node.op == "^":
            with np.errstate(all="ignore"):
                return np.power(left, right)
        raise AssertionError(node.op)
    if isinstance(node, Call):
        args = [_eval(a, env) for a in node.args]
        f = node.func
        if f == "sin":
            return np.sin(args[0])
        if f == "cos":
            return np.cos(args[0])
        if f == "exp":
            with np.errstate(all="ignore"):
                return np.exp(args[0])
        if f == "abs":
            return np.abs(args[0])
        if f == "pos":
            return np.maximum(args[0], 0.0)
        if f == "neg":
            return np.minimum(args[0], 0.0)
        if f == "step":
            return np.where(np.greater_equal(args[0], 0.0), 1.0, 0.0)
        if f == "min":
            return np.minimum(args[0], args[1])
        if f == "max":
            return np.maximum(args[0], args[1])
        raise AssertionError(f)
    raise AssertionError(type(node))


def evaluate(node: Node, x=0.0, y=0.0, t=0.0):
    """Evaluate the AST with x, y, t bound to scalars or numpy arrays.

    Returns a float for scalar inputs and an ndarray otherwise.  Raises
    EvaluationError on division by zero or any non-finite intermediate
    result (overflow, domain error).
    """
    env = {"x": x, "y": y, "t": t}
    result = _eval(node, env)
    if not np.all(np.isfinite(result)):
        raise EvaluationError("non-finite result (overflow or domain error)")
    if np.ndim(result) == 0:
        return float(result)
    return np.asarray(result, dtype=float)


def free_variables(node: Node) -> frozenset:
    """The variable names the expression actually reads."""
    if isinstance(node, Num):
        return frozenset()
    if isinstance(node, Var):
        return frozenset((node.name,))
    if isinstance(node, Neg):
        return free_variables(node.operand)
    if isinstance(node, BinOp):
        return free_variables(node.left) | free_variables(node.right)
    if isinstance(node, Call):
        out = frozenset()
        for a in node.args:
            out |= free_variables(a)
        return out
    raise AssertionError(type(node))


_PREC_ADD, _PREC_MUL, _PREC_UNARY, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _render(node: Node, parent_prec: int) -> str:
    if isinstance(node, Num):
        text = repr(node.value)
        # a negative literal renders with a leading '-', so protect it the
        # same way a unary minus would be (parse itself never builds one)
        if node.value < 0.0 and parent_prec > _PREC_UNARY:
            return f"({text})"
        return text
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        body = _render(node.operand, _PREC_UNARY)
        text = "-" + body
        return f"({text})" if parent_prec > _PREC_UNARY else text
    if isinstance(node, BinOp):
        if node.op in "+-":
            prec = _PREC_ADD
            left = _render(node.left, prec)
            right = _render(node.right, prec + 1)
        elif node.op in "*/":
            prec = _PREC_MUL
            left = _render(node.left, prec)
            right = _render(node.right, prec + 1)
        else:  # '^', right associative, left operand must be an atom
            prec = _PREC_POW
            left = _render(node.left, _PREC_ATOM)
            right = _render(node.right, prec)
        text = f"{left} {node.op} {right}" if node.op in "+-" else f"{left}{node.op}{right}"
        return f"({text})" if prec < parent_prec else text
    if isinstance(node, Call):
        args = ", ".join(_render(a, _PREC_ADD) for a in node.args)
        return f"{node.func}({args})"
    raise AssertionError(type(node))


def unparse(node: Node) -> str:
    """Render the AST as source text; parse(unparse(n)) == n structurally."""
    return _render(node, _PREC_ADD)
