"""Coefficient expressions: a small closed arithmetic language over x1..xN and r.

Sources are parsed with the standard library ``ast`` module and then lowered
to a restricted tree. ``^`` is accepted as exponentiation (as is ``**``).
Evaluation is vectorised: variables may be bound to numpy arrays.
"""

from __future__ import annotations

import ast
import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

__all__ = [
    "Expression",
    "ExpressionError",
    "Num",
    "Var",
    "Unary",
    "Binary",
    "Call",
    "parse_expression",
    "as_expression",
]

_VAR_RE = re.compile(r"^(x[1-9][0-9]*|r)$")
_CONSTANTS = {"pi": math.pi}

# name -> (arity, numpy implementation)
_FUNCTIONS = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "exp": (1, np.exp),
    "abs": (1, np.abs),
    "sqrt": (1, np.sqrt),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
    "pow": (2, np.power),
}

_BINARY = {
    ast.Add: "+",
    ast.Sub: "-",
    ast.Mult: "*",
    ast.Div: "/",
    ast.Pow: "^",
}

# binding power used by the printer: (precedence, right-associative)
_PREC = {"+": (1, False), "-": (1, False), "*": (2, False), "/": (2, False), "^": (4, True)}
_UNARY_PREC = 3


class ExpressionError(ValueError):
    """Raised for syntax errors, unknown identifiers and arity mismatches.

    ``offset`` is the 0-based byte offset into the UTF-8 encoded source.
    """

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class Expression:
    """Base class of expression tree nodes."""

    def evaluate(self, env: Mapping[str, object]) -> np.ndarray | float:
        raise NotImplementedError

    def variables(self) -> frozenset[str]:
        raise NotImplementedError

    def to_source(self) -> str:
        return _print(self, 0)

    def __str__(self) -> str:
        return self.to_source()

    def __call__(self, **env) -> np.ndarray | float:
        return self.evaluate(env)

    @property
    def is_constant(self) -> bool:
        return not self.variables()

    def depends_on(self, name: str) -> bool:
        return name in self.variables()


@dataclass(frozen=True, eq=True)
class Num(Expression):
    value: float

    def evaluate(self, env):
        return self.value

    def variables(self):
        return frozenset()


@dataclass(frozen=True, eq=True)
class Var(Expression):
    name: str

    def evaluate(self, env):
        if self.name in _CONSTANTS:
            return _CONSTANTS[self.name]
        try:
            return env[self.name]
        except KeyError:
            raise ExpressionError(f"variable {self.name!r} is not bound") from None

    def variables(self):
        return frozenset() if self.name in _CONSTANTS else frozenset({self.name})


@dataclass(frozen=True, eq=True)
class Unary(Expression):
    op: str
    operand: Expression

    def evaluate(self, env):
        return -self.operand.evaluate(env)

    def variables(self):
        return self.operand.variables()


@dataclass(frozen=True, eq=True)
class Binary(Expression):
    op: str
    left: Expression
    right: Expression

    def evaluate(self, env):
        a = self.left.evaluate(env)
        b = self.right.evaluate(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            return np.divide(a, b) if isinstance(a, np.ndarray) or isinstance(b, np.ndarray) else a / b
        return np.power(a, b)

    def variables(self):
        return self.left.variables() | self.right.variables()


@dataclass(frozen=True, eq=True)
class Call(Expression):
    func: str
    args: tuple[Expression, ...]

    def evaluate(self, env):
        fn = _FUNCTIONS[self.func][1]
        return fn(*(a.evaluate(env) for a in self.args))

    def variables(self):
        out: frozenset[str] = frozenset()
        for a in self.args:
            out |= a.variables()
        return out


def _format_number(value: float) -> str:
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _print(node: Expression, parent_prec: int) -> str:
    if isinstance(node, Num):
        return _format_number(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({', '.join(_print(a, 0) for a in node.args)})"
    if isinstance(node, Unary):
        text = "-" + _print(node.operand, _UNARY_PREC)
        return f"({text})" if parent_prec > _UNARY_PREC else text
    if isinstance(node, Binary):
        prec, right_assoc = _PREC[node.op]
        left_prec = prec + 1 if right_assoc else prec
        right_prec = prec if right_assoc else prec + 1
        if node.op == "^":
            # unary minus binds looser than ^ on the left: (-2)^2
            left_prec = max(left_prec, _UNARY_PREC + 1)
        text = f"{_print(node.left, left_prec)} {node.op} {_print(node.right, right_prec)}"
        return f"({text})" if prec < parent_prec else text
    raise TypeError(f"not an expression node: {node!r}")


def _char_to_byte(text: str, char_offset: int) -> int:
    return len(text[:char_offset].encode("utf-8"))


class _Lowering:
    def __init__(self, original: str, substituted: str, dim: int | None):
        self.original = original
        self.substituted = substituted
        self.dim = dim
        # byte offsets in the substituted text at which a "^" was expanded
        self._expansions = []
        sub_bytes = 0
        for ch in original:
            if ch == "^":
                self._expansions.append(sub_bytes)
                sub_bytes += 2
            else:
                sub_bytes += len(ch.encode("utf-8"))

    def original_offset(self, sub_byte_offset: int) -> int:
        # the parsed text is wrapped in one leading parenthesis
        sub_byte_offset = max(sub_byte_offset - 1, 0)
        shift = sum(1 for e in self._expansions if e < sub_byte_offset)
        return min(sub_byte_offset - shift, len(self.original.encode("utf-8")))

    def fail(self, message: str, node: ast.AST) -> ExpressionError:
        return ExpressionError(message, self.original_offset(getattr(node, "col_offset", 0)))

    def lower(self, node: ast.AST) -> Expression:
        if isinstance(node, ast.Expression):
            return self.lower(node.body)
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                raise self.fail(f"unsupported literal {node.value!r}", node)
            value = float(node.value)
            if not math.isfinite(value):
                raise self.fail("non-finite literal", node)
            return Num(value)
        if isinstance(node, ast.Name):
            name = node.id
            if name in _CONSTANTS:
                return Var(name)
            if not _VAR_RE.match(name):
                raise self.fail(f"unknown identifier {name!r}", node)
            if self.dim is not None and name != "r" and int(name[1:]) > self.dim:
                raise self.fail(f"identifier {name!r} exceeds dimension {self.dim}", node)
            return Var(name)
        if isinstance(node, ast.UnaryOp):
            if isinstance(node.op, ast.USub):
                return Unary("-", self.lower(node.operand))
            if isinstance(node.op, ast.UAdd):
                return self.lower(node.operand)
            raise self.fail("unsupported unary operator", node)
        if isinstance(node, ast.BinOp):
            op = _BINARY.get(type(node.op))
            if op is None:
                raise self.fail("unsupported operator", node)
            return Binary(op, self.lower(node.left), self.lower(node.right))
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name):
                raise self.fail("only named functions may be called", node)
            name = node.func.id
            if name not in _FUNCTIONS:
                raise self.fail(f"unknown function {name!r}", node)
            if node.keywords:
                raise self.fail("keyword arguments are not supported", node)
            arity = _FUNCTIONS[name][0]
            if len(node.args) != arity:
                raise self.fail(
                    f"function {name!r} takes {arity} argument(s), got {len(node.args)}", node
                )
            return Call(name, tuple(self.lower(a) for a in node.args))
        raise self.fail(f"unsupported syntax: {type(node).__name__}", node)


def parse_expression(source: str, dim: int | None = None) -> Expression:
    """Parse ``source`` into an :class:`Expression`.

    >>> parse_expression("2*x1 + 1").evaluate({"x1": 3.0})
    7.0
    """
    if not isinstance(source, str) or not source.strip():
        raise ExpressionError("empty expression", 0)
    flat = source.replace("\n", " ").replace("\r", " ")
    substituted = flat.replace("^", "**")
    lowering = _Lowering(flat, substituted, dim)
    try:
        tree = ast.parse(f"({substituted})", mode="eval")
    except SyntaxError as exc:
        wrapped = f"({substituted})"
        col = max((exc.offset or 1) - 1, 0)
        byte = _char_to_byte(wrapped, min(col, len(wrapped)))
        raise ExpressionError(f"syntax error: {exc.msg}", lowering.original_offset(byte)) from None
    return lowering.lower(tree)


ExpressionLike = Union[Expression, str, int, float]


def as_expression(value: ExpressionLike, dim: int | None = None) -> Expression:
    """Coerce numbers and strings to expressions; pass expressions through."""
    if isinstance(value, Expression):
        return value
    if isinstance(value, bool):
        raise ExpressionError(f"cannot use {value!r} as an expression")
    if isinstance(value, (int, float)):
        if not math.isfinite(value):
            raise ExpressionError("non-finite constant")
        if value < 0:
            return Unary("-", Num(float(-value)))
        return Num(float(value))
    return parse_expression(str(value), dim)
