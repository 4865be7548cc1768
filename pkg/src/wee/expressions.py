"""Expression language used in manipulate bodies, guards, and call parameters.

Values are integers, booleans, strings, and null. Arithmetic is integer-only:
division truncates toward zero and modulo carries the dividend's sign, so
results are identical across platforms and host languages. `&&` and `||`
short-circuit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

Value = Union[int, bool, str, None]


class EvalError(Exception):
    """Unbound variable, type mismatch, or division by zero."""


@dataclass(frozen=True)
class Literal:
    value: Value


@dataclass(frozen=True)
class Var:
    name: str
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Unary:
    op: str  # "!" or "-"
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Literal, Var, Unary, Binary]


@dataclass(frozen=True)
class Change:
    """One applied assignment: variable name with its old and new value."""

    name: str
    old: Value
    new: Value


def kind_name(value: Value) -> str:
    if value is None:
        return "null"
    if type(value) is bool:
        return "boolean"
    if type(value) is int:
        return "integer"
    return "string"


def is_value(obj: object) -> bool:
    """True if obj is one of the four runtime value kinds."""
    return obj is None or type(obj) in (int, bool, str)


def trunc_div(a: int, b: int) -> int:
    """Integer division truncating toward zero (Python's // floors)."""
    if b == 0:
        raise EvalError("division by zero")
    q = abs(a) // abs(b)
    return q if (a < 0) == (b < 0) else -q


def trunc_mod(a: int, b: int) -> int:
    """Remainder with the dividend's sign."""
    return a - trunc_div(a, b) * b


def _int_operand(value: Value, op: str) -> int:
    # bool is a subclass of int; it is not an integer here
    if type(value) is not int:
        raise EvalError(f"operator '{op}' expects integers, got {kind_name(value)}")
    return value


def _bool_operand(value: Value, op: str) -> bool:
    if type(value) is not bool:
        raise EvalError(f"operator '{op}' expects booleans, got {kind_name(value)}")
    return value


def eval_expr(expr: Expr, env: Mapping[str, Value]) -> Value:
    """Evaluate expr against env. Pure: env is never modified."""
    if isinstance(expr, Literal):
        return expr.value
    if isinstance(expr, Var):
        if expr.name not in env:
            raise EvalError(f"unbound variable '{expr.name}'")
        return env[expr.name]
    if isinstance(expr, Unary):
        operand = eval_expr(expr.operand, env)
        if expr.op == "!":
            return not _bool_operand(operand, "!")
        return -_int_operand(operand, "-")
    if isinstance(expr, Binary):
        return _eval_binary(expr, env)
    raise EvalError(f"unknown expression node {expr!r}")


def _eval_binary(expr: Binary, env: Mapping[str, Value]) -> Value:
    op = expr.op
    if op in ("&&", "||"):
        left = _bool_operand(eval_expr(expr.left, env), op)
        if op == "&&" and not left:
            return False
        if op == "||" and left:
            return True
        return _bool_operand(eval_expr(expr.right, env), op)

    left = eval_expr(expr.left, env)
    right = eval_expr(expr.right, env)

    if op in ("==", "!="):
        if kind_name(left) != kind_name(right):
            raise EvalError(
                f"cannot compare {kind_name(left)} with {kind_name(right)}"
            )
        return (left == right) if op == "==" else (left != right)

    if op in ("<", "<=", ">", ">="):
        a = _int_operand(left, op)
        b = _int_operand(right, op)
        if op == "<":
            return a < b
        if op == "<=":
            return a <= b
        if op == ">":
            return a > b
        return a >= b

    a = _int_operand(left, op)
    b = _int_operand(right, op)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return trunc_div(a, b)
    if op == "%":
        return trunc_mod(a, b)
    raise EvalError(f"unknown operator '{op}'")


def apply_assignments(
    statements: Sequence[tuple[str, Expr]], env: Mapping[str, Value]
) -> list[Change]:
    """Evaluate assignments left to right, each seeing earlier effects.

    Returns the change list without mutating env; committing the changes is
    the context store's job. Raising midway leaves no partial effects
    anywhere.
    """
    scratch = dict(env)
    changes: list[Change] = []
    for name, expr in statements:
        if name not in scratch:
            raise EvalError(f"undeclared variable '{name}'")
        new = eval_expr(expr, scratch)
        changes.append(Change(name, scratch[name], new))
        scratch[name] = new
    return changes
