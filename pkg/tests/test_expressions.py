from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from wee.dsl import parse_expression
from wee.expressions import (
    Change,
    EvalError,
    apply_assignments,
    eval_expr,
    trunc_div,
    trunc_mod,
)


def ev(text: str, env=None):
    return eval_expr(parse_expression(text), env or {})


def test_comparison_literal():
    assert ev("3 > 2") is True


def test_price_guard_over_limit():
    assert ev("price > 10000", {"price": 12000}) is True
    assert ev("price > 10000", {"price": 9000}) is False


def test_parity_and_negation_against_enumerated_table():
    # oracle: enumerate all (x mod 2, done) combinations by hand
    table = {
        (0, False): True,
        (0, True): False,
        (1, False): False,
        (1, True): False,
    }
    for x in range(-4, 5):
        for done in (False, True):
            expected = table[(abs(x) % 2, done)]
            assert ev("x % 2 == 0 && !done", {"x": x, "done": done}) is expected


def test_arithmetic_precedence():
    assert ev("2 + 3 * 4") == 14
    assert ev("(2 + 3) * 4") == 20
    assert ev("-2 * 3") == -6
    assert ev("10 - 3 - 2") == 5  # left associative


@pytest.mark.parametrize(
    "a,b,q,r",
    [
        (7, 2, 3, 1),
        (-7, 2, -3, -1),
        (7, -2, -3, 1),
        (-7, -2, 3, -1),
        (6, 3, 2, 0),
    ],
)
def test_division_truncates_toward_zero_and_mod_keeps_dividend_sign(a, b, q, r):
    assert trunc_div(a, b) == q
    assert trunc_mod(a, b) == r
    assert ev("a / b", {"a": a, "b": b}) == q
    assert ev("a % b", {"a": a, "b": b}) == r


def test_division_by_zero():
    with pytest.raises(EvalError, match="division by zero"):
        ev("1 / 0")
    with pytest.raises(EvalError, match="division by zero"):
        ev("1 % 0")


def test_unbound_variable():
    with pytest.raises(EvalError, match="unbound variable 'y'"):
        ev("y + 1")


def test_type_mismatches():
    with pytest.raises(EvalError):
        ev("1 + true")
    with pytest.raises(EvalError):
        ev('"a" < "b"')
    with pytest.raises(EvalError):
        ev('1 == "1"')
    with pytest.raises(EvalError):
        ev("!3")


def test_string_and_null_equality():
    assert ev('"abc" == "abc"') is True
    assert ev('"abc" != "abd"') is True
    assert ev("null == null") is True


def test_short_circuit_avoids_evaluating_right_side():
    # the right side would fail on the unbound variable if evaluated
    assert ev("false && missing", {}) is False
    assert ev("true || missing", {}) is True
    with pytest.raises(EvalError):
        ev("true && missing", {})


def test_apply_assignments_sequential_effects():
    changes = apply_assignments(
        [("x", parse_expression("x + 1")), ("y", parse_expression("x * 2"))],
        {"x": 1, "y": 0},
    )
    assert changes == [Change("x", 1, 2), Change("y", 0, 4)]


def test_apply_assignments_empty_is_identity():
    assert apply_assignments([], {"x": 1}) == []


def test_apply_assignments_failure_leaves_no_changes():
    env = {"x": 1}
    with pytest.raises(EvalError):
        apply_assignments([("x", parse_expression("1 / 0"))], env)
    assert env == {"x": 1}


def test_apply_assignments_undeclared_target():
    with pytest.raises(EvalError, match="undeclared variable 'z'"):
        apply_assignments([("z", parse_expression("1"))], {"x": 1})


def test_reassignment_is_left_to_right():
    changes = apply_assignments(
        [("x", parse_expression("1")), ("x", parse_expression("x + 1"))],
        {"x": 10},
    )
    assert [c.new for c in changes] == [1, 2]


# -- property tests ---------------------------------------------------------

_names = st.sampled_from(["a", "b", "c"])
_int_exprs = st.sampled_from(["a + b", "a - c", "b * 2", "a % 7 + c", "0 - a"])


@given(
    st.dictionaries(_names, st.integers(-50, 50), min_size=3, max_size=3),
    st.lists(st.tuples(_names, _int_exprs), max_size=6),
)
def test_apply_assignments_matches_sequential_fold(env, statements):
    parsed = [(name, parse_expression(text)) for name, text in statements]

    # reference interpreter: fold assignments one at a time
    expected_env = dict(env)
    for name, expr in parsed:
        expected_env[name] = eval_expr(expr, expected_env)

    changes = apply_assignments(parsed, env)
    folded = dict(env)
    for change in changes:
        assert folded[change.name] == change.old
        folded[change.name] = change.new
    assert folded == expected_env


@given(st.dictionaries(_names, st.integers(-50, 50), min_size=3, max_size=3))
def test_eval_is_pure_and_deterministic(env):
    expr = parse_expression("a * b - c % 5")
    before = dict(env)
    first = eval_expr(expr, env)
    second = eval_expr(expr, env)
    assert first == second
    assert env == before
