import math

import pytest

from hasl_osc import expr
from hasl_osc.expr import ExpressionError, NonLinearError


def test_precedence_and_text_round_trip():
    node = expr.parse("1 + 2 * A - B / 4")
    assert expr.evaluate(node, {"A": 3, "B": 8}) == 5.0
    again = expr.parse(expr.to_text(node))
    assert again == node


def test_unary_minus_and_parentheses():
    assert expr.evaluate(expr.parse("-(A - 5) * 2"), {"A": 2}) == 6.0
    assert expr.parse("-3") == expr.Num(-3.0)


def test_primed_names():
    assert expr.names(expr.parse("D_A + D'_A")) == {"D_A", "D'_A"}


def test_division_by_zero_is_nan():
    assert math.isnan(expr.evaluate(expr.parse("x / y"), {"x": 1, "y": 0}))


@pytest.mark.parametrize("text, pos", [("1 +", 3), ("A $ B", 2), ("(A + 1", 6), ("A B", 2)])
def test_syntax_errors_carry_position(text, pos):
    with pytest.raises(ExpressionError) as err:
        expr.parse(text)
    assert err.value.pos == pos
    assert f"position {pos}" in str(err.value)


def test_conditions():
    atoms = expr.parse_condition("A >= 10 && x < 2")
    assert [a.op for a in atoms] == [">=", "<"]
    assert expr.holds_all(atoms, {"A": 10, "x": 1})
    assert not expr.holds_all(atoms, {"A": 9, "x": 1})
    assert expr.parse_condition("true") == []
    assert expr.parse_condition("") == []
    assert expr.parse_condition("A ≤ 3 ∧ B ≥ 1") == expr.parse_condition("A <= 3 && B >= 1")


def test_linear_form_splits_variables_from_marking_terms():
    coefs, rest = expr.linear_form(expr.parse("2 * x + A * y - 5 + B"), {"x", "y"})
    env = {"A": 3, "B": 7}
    assert expr.evaluate(coefs["x"], env) == 2
    assert expr.evaluate(coefs["y"], env) == 3
    assert expr.evaluate(rest, env) == 2


def test_linear_form_rejects_products_of_variables():
    with pytest.raises(NonLinearError):
        expr.linear_form(expr.parse("x * y"), {"x", "y"})


def test_compiled_getter_matches_evaluate():
    node = expr.parse("(A + x) / (B - 1)")
    get = expr.compile_node(node, {"A": 0, "B": 1}, {"x": 0})
    assert get([4, 3], [2.0]) == expr.evaluate(node, {"A": 4, "B": 3, "x": 2.0})
    assert math.isnan(get([4, 1], [2.0]))
