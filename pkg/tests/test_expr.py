"""Expression language: parsing, precedence, evaluation, round trips."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from unidiffusion.expr import (
    BinOp,
    Call,
    EvaluationError,
    Neg,
    Num,
    ParseError,
    Var,
    evaluate,
    free_variables,
    parse,
    unparse,
)


def value(source, **env):
    return evaluate(parse(source), **env)


class TestPrecedence:
    @pytest.mark.parametrize("source,expected", [
        ("1 + 2 * 3", 7.0),
        ("(1 + 2) * 3", 9.0),
        ("2 - 3 - 4", -5.0),          # left associative
        ("12 / 3 / 2", 2.0),
        ("2 ^ 3 ^ 2", 512.0),         # right associative
        ("2 ^ -1", 0.5),              # exponent may be a unary expression
        ("-2 ^ 2", -4.0),             # '^' binds tighter than unary minus
        ("(-2) ^ 2", 4.0),
        ("-2 * 3", -6.0),
        ("2 * -3", -6.0),
        ("--2", 2.0),
        ("2e2 + .5", 200.5),
        ("pi", math.pi),
        ("min(1, 2) + max(1, 2)", 3.0),
        ("abs(-3)", 3.0),
        ("pos(-3) + pos(3)", 3.0),
        ("neg(-3) + neg(3)", -3.0),
        ("step(0) + step(-1) + step(2)", 2.0),
    ])
    def test_scalar_values(self, source, expected):
        assert value(source) == pytest.approx(expected, rel=0, abs=1e-15)

    def test_variables(self):
        assert value("x + 2*y - t", x=1.0, y=2.0, t=3.0) == 2.0

    def test_ast_shape_of_unary_power(self):
        assert parse("-x^2") == Neg(BinOp("^", Var("x"), Num(2.0)))
        assert parse("2^3^2") == BinOp(
            "^", Num(2.0), BinOp("^", Num(3.0), Num(2.0)))


class TestParseErrors:
    def test_offset_of_missing_paren(self):
        source = "max(0, 1 - x"
        with pytest.raises(ParseError) as err:
            parse(source)
        assert err.value.offset == len(source.encode("utf-8"))
        assert "byte offset" in str(err.value)

    def test_offset_of_unknown_identifier(self):
        with pytest.raises(ParseError) as err:
            parse("1 + sqrt(x)")
        assert err.value.offset == 4

    def test_offset_of_bad_character(self):
        with pytest.raises(ParseError) as err:
            parse("1 + $")
        assert err.value.offset == 4

    @pytest.mark.parametrize("source", [
        "", "1 +", "(1", "min(1)", "min(1, 2, 3)", "sin 1", "1 2",
        "x y", "1e999",
    ])
    def test_rejects(self, source):
        with pytest.raises(ParseError):
            parse(source)


class TestEvaluation:
    def test_division_by_zero(self):
        with pytest.raises(EvaluationError):
            value("1 / x", x=0.0)
        with pytest.raises(EvaluationError):
            value("1 / (x - 1)", x=np.array([0.0, 1.0, 2.0]))

    def test_overflow_raises(self):
        with pytest.raises(EvaluationError):
            value("exp(1000)")
        with pytest.raises(EvaluationError):
            value("10 ^ 400")

    def test_domain_error_raises(self):
        with pytest.raises(EvaluationError):
            value("(-1) ^ 0.5")

    def test_vectorised_matches_scalar_loop(self):
        source = "max(0, sin(pi*x)) * exp(-t) + step(x - 0.5)"
        node = parse(source)
        xs = np.linspace(0.0, 1.0, 17)
        vector = evaluate(node, x=xs, t=0.3)
        scalar = np.array([evaluate(node, x=float(v), t=0.3) for v in xs])
        np.testing.assert_array_equal(vector, scalar)

    def test_scalar_inputs_produce_float(self):
        out = value("x + t", x=1.0, t=2.0)
        assert isinstance(out, float)

    def test_purity(self):
        node = parse("x^2 - t")
        first = evaluate(node, x=3.0, t=1.0)
        for _ in range(3):
            assert evaluate(node, x=3.0, t=1.0) == first

    def test_pos_neg_split_identity(self):
        xs = np.linspace(-2.0, 2.0, 9)
        total = value("pos(x) + neg(x)", x=xs)
        np.testing.assert_array_equal(total, xs)


class TestUnparse:
    @pytest.mark.parametrize("source", [
        "1 + 2 * 3",
        "(1 + 2) * 3",
        "-x^2",
        "(-x)^2",
        "2^3^2",
        "(2^3)^2",
        "x - (y - t)",
        "x / (y * t)",
        "min(x, max(y, t))",
        "-(x + 1)",
        "sin(pi*x) * (1 - exp(-t))",
    ])
    def test_round_trip_structural(self, source):
        node = parse(source)
        assert parse(unparse(node)) == node

    def test_minimal_parens(self):
        assert unparse(parse("(1 + 2) * 3")) == "(1.0 + 2.0)*3.0"
        assert unparse(parse("1 + (2 * 3)")) == "1.0 + 2.0*3.0"

    def test_negative_literal_keeps_value(self):
        node = BinOp("*", Num(3.0), Num(-2.0))
        rendered = unparse(node)
        assert evaluate(parse(rendered)) == -6.0


def test_free_variables():
    assert free_variables(parse("sin(pi*x)*exp(-t)")) == {"x", "t"}
    assert free_variables(parse("1 + 2")) == frozenset()
    assert free_variables(parse("y")) == {"y"}


# --- property tests -------------------------------------------------------

_leaf = st.one_of(
    st.builds(Num, st.floats(min_value=0.0, max_value=10.0,
                             allow_nan=False, allow_infinity=False)),
    st.builds(Var, st.sampled_from(["x", "y", "t"])),
)


def _combine(children):
    return st.one_of(
        st.builds(Neg, children),
        st.builds(BinOp, st.sampled_from(["+", "-", "*"]), children, children),
        st.builds(lambda f, a: Call(f, (a,)),
                  st.sampled_from(["sin", "cos", "abs", "pos", "neg"]),
                  children),
        st.builds(lambda f, a, b: Call(f, (a, b)),
                  st.sampled_from(["min", "max"]), children, children),
    )


_ast = st.recursive(_leaf, _combine, max_leaves=12)


@given(node=_ast)
def test_unparse_parse_round_trip(node):
    assert parse(unparse(node)) == node


@given(node=_ast,
       x=st.floats(min_value=-2.0, max_value=2.0),
       t=st.floats(min_value=0.0, max_value=4.0))
def test_rendered_text_evaluates_identically(node, x, t):
    reparsed = parse(unparse(node))
    assert evaluate(reparsed, x=x, t=t) == evaluate(node, x=x, t=t)
