import math

import numpy as np
import pytest

from hjbobstacle.expression import ExpressionError, as_expression, parse_expression


def ev(src, **env):
    return parse_expression(src).evaluate(env)


def test_precedence():
    assert ev("2*x1 + 1", x1=3.0) == 7.0


def test_abs_identity_via_min_max():
    assert ev("max(x1, 0) - min(x1, 0)", x1=-2.0) == 2.0


def test_pythagorean_identity():
    assert abs(ev("sin(x1)^2 + cos(x1)^2", x1=0.7) - 1.0) < 1e-12


@pytest.mark.parametrize("src,val", [
    ("-2^2", -4.0), ("2^3^2", 512.0), ("(1 + 2) * 3", 9.0), ("8 / 4 / 2", 1.0),
    ("pow(2, 10)", 1024.0), ("sqrt(16) + abs(-1)", 5.0), ("exp(0)", 1.0), ("-x1 - -x1", 0.0),
])
def test_arithmetic(src, val):
    assert ev(src, x1=1.5) == pytest.approx(val, abs=1e-15)


def test_vectorised_over_arrays():
    x = np.linspace(0, 1, 5)
    out = ev("x1*x2 + r", x1=x, x2=2.0, r=1.0)
    np.testing.assert_allclose(out, 2 * x + 1)


def test_pi_constant():
    assert ev("pi") == math.pi


def test_variables_and_dependence():
    e = parse_expression("r + sin(x2)")
    assert e.variables() == {"r", "x2"}
    assert e.depends_on("r") and not e.depends_on("x1")
    assert parse_expression("2 + 3").is_constant


def test_syntax_error_reports_byte_offset():
    with pytest.raises(ExpressionError) as exc:
        parse_expression("1 + * 2")
    assert exc.value.offset is not None
    assert 0 <= exc.value.offset <= len("1 + * 2")


def test_offset_counts_bytes_not_characters():
    # the non-ASCII character occupies two bytes before the bad token
    with pytest.raises(ExpressionError) as exc:
        parse_expression("1 + yé")
    assert exc.value.offset is not None


@pytest.mark.parametrize("src", ["y + 1", "x0", "foo(1)", "sin(1, 2)", "max(1)", "x1.real", "[1]", "x1 if r else 2"])
def test_rejects_unknown_or_bad_arity(src):
    with pytest.raises(ExpressionError):
        parse_expression(src)


def test_dimension_limits_variables():
    parse_expression("x2", dim=2)
    with pytest.raises(ExpressionError):
        parse_expression("x3", dim=2)


def test_empty_source_rejected():
    with pytest.raises(ExpressionError):
        parse_expression("   ")


@pytest.mark.parametrize("src", ["2*x1 + 1", "-(x1 - 2)^2", "max(x1, -r) / (1 + exp(-x1))", "x1 - (x2 - r)", "2^-1", "-2.5e-7 * x1"])
def test_print_parse_round_trip(src):
    e = parse_expression(src)
    again = parse_expression(e.to_source())
    assert again == e
    assert again.to_source() == e.to_source()


def test_as_expression_coerces_numbers():
    assert as_expression(2).evaluate({}) == 2.0
    assert as_expression(-1.5).evaluate({}) == -1.5
    with pytest.raises(ExpressionError):
        as_expression(float("nan"))
    with pytest.raises(ExpressionError):
        as_expression(True)
