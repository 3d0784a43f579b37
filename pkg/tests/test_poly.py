from fractions import Fraction

import pytest
from hypothesis import given

from conftest import points, polynomials
from stopcert.poly import (Monomial, Polynomial, PolynomialSyntaxError, UnknownIdentifierError,
                           monomials_up_to, parse_inequality, parse_polynomial)

XYZ = ("x", "y", "z")


def P(text, variables=XYZ):
    return parse_polynomial(text, variables)


def test_arithmetic_collects_terms():
    assert P("(x + y)^2") == P("x^2 + 2*x*y + y^2")
    assert P("x - x") == 0
    assert (P("x") * 0).is_zero()
    assert P("3/4*x") / Fraction(3, 4) == P("x")


def test_parser_precedence_and_unary_minus():
    assert P("-x^2") == -P("x^2")
    assert P("2*x^3") == P("x*x*x") * 2
    assert P("x ** 2") == P("x^2")
    assert P("1.5*x") == P("3/2*x")
    assert P("-(x - 1)") == P("1 - x")


def test_parser_errors():
    with pytest.raises(UnknownIdentifierError):
        P("x + w")
    with pytest.raises(PolynomialSyntaxError):
        P("x +")
    with pytest.raises(PolynomialSyntaxError):
        P("x^-1")
    with pytest.raises(PolynomialSyntaxError):
        P("(x + 1")


def test_free_variables_when_unrestricted():
    p = parse_polynomial("a*b + 1")
    assert p.used_variables() == {"a", "b"}


def test_degree_and_coefficients():
    p = P("x^2*y - 3*z + 7")
    assert p.degree() == 3
    assert p.degree(["x"]) == 2
    assert p.coeff(Monomial({"z": 1})) == -3
    assert p.constant_term() == 7


def test_inequalities():
    ge = parse_inequality("x <= 10", XYZ)
    assert ge.holds({"x": 10}) and not ge.holds({"x": 11})
    gt = parse_inequality("x > y", XYZ)
    assert gt.strict and not gt.holds({"x": 1, "y": 1})
    assert gt.negation().holds({"x": 1, "y": 1})


def test_evaluate_exact_and_float():
    p = P("1/3*x^2 + y")
    assert p.evaluate({"x": Fraction(1), "y": Fraction(1, 3), "z": 0}) == Fraction(2, 3)
    assert isinstance(p.evaluate({"x": 0.5, "y": 0.0, "z": 0.0}), float)
    with pytest.raises(KeyError):
        p.evaluate({"x": 1})


def test_monomial_enumeration_counts():
    ms = monomials_up_to(["x1", "x2"], 2)
    assert len(ms) == 6 and ms[0] == Monomial()
    assert len(monomials_up_to(["x1", "x2", "x3"], 4, min_degree=4)) == 15


@given(polynomials())
def test_print_parse_roundtrip(p):
    assert parse_polynomial(p.to_str(), XYZ).terms == p.terms


@given(polynomials(max_degree=2), polynomials(max_degree=2), polynomials(max_degree=2, max_terms=3))
def test_substitute_is_a_ring_homomorphism(p, q, b):
    bind = {"x": b, "y": P("y + 1")}
    assert (p * q).substitute(bind) == p.substitute(bind) * q.substitute(bind)
    assert (p + q).substitute(bind) == p.substitute(bind) + q.substitute(bind)


@given(polynomials(max_degree=4), polynomials(max_degree=2, max_terms=3), points())
def test_evaluate_after_substitute(p, b, pt):
    bind = {"x": b, "z": P("x*y - 1")}
    moved = dict(pt, x=b.evaluate(pt), z=P("x*y - 1").evaluate(pt))
    assert p.substitute(bind).evaluate(pt) == p.evaluate(moved)


@given(polynomials(), polynomials(), points())
def test_evaluation_respects_arithmetic(p, q, pt):
    assert (p * q - q).evaluate(pt) == p.evaluate(pt) * q.evaluate(pt) - q.evaluate(pt)
