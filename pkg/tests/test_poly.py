import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quasipot.poly import (
    DimensionError,
    Monomial,
    Polynomial,
    PolynomialSyntaxError,
    VectorField,
    dot,
    evaluate,
    gradient,
    parse_polynomial,
)


def P(text, n=None):
    return parse_polynomial(text, nvars=n)


def test_evaluate_examples():
    assert evaluate(P("x^4/4 - x^2/2", 1), [1.0]) == pytest.approx(-0.25)
    assert evaluate(Polynomial.constant(1.0, 3), [5.0, -2.0, 0.3]) == 1.0
    assert evaluate(P("x1*x2", 2), [2.0, 3.0]) == 6.0


def test_evaluate_dimension_mismatch():
    with pytest.raises(DimensionError):
        evaluate(P("x1*x2", 2), [1.0, 2.0, 3.0])


def test_gradient_examples():
    g = gradient(P("0.25*x^4 - 0.5*x^2", 1))
    assert g[0] == P("x^3 - x", 1)
    g = gradient(P("x1*x2", 2))
    assert g[0] == P("x2", 2) and g[1] == P("x1", 2)
    assert gradient(Polynomial.constant(3.0, 2)).is_zero()


def test_dot_examples():
    a = VectorField([P("x", 1)])
    assert dot(a, VectorField([P("-x", 1)])) == P("-x^2", 1)
    rot = VectorField([P("x2", 2), P("-x1", 2)])
    assert dot(rot, VectorField([P("x1", 2), P("x2", 2)])).is_zero()
    c = VectorField([P("x^3 - x", 1)])
    assert dot(c, c) == P("x^6 - 2*x^4 + x^2", 1)


def test_dot_dimension_mismatch():
    with pytest.raises(DimensionError):
        dot(VectorField([P("x1", 2), P("x2", 2)]), VectorField([P("x", 1)]))


def test_arithmetic_examples():
    assert P("x^2 + 1", 1) + P("-x^2", 1) == Polynomial.constant(1.0, 1)
    assert P("x1*x2", 2).scale(2) == P("2*x1*x2", 2)
    assert P("x + 1", 1) * P("x - 1", 1) == P("x^2 - 1", 1)


def test_zero_terms_pruned():
    p = P("x^2 + x", 1) - P("x^2", 1)
    assert p.monomials() == [Monomial((1,))]
    assert (p - p).degree == -1


def test_product_degree_adds():
    a, b = P("x1^3 + x2", 2), P("x1*x2^2 - 1", 2)
    assert (a * b).degree == a.degree + b.degree


def test_display_prunes_small_coefficients():
    p = P("1e-12*x1^2 + 2*x1", 1)
    assert "x1^2" not in str(p)
    assert len(p) == 2


def test_grlex_order_in_text():
    assert P("1 + x1 + x2^2 + x1*x2", 2).to_text() == "1.0 * x1*x2 + 1.0 * x2^2 + 1.0 * x1 + 1.0"


@pytest.mark.parametrize("bad", ["x1^-2", "x1^1.5", "x1/x2", "sin(x1)", "x3", "x1 +", "x1^x2"])
def test_parse_rejects(bad):
    with pytest.raises(PolynomialSyntaxError):
        parse_polynomial(bad, nvars=2)


def test_parse_parameters():
    p = parse_polynomial("x1 - gamma*x1*x2^2", nvars=2, parameters={"gamma": 10})
    assert p.coefficient((1, 2)) == -10.0


def test_vectorized_evaluation_matches_pointwise():
    p = P("x1^3*x2 - 2*x2^2 + 0.5", 2)
    X = np.random.default_rng(0).uniform(-2, 2, (7, 2))
    assert np.allclose(p(X), [p(x) for x in X])


def test_jacobian_at_batch():
    f = VectorField.parse(["x1 - x1^3 - 10*x1*x2^2", "-(1 + x1^2)*x2"])
    J = f.jacobian_at([0.5, 0.2])
    assert np.allclose(J, [[1 - 0.75 - 0.4, -2.0], [-0.2, -1.25]])
    assert f.jacobian_at(np.zeros((4, 3, 2))).shape == (4, 3, 2, 2)


# random polynomials for property checks

def _terms(draw, n, max_deg):
    k = draw(st.integers(1, 6))
    terms = {}
    for _ in range(k):
        exps = draw(st.lists(st.integers(0, max_deg), min_size=n, max_size=n))
        while sum(exps) > max_deg:
            i = exps.index(max(exps))
            exps[i] -= 1
        terms[tuple(exps)] = draw(st.floats(-3, 3, allow_nan=False).filter(lambda c: abs(c) > 1e-3))
    return Polynomial(terms, n)


@st.composite
def polynomials(draw, max_n=4, max_deg=6):
    return _terms(draw, draw(st.integers(1, max_n)), max_deg)


@st.composite
def polynomial_pairs(draw, max_n=3, max_deg=4):
    n = draw(st.integers(1, max_n))
    return _terms(draw, n, max_deg), _terms(draw, n, max_deg)


def magnitude(p, x):
    """Value of ``p`` with every term made non-negative; the rounding scale."""
    return Polynomial({m: abs(c) for m, c in p.terms.items()}, p.nvars)(np.abs(x))


@settings(max_examples=60, deadline=None)
@given(polynomials(), st.integers(0, 2**32 - 1))
def test_gradient_matches_finite_differences(p, seed):
    x = np.random.default_rng(seed).uniform(-2, 2, p.nvars)
    g = p.gradient()(x)
    h = 1e-5
    for i in range(p.nvars):
        e = np.zeros(p.nvars)
        e[i] = h
        fd = (p(x + e) - p(x - e)) / (2 * h)
        assert abs(fd - g[i]) <= 1e-6 * max(1.0, magnitude(p, x))


@settings(max_examples=60, deadline=None)
@given(polynomial_pairs(), st.integers(0, 2**32 - 1))
def test_product_evaluates_to_product(pair, seed):
    p, q = pair
    x = np.random.default_rng(seed).uniform(-2, 2, p.nvars)
    assert abs((p * q)(x) - p(x) * q(x)) <= 1e-12 * magnitude(p, x) * magnitude(q, x)


@settings(max_examples=80, deadline=None)
@given(polynomials())
def test_text_round_trip(p):
    assert parse_polynomial(p.to_text(), nvars=p.nvars) == p
