import pytest

from quasipot.basis import (
    BasisError,
    BasisSpec,
    build_basis,
    degree_bound,
    extend_basis,
    lower_bound_monomials,
    minimal_basis,
)
from quasipot.poly import Monomial, VectorField

CUBIC = ["x1 - x1^3", "-x2^3", "-x3^3"]
MAIER_STEIN = ["x1 - x1^3 - 10*x1*x2^2", "-(1 + x1^2)*x2"]
LINEAR3 = ["-5*x1 + 0.2*x3", "-1.5*x2 + 3*x3", "0.5*x1 - 5*x2 - x3"]


def monos(*exps):
    return {Monomial(e) for e in exps}


def test_degree_bound():
    assert degree_bound(VectorField.parse(CUBIC)) == 4
    assert degree_bound(VectorField.parse(LINEAR3)) == 2
    assert degree_bound(VectorField.parse(["-x^5"])) == 6
    assert degree_bound(VectorField.parse(["-x^2"])) == 2


def test_minimal_basis_cubic_has_five_terms():
    got = set(minimal_basis(VectorField.parse(CUBIC)))
    assert got == monos((4, 0, 0), (0, 4, 0), (0, 0, 4), (2, 0, 0), (0, 0, 0))


def test_minimal_basis_one_dimensional():
    got = set(minimal_basis(VectorField.parse(["x - x^3 + 0.3"])))
    assert got == monos((4,), (2,), (1,), (0,))


def test_minimal_basis_maier_stein():
    got = set(minimal_basis(VectorField.parse(MAIER_STEIN)))
    assert got == monos((4, 0), (2, 2), (2, 0), (0, 2), (0, 0))


def test_extend_adds_missing_cross_term_for_linear_example():
    minimal = minimal_basis(VectorField.parse(LINEAR3))
    assert Monomial((1, 1, 0)) not in minimal
    ext = extend_basis(minimal, 3)
    assert set(ext) - set(minimal) == monos((1, 1, 0))


def test_extend_one_dimensional_unchanged():
    minimal = minimal_basis(VectorField.parse(["x - x^3"]))
    assert extend_basis(minimal, 1) == minimal


def test_extend_respects_per_variable_caps():
    # x2 only appears squared, so no x2^3 term may be added
    minimal = [Monomial(e) for e in [(4, 0), (0, 2), (2, 0), (0, 0)]]
    ext = extend_basis(minimal, 2)
    assert all(m[1] <= 2 and m.degree <= 4 for m in ext)
    assert Monomial((2, 2)) in ext and Monomial((1, 1)) in ext


def test_lower_bound_monomials():
    assert lower_bound_monomials(minimal_basis(VectorField.parse(["x - x^3"]))) == [Monomial((4,))]
    quad = build_basis(VectorField.parse(LINEAR3))
    assert set(quad.bound_basis) == monos((2, 0, 0), (0, 2, 0), (0, 0, 2))
    ms = build_basis(VectorField.parse(MAIER_STEIN))
    assert set(ms.bound_basis) == monos((4, 0), (2, 2), (0, 2))


def test_bound_properties_hold_for_built_bases():
    for texts in (CUBIC, MAIER_STEIN, LINEAR3, ["x - x^3"]):
        spec = build_basis(VectorField.parse(texts))
        assert all(b.is_even() for b in spec.bound_basis)
        assert set(spec.bound_basis) <= set(spec.potential_basis)
        assert max(b.degree for b in spec.bound_basis) == spec.degree
        assert Monomial.constant(spec.nvars) in spec.potential_basis


def test_missing_even_power_names_variable():
    # x2 never appears with an even pure power
    with pytest.raises(BasisError, match="x2"):
        lower_bound_monomials([Monomial(e) for e in [(2, 0), (1, 1), (0, 0)]])


def test_basis_spec_rejects_infeasible_bound_degree():
    pot = tuple(Monomial(e) for e in [(4,), (2,), (0,)])
    with pytest.raises(BasisError):
        BasisSpec(pot, (Monomial((2,)),), 4)
    with pytest.raises(BasisError):
        BasisSpec(pot, (Monomial((3,)),), 4)
