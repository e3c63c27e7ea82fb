"""Monomial bases for the potential and its lower bound.

The potential is searched in the span of ``potential_basis``; the lower
bound ``B(x) = sum_i eps_i b_i(x)`` uses ``bound_basis``.  Both are
derived from the drift alone:

* the degree of ``U`` is capped at ``e + 1`` (``e`` = degree of the drift),
  rounded down to an even number;
* the minimal basis is the monomial support of ``sum_i f_i x_i`` plus 1;
* mixed monomials are added when their total degree and every
  per-variable degree stay within what the minimal basis already uses;
* the bound uses the top even pure power of each variable and every even
  mixed monomial of maximal total degree.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .poly import Monomial, Polynomial, VectorField, grlex_sorted, variable_names

__all__ = [
    "BasisError",
    "BasisSpec",
    "degree_bound",
    "minimal_basis",
    "extend_basis",
    "lower_bound_monomials",
    "build_basis",
]


class BasisError(ValueError):
    """The basis cannot support a feasible steepest-potential program."""


@dataclass(frozen=True)
class BasisSpec:
    potential_basis: tuple[Monomial, ...]
    bound_basis: tuple[Monomial, ...]
    degree: int

    def __post_init__(self):
        n = self.nvars
        if Monomial.constant(n) not in self.potential_basis:
            raise BasisError("potential basis must contain the constant monomial")
        if self.degree % 2:
            raise BasisError(f"potential degree must be even, got {self.degree}")
        if max(m.degree for m in self.potential_basis) != self.degree:
            raise BasisError("potential basis degree does not match the stated degree")
        for b in self.bound_basis:
            if not b.is_even():
                raise BasisError(f"bound monomial {b.to_text()} is not even")
            if b not in self.potential_basis:
                raise BasisError(f"bound monomial {b.to_text()} missing from potential basis")
        top = max((b.degree for b in self.bound_basis), default=-1)
        if top != self.degree:
            raise BasisError(
                f"bound degree {top} != potential degree {self.degree}: the bound either "
                "exerts no pressure on the leading terms or makes the program infeasible"
            )

    @property
    def nvars(self) -> int:
        return len(self.potential_basis[0])

    def describe(self, names=None) -> dict:
        names = names or variable_names(self.nvars)
        return {
            "degree": self.degree,
            "potential_basis": [m.to_text(names) for m in self.potential_basis],
            "bound_basis": [m.to_text(names) for m in self.bound_basis],
        }


def degree_bound(f: VectorField) -> int:
    """Largest even ``d <= e + 1`` (at least 2), ``e`` the drift degree."""
    e = f.degree
    if e < 0:
        raise BasisError("drift is identically zero")
    d = e + 1
    d -= d % 2
    return max(d, 2)


def _drift_pairing(f: VectorField) -> Polynomial:
    n = f.nvars
    return sum((p * Polynomial.variable(i, n) for i, p in enumerate(f)), Polynomial.zero(n))


def minimal_basis(f: VectorField) -> list[Monomial]:
    """Monomials of ``sum_i f_i x_i`` together with the constant monomial."""
    monos = set(_drift_pairing(f).monomials())
    monos.add(Monomial.constant(f.nvars))
    return grlex_sorted(monos)


def _pure_power_caps(basis) -> list[int]:
    n = len(basis[0])
    caps = [0] * n
    for m in basis:
        if m.is_pure():
            i = m.support()[0]
            caps[i] = max(caps[i], m[i])
    return caps


def extend_basis(minimal: list[Monomial], n: int) -> list[Monomial]:
    """Add every admissible mixed monomial to a minimal basis.

    Admissible: total degree at most the largest total degree of
    ``minimal`` and, for each variable, degree at most its highest pure
    power in ``minimal``.  Pure powers are left as they are.
    """
    minimal = [Monomial(m) for m in minimal]
    if any(len(m) != n for m in minimal):
        raise ValueError("basis monomials do not match dimension")
    top = max(m.degree for m in minimal)
    caps = _pure_power_caps(minimal)
    out = set(minimal)
    for exps in itertools.product(*(range(c + 1) for c in caps)):
        m = Monomial(exps)
        if m.is_mixed() and m.degree <= top:
            out.add(m)
    return grlex_sorted(out)


def lower_bound_monomials(basis: list[Monomial]) -> list[Monomial]:
    """Even monomials used in the lower bound for ``U``.

    Per variable the highest even pure power in ``basis``, plus every even
    mixed monomial whose total degree is the maximum in ``basis``.  A
    variable without an even pure power makes the steepest-potential
    program infeasible by construction, so :class:`BasisError` is raised
    naming it.
    """
    basis = [Monomial(m) for m in basis]
    if not basis or all(m.is_constant() for m in basis):
        raise BasisError("basis contains no non-constant monomial")
    n = len(basis[0])
    names = variable_names(n)
    top = max(m.degree for m in basis)
    out = []
    for i in range(n):
        powers = [m[i] for m in basis if m.is_pure() and m.support() == (i,) and m[i] % 2 == 0]
        if not powers:
            raise BasisError(
                f"no even pure power of {names[i]} in the potential basis: the drift exerts "
                f"no descent in {names[i]}, so no potential in this basis can be bounded below"
            )
        exps = [0] * n
        exps[i] = max(powers)
        out.append(Monomial(exps))
    out.extend(m for m in basis if m.is_mixed() and m.is_even() and m.degree == top)
    return grlex_sorted(set(out))


def build_basis(f: VectorField, extend: bool = True) -> BasisSpec:
    """Potential and bound bases for drift ``f``."""
    d = degree_bound(f)
    minimal = [m for m in minimal_basis(f) if m.degree <= d]
    potential = extend_basis(minimal, f.nvars) if extend else grlex_sorted(minimal)
    bound = lower_bound_monomials(potential)
    return BasisSpec(tuple(potential), tuple(bound), max(m.degree for m in potential))
