"""Sparse multivariate polynomials with real coefficients.

A :class:`Polynomial` maps exponent tuples (:class:`Monomial`) to float
coefficients.  Values are immutable after construction and every
operation returns a new object; exact zero coefficients are never stored.

Text form used throughout the package (CLI output, system documents)::

    0.5 * x1^4 + 0.5 * x2^4 - 5 * x1^2 + 1 * x1*x2

Terms are written in graded-lexicographic order, highest degree first.
"""

from __future__ import annotations

import ast
import re
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "PolynomialSyntaxError",
    "Monomial",
    "Polynomial",
    "VectorField",
    "evaluate",
    "gradient",
    "dot",
    "parse_polynomial",
    "variable_names",
]

DISPLAY_PRUNE = 1e-9


class DimensionError(ValueError):
    """Operands live in state spaces of different dimension."""


class PolynomialSyntaxError(ValueError):
    """Text could not be read as a polynomial."""


def _check_dims(a: int, b: int) -> None:
    if a != b:
        raise DimensionError(f"dimension mismatch: {a} != {b}")


class Monomial(tuple):
    """Exponent vector ``(a_1, ..., a_n)`` standing for ``x1^a1 * ... * xn^an``."""

    __slots__ = ()

    def __new__(cls, exponents: Iterable[int]):
        exps = tuple(int(e) for e in exponents)
        if any(e < 0 for e in exps):
            raise ValueError(f"negative exponent in monomial {exps}")
        return super().__new__(cls, exps)

    @classmethod
    def constant(cls, n: int) -> "Monomial":
        return cls((0,) * n)

    @classmethod
    def variable(cls, i: int, n: int) -> "Monomial":
        exps = [0] * n
        exps[i] = 1
        return cls(exps)

    @property
    def nvars(self) -> int:
        return len(self)

    @property
    def degree(self) -> int:
        return sum(self)

    def __mul__(self, other):  # monomial product, not tuple repetition
        _check_dims(len(self), len(other))
        return Monomial(a + b for a, b in zip(self, other))

    __rmul__ = __mul__

    def is_constant(self) -> bool:
        return not any(self)

    def is_even(self) -> bool:
        return all(e % 2 == 0 for e in self)

    def support(self) -> tuple[int, ...]:
        """Indices of variables with a nonzero exponent."""
        return tuple(i for i, e in enumerate(self) if e)

    def is_pure(self) -> bool:
        """True for a power of a single variable (``x_i^k``, k >= 1)."""
        return len(self.support()) == 1

    def is_mixed(self) -> bool:
        return len(self.support()) >= 2

    def grlex_key(self) -> tuple:
        return (self.degree, tuple(self))

    def to_text(self, names: Sequence[str] | None = None) -> str:
        names = names or variable_names(len(self))
        parts = []
        for name, e in zip(names, self):
            if e == 1:
                parts.append(name)
            elif e > 1:
                parts.append(f"{name}^{e}")
        return "*".join(parts) if parts else "1"

    def __repr__(self) -> str:
        return f"Monomial({tuple(self)})"


def variable_names(n: int) -> list[str]:
    return [f"x{i + 1}" for i in range(n)]


def grlex_sorted(monomials: Iterable[Monomial], descending: bool = True) -> list[Monomial]:
    return sorted(monomials, key=Monomial.grlex_key, reverse=descending)


class Polynomial:
    """Real polynomial in ``nvars`` variables stored as ``{Monomial: coefficient}``."""

    __slots__ = ("nvars", "_terms", "_compiled")

    def __init__(self, terms: Mapping[Iterable[int], float] | None = None, nvars: int | None = None):
        clean: dict[Monomial, float] = {}
        for mono, coeff in (terms or {}).items():
            m = mono if isinstance(mono, Monomial) else Monomial(mono)
            if nvars is None:
                nvars = len(m)
            _check_dims(len(m), nvars)
            c = float(coeff)
            if c != 0.0:
                clean[m] = clean.get(m, 0.0) + c
                if clean[m] == 0.0:
                    del clean[m]
        if nvars is None:
            raise ValueError("nvars required for an empty polynomial")
        self.nvars = int(nvars)
        self._terms = clean
        self._compiled = None

    # -- constructors -------------------------------------------------
    @classmethod
    def zero(cls, n: int) -> "Polynomial":
        return cls({}, n)

    @classmethod
    def constant(cls, c: float, n: int) -> "Polynomial":
        return cls({Monomial.constant(n): c}, n)

    @classmethod
    def variable(cls, i: int, n: int) -> "Polynomial":
        return cls({Monomial.variable(i, n): 1.0}, n)

    @classmethod
    def monomial(cls, m: Iterable[int], coeff: float = 1.0) -> "Polynomial":
        m = Monomial(m)
        return cls({m: coeff}, len(m))

    @classmethod
    def parse(cls, text: str, variables: Sequence[str] | None = None, nvars: int | None = None,
              parameters: Mapping[str, float] | None = None) -> "Polynomial":
        return parse_polynomial(text, variables=variables, nvars=nvars, parameters=parameters)

    # -- container protocol --------------------------------------------
    @property
    def terms(self) -> Mapping[Monomial, float]:
        return dict(self._terms)

    def items(self) -> list[tuple[Monomial, float]]:
        """Terms in descending graded-lexicographic order."""
        return [(m, self._terms[m]) for m in grlex_sorted(self._terms)]

    def monomials(self) -> list[Monomial]:
        return grlex_sorted(self._terms)

    def coefficient(self, m: Iterable[int]) -> float:
        return self._terms.get(tuple(m), 0.0)

    __getitem__ = coefficient

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self) -> Iterator[Monomial]:
        return iter(self.monomials())

    def __bool__(self) -> bool:
        return bool(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((m.degree for m in self._terms), default=-1)

    def max_degree_in(self, i: int) -> int:
        return max((m[i] for m in self._terms), default=-1)

    def norm_inf(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    # -- arithmetic ----------------------------------------------------
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            _check_dims(self.nvars, other.nvars)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(float(other), self.nvars)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial(out, self.nvars)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial({m: -c for m, c in self._terms.items()}, self.nvars)

    def __pos__(self) -> "Polynomial":
        return self

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return other + (-self)

    def scale(self, s: float) -> "Polynomial":
        return Polynomial({m: s * c for m, c in self._terms.items()}, self.nvars)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(float(other))
        if not isinstance(other, Polynomial):
            return NotImplemented
        _check_dims(self.nvars, other.nvars)
        out: dict[tuple, float] = {}
        for ma, ca in self._terms.items():
            for mb, cb in other._terms.items():
                key = tuple(a + b for a, b in zip(ma, mb))
                out[key] = out.get(key, 0.0) + ca * cb
        return Polynomial(out, self.nvars)

    __rmul__ = __mul__

    def __truediv__(self, s):
        if isinstance(s, (int, float, np.floating, np.integer)):
            return self.scale(1.0 / float(s))
        return NotImplemented

    def __pow__(self, k: int) -> "Polynomial":
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise ValueError("polynomial powers need a non-negative integer exponent")
        result = Polynomial.constant(1.0, self.nvars)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, float)):
            other = Polynomial.constant(float(other), self.nvars)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self._terms == other._terms

    def __hash__(self) -> int:
        return hash((self.nvars, frozenset(self._terms.items())))

    def allclose(self, other: "Polynomial", atol: float = 1e-9) -> bool:
        return (self - other).norm_inf() <= atol

    def pruned(self, tol: float) -> "Polynomial":
        return Polynomial({m: c for m, c in self._terms.items() if abs(c) > tol}, self.nvars)

    # -- calculus ------------------------------------------------------
    def diff(self, i: int) -> "Polynomial":
        """Partial derivative with respect to variable ``i`` (0-based)."""
        out = {}
        for m, c in self._terms.items():
            if m[i]:
                e = list(m)
                e[i] -= 1
                out[tuple(e)] = c * m[i]
        return Polynomial(out, self.nvars)

    def gradient(self) -> "VectorField":
        return VectorField([self.diff(i) for i in range(self.nvars)])

    # -- evaluation ----------------------------------------------------
    def _compile(self):
        if self._compiled is None:
            monos = list(self._terms)
            exps = np.array(monos, dtype=float).reshape(len(monos), self.nvars)
            coeffs = np.array([self._terms[m] for m in monos], dtype=float)
            self._compiled = (exps, coeffs)
        return self._compiled

    def __call__(self, x) -> float | np.ndarray:
        """Evaluate at ``x`` of shape ``(n,)`` or a batch ``(..., n)``."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x.reshape(1)
        _check_dims(x.shape[-1], self.nvars)
        exps, coeffs = self._compile()
        if not len(coeffs):
            val = np.zeros(x.shape[:-1])
        else:
            val = np.prod(x[..., None, :] ** exps, axis=-1) @ coeffs
        return float(val) if np.ndim(val) == 0 else val

    evaluate = __call__

    # -- text ----------------------------------------------------------
    def to_text(self, names: Sequence[str] | None = None, exact: bool = True) -> str:
        """Signed-term text.

        ``exact=True`` writes shortest round-trip floats; otherwise
        coefficients below ``DISPLAY_PRUNE`` are hidden and ten
        significant digits are shown.
        """
        names = names or variable_names(self.nvars)
        parts = []
        for m, c in self.items():
            if not exact and abs(c) < DISPLAY_PRUNE:
                continue
            mag = repr(abs(c)) if exact else f"{abs(c):.10g}"
            term = mag if m.is_constant() else f"{mag} * {m.to_text(names)}"
            sign = "-" if c < 0 else "+"
            parts.append((sign, term))
        if not parts:
            return "0"
        first_sign, first = parts[0]
        text = ("-" if first_sign == "-" else "") + first
        for sign, term in parts[1:]:
            text += f" {sign} {term}"
        return text

    def __str__(self) -> str:
        return self.to_text(exact=False)

    def __repr__(self) -> str:
        return f"Polynomial({self.to_text()!r}, nvars={self.nvars})"


class VectorField:
    """An n-tuple of polynomials in n variables, e.g. a drift ``f(x)``."""

    __slots__ = ("components", "_compiled", "_jac", "_jac_field")

    def __init__(self, components: Sequence[Polynomial]):
        comps = tuple(components)
        if not comps:
            raise ValueError("vector field needs at least one component")
        n = comps[0].nvars
        for p in comps:
            _check_dims(p.nvars, n)
        self.components = comps
        self._compiled = None
        self._jac = None
        self._jac_field = None

    @classmethod
    def parse(cls, texts: Sequence[str], variables: Sequence[str] | None = None,
              parameters: Mapping[str, float] | None = None) -> "VectorField":
        n = len(texts)
        return cls([parse_polynomial(t, variables=variables, nvars=n, parameters=parameters)
                    for t in texts])

    @classmethod
    def linear(cls, A) -> "VectorField":
        """Field ``x -> A x``."""
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        return cls([
            Polynomial({Monomial.variable(j, n): A[i, j] for j in range(n)}, n)
            for i in range(n)
        ])

    @property
    def nvars(self) -> int:
        return self.components[0].nvars

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def degree(self) -> int:
        return max(p.degree for p in self.components)

    def __len__(self) -> int:
        return len(self.components)

    def __getitem__(self, i: int) -> Polynomial:
        return self.components[i]

    def __iter__(self) -> Iterator[Polynomial]:
        return iter(self.components)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VectorField):
            return NotImplemented
        return self.components == other.components

    def __hash__(self) -> int:
        return hash(self.components)

    def _zip(self, other: "VectorField"):
        _check_dims(self.dim, other.dim)
        return zip(self.components, other.components)

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField([a + b for a, b in self._zip(other)])

    def __sub__(self, other: "VectorField") -> "VectorField":
        return VectorField([a - b for a, b in self._zip(other)])

    def __neg__(self) -> "VectorField":
        return VectorField([-a for a in self.components])

    def scale(self, s: float) -> "VectorField":
        return VectorField([a.scale(s) for a in self.components])

    def dot(self, other: "VectorField") -> Polynomial:
        total = Polynomial.zero(self.nvars)
        for a, b in self._zip(other):
            total = total + a * b
        return total

    def norm_sq(self) -> Polynomial:
        return self.dot(self)

    def is_zero(self) -> bool:
        return all(p.is_zero() for p in self.components)

    def jacobian(self) -> list[list[Polynomial]]:
        """``J[i][j] = d f_i / d x_j``."""
        if self._jac is None:
            self._jac = [[p.diff(j) for j in range(self.nvars)] for p in self.components]
        return self._jac

    def _compile(self):
        if self._compiled is None:
            monos = sorted({m for p in self.components for m in p.terms})
            index = {m: k for k, m in enumerate(monos)}
            exps = np.array(monos, dtype=float).reshape(len(monos), self.nvars)
            coeffs = np.zeros((self.dim, len(monos)))
            for i, p in enumerate(self.components):
                for m, c in p.terms.items():
                    coeffs[i, index[m]] = c
            self._compiled = (exps, coeffs)
        return self._compiled

    def __call__(self, x) -> np.ndarray:
        """Evaluate at ``x`` of shape ``(n,)`` or ``(..., n)``; returns same shape."""
        x = np.asarray(x, dtype=float)
        _check_dims(x.shape[-1], self.nvars)
        exps, coeffs = self._compile()
        if not exps.shape[0]:
            return np.zeros(x.shape[:-1] + (self.dim,))
        mono_vals = np.prod(x[..., None, :] ** exps, axis=-1)
        return mono_vals @ coeffs.T

    evaluate = __call__

    def jacobian_at(self, x) -> np.ndarray:
        """Jacobian at ``x`` of shape ``(n,)`` or ``(..., n)``; returns ``(..., dim, n)``."""
        x = np.asarray(x, dtype=float)
        if self._jac_field is None:
            self._jac_field = VectorField([q for row in self.jacobian() for q in row])
        vals = self._jac_field(x)
        return vals.reshape(x.shape[:-1] + (self.dim, self.nvars))

    def to_text(self, names: Sequence[str] | None = None, exact: bool = True) -> list[str]:
        return [p.to_text(names, exact=exact) for p in self.components]

    def __repr__(self) -> str:
        return f"VectorField({self.to_text()!r})"


def evaluate(p: Polynomial, x) -> float:
    return p(x)


def gradient(p: Polynomial) -> VectorField:
    return p.gradient()


def dot(a: VectorField, b: VectorField) -> Polynomial:
    return a.dot(b)


# -- parsing -----------------------------------------------------------

_NUMERIC = (int, float)


def parse_polynomial(text: str, variables: Sequence[str] | None = None, nvars: int | None = None,
                     parameters: Mapping[str, float] | None = None) -> Polynomial:
    """Parse a polynomial expression.

    Accepts ``+ - * /`` (division by constants only), ``^`` or ``**`` with
    non-negative integer exponents, parentheses, numeric literals,
    variable names and named parameters.  Variables default to
    ``x1..xn``; a lone ``x`` is accepted when ``n == 1``.
    """
    if variables is None:
        if nvars is None:
            found = [int(k) for k in re.findall(r"\bx(\d+)\b", text)]
            nvars = max(found, default=1)
        variables = variable_names(nvars)
    variables = list(variables)
    n = len(variables)
    if nvars is not None and nvars != n:
        raise DimensionError(f"{len(variables)} variable names for dimension {nvars}")
    lookup = {name: i for i, name in enumerate(variables)}
    if n == 1 and "x" not in lookup:
        lookup["x"] = 0
    params = dict(parameters or {})

    source = text.replace("^", "**")
    try:
        tree = ast.parse(source.strip(), mode="eval")
    except SyntaxError as exc:
        raise PolynomialSyntaxError(f"cannot parse {text!r}: {exc.msg} at column {exc.offset}") from None

    def fail(node, why):
        col = getattr(node, "col_offset", 0)
        raise PolynomialSyntaxError(f"{why} in {text!r} (column {col + 1})")

    def const_value(node):
        # exponents must be literal integers, optionally parenthesised
        if isinstance(node, ast.Constant) and isinstance(node.value, int) and not isinstance(node.value, bool):
            return node.value
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            inner = const_value(node.operand)
            return -inner if isinstance(node.op, ast.USub) else inner
        fail(node, "exponent must be an integer literal")

    def walk(node) -> Polynomial:
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, _NUMERIC):
                fail(node, f"unsupported literal {node.value!r}")
            return Polynomial.constant(float(node.value), n)
        if isinstance(node, ast.Name):
            if node.id in lookup:
                return Polynomial.variable(lookup[node.id], n)
            if node.id in params:
                return Polynomial.constant(float(params[node.id]), n)
            fail(node, f"unknown symbol {node.id!r}")
        if isinstance(node, ast.UnaryOp):
            if isinstance(node.op, ast.USub):
                return -walk(node.operand)
            if isinstance(node.op, ast.UAdd):
                return walk(node.operand)
            fail(node, "unsupported unary operator")
        if isinstance(node, ast.BinOp):
            if isinstance(node.op, ast.Pow):
                k = const_value(node.right)
                if k < 0:
                    fail(node, "negative exponent (non-polynomial term)")
                return walk(node.left) ** k
            left, right = walk(node.left), walk(node.right)
            if isinstance(node.op, ast.Add):
                return left + right
            if isinstance(node.op, ast.Sub):
                return left - right
            if isinstance(node.op, ast.Mult):
                return left * right
            if isinstance(node.op, ast.Div):
                if right.degree > 0:
                    fail(node, "division by a non-constant (non-polynomial term)")
                c = right.coefficient(Monomial.constant(n))
                if c == 0.0:
                    fail(node, "division by zero")
                return left / c
            fail(node, "unsupported operator")
        fail(node, f"unsupported expression {type(node).__name__}")

    return walk(tree)

