"""Sum-of-squares constraints compiled to a standard-form SDP.

A :class:`SosProgram` owns scalar decision variables and a list of
polynomial constraints whose coefficients are affine in those variables
(:class:`ParamPolynomial`).  Each SOS constraint introduces one PSD Gram
block and coefficient-matching equalities; :meth:`SosProgram.compile`
emits an :class:`SdpProblem` that any backend accepting linear equalities,
bounds and PSD cones can solve.

Matrix constraints ``M(x) >= 0`` are scalarised as ``y^T M(x) y`` with a
Gram basis that is linear in ``y``.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence, TextIO

import numpy as np
import scipy.sparse as sp

from .poly import Monomial, Polynomial, grlex_sorted

__all__ = [
    "DecisionVar",
    "ParamPolynomial",
    "SdpProblem",
    "SdpSolution",
    "SosCertificate",
    "CertificateReport",
    "SosProgram",
    "SosSolution",
    "StructuralInfeasibility",
    "ClarabelBackend",
    "CvxpyBackend",
    "gram_basis",
    "check_certificate",
    "PSD_TOL",
    "CERT_TOL",
]

log = logging.getLogger(__name__)

PSD_TOL = 1e-8
CERT_TOL = 1e-6
_SQRT2 = math.sqrt(2.0)


class StructuralInfeasibility(ValueError):
    """An SOS constraint that no Gram matrix can satisfy, detected before solving."""


@dataclass(frozen=True)
class DecisionVar:
    index: int
    name: str
    lower: float | None = None
    upper: float | None = None

    def __mul__(self, other):
        if isinstance(other, Polynomial):
            return ParamPolynomial({self.index: other}, other.nvars)
        return NotImplemented

    __rmul__ = __mul__


class ParamPolynomial:
    """``P_0(x) + sum_v var_v * P_v(x)``, stored as ``{v or None: P_v}``."""

    __slots__ = ("nvars", "parts")

    def __init__(self, parts: Mapping[int | None, Polynomial], nvars: int):
        self.nvars = nvars
        self.parts = {k: p for k, p in parts.items() if not p.is_zero()}

    @classmethod
    def from_poly(cls, p: Polynomial) -> "ParamPolynomial":
        return cls({None: p}, p.nvars)

    @classmethod
    def linear(cls, coeffs: Mapping[DecisionVar, Polynomial], nvars: int) -> "ParamPolynomial":
        """``sum_v v * p_v``."""
        return cls({v.index: p for v, p in coeffs.items()}, nvars)

    @classmethod
    def zero(cls, nvars: int) -> "ParamPolynomial":
        return cls({}, nvars)

    def _lift(self, other) -> "ParamPolynomial":
        if isinstance(other, ParamPolynomial):
            return other
        if isinstance(other, Polynomial):
            return ParamPolynomial.from_poly(other)
        if isinstance(other, (int, float)):
            return ParamPolynomial.from_poly(Polynomial.constant(float(other), self.nvars))
        raise TypeError(f"cannot combine ParamPolynomial with {type(other).__name__}")

    def __add__(self, other) -> "ParamPolynomial":
        other = self._lift(other)
        parts = dict(self.parts)
        for k, p in other.parts.items():
            parts[k] = parts[k] + p if k in parts else p
        return ParamPolynomial(parts, self.nvars)

    __radd__ = __add__

    def __neg__(self) -> "ParamPolynomial":
        return ParamPolynomial({k: -p for k, p in self.parts.items()}, self.nvars)

    def __sub__(self, other) -> "ParamPolynomial":
        return self + (-self._lift(other))

    def __rsub__(self, other) -> "ParamPolynomial":
        return self._lift(other) + (-self)

    def __mul__(self, other) -> "ParamPolynomial":
        if isinstance(other, (int, float)):
            return ParamPolynomial({k: p.scale(float(other)) for k, p in self.parts.items()}, self.nvars)
        if isinstance(other, Polynomial):
            return ParamPolynomial({k: p * other for k, p in self.parts.items()}, self.nvars)
        return NotImplemented

    __rmul__ = __mul__

    def diff(self, i: int) -> "ParamPolynomial":
        return ParamPolynomial({k: p.diff(i) for k, p in self.parts.items()}, self.nvars)

    def gradient(self) -> list["ParamPolynomial"]:
        return [self.diff(i) for i in range(self.nvars)]

    def support(self) -> set[Monomial]:
        return {m for p in self.parts.values() for m in p.terms}

    def constant_part(self) -> Polynomial:
        return self.parts.get(None, Polynomial.zero(self.nvars))

    def is_zero(self) -> bool:
        return not self.parts

    def coefficient_rows(self) -> dict[Monomial, dict[int | None, float]]:
        rows: dict[Monomial, dict[int | None, float]] = {}
        for k, p in self.parts.items():
            for m, c in p.terms.items():
                rows.setdefault(m, {})[k] = c
        return rows

    def substitute(self, values: Sequence[float]) -> Polynomial:
        out = Polynomial.zero(self.nvars)
        for k, p in self.parts.items():
            out = out + (p if k is None else p.scale(float(values[k])))
        return out


def dot_param(a: Sequence[ParamPolynomial], b: Sequence[Polynomial]) -> ParamPolynomial:
    """``sum_i a_i * b_i`` with fixed polynomial factors ``b``."""
    total = ParamPolynomial.zero(a[0].nvars)
    for ai, bi in zip(a, b):
        total = total + ai * bi
    return total


# -- Gram bases ------------------------------------------------------------

@dataclass(frozen=True)
class _Envelope:
    lo: tuple[int, ...]
    hi: tuple[int, ...]
    tot_lo: int
    tot_hi: int

    @classmethod
    def of(cls, monos: Iterable[Monomial]) -> "_Envelope | None":
        monos = list(monos)
        if not monos:
            return None
        n = len(monos[0])
        return cls(
            tuple(min(m[i] for m in monos) for i in range(n)),
            tuple(max(m[i] for m in monos) for i in range(n)),
            min(m.degree for m in monos),
            max(m.degree for m in monos),
        )

    def half(self) -> list[Monomial]:
        """Monomials ``m`` with ``2m`` inside the envelope."""
        ranges = [range((lo + 1) // 2, hi // 2 + 1) for lo, hi in zip(self.lo, self.hi)]
        out = []
        for exps in itertools.product(*ranges):
            t = 2 * sum(exps)
            if self.tot_lo <= t <= self.tot_hi:
                out.append(Monomial(exps))
        return grlex_sorted(out, descending=False)


def gram_basis(degree: int, n: int, support_hint: Iterable[Iterable[int]] | None = None) -> list[Monomial]:
    """Monomials of total degree ``<= degree/2``, optionally envelope-filtered.

    With ``support_hint`` only monomials whose doubled exponents lie inside
    the per-variable and total-degree range of the hint are kept.  The
    result is in ascending graded-lexicographic order.
    """
    if degree % 2:
        raise ValueError("Gram basis needs an even degree")
    half = degree // 2
    full = [Monomial(e) for e in itertools.product(range(half + 1), repeat=n) if sum(e) <= half]
    if support_hint is not None:
        env = _Envelope.of(Monomial(m) for m in support_hint)
        if env is None:
            return []
        keep = set(env.half())
        full = [m for m in full if m in keep]
    return grlex_sorted(full, descending=False)


def _prune_diagonal(basis: list, key, target_keys: set) -> list:
    """Drop Gram elements whose square can neither match nor be cancelled.

    ``key(a, b)`` maps two basis elements to the coefficient key of their
    product; an element whose square key is outside ``target_keys`` and is
    produced by no other pair must have a zero Gram row.
    """
    basis = list(basis)
    while True:
        counts: dict = {}
        for a, b in itertools.combinations_with_replacement(range(len(basis)), 2):
            k = key(basis[a], basis[b])
            counts[k] = counts.get(k, 0) + 1
        drop = [a for a in range(len(basis))
                if key(basis[a], basis[a]) not in target_keys and counts[key(basis[a], basis[a])] == 1]
        if not drop:
            return basis
        basis = [z for i, z in enumerate(basis) if i not in set(drop)]


# -- certificates ------------------------------------------------------------

@dataclass
class SosCertificate:
    """Gram certificate ``p = z^T Q z``.

    For matrix constraints each basis entry is ``(k, m)`` meaning
    ``y_k * x^m`` and ``size`` is the matrix dimension; for scalar
    constraints entries are plain monomials and ``size`` is ``None``.
    """

    name: str
    gram_basis: list
    gram_matrix: np.ndarray
    nvars: int
    size: int | None = None

    @property
    def is_matrix(self) -> bool:
        return self.size is not None

    def min_eig(self) -> float:
        if self.gram_matrix.size == 0:
            return 0.0
        return float(np.linalg.eigvalsh(self.gram_matrix)[0])

    def reconstruct(self):
        """``z^T Q z`` as a Polynomial, or as a symmetric matrix of them."""
        Q = self.gram_matrix
        n = self.nvars
        if not self.is_matrix:
            terms: dict = {}
            for a, ma in enumerate(self.gram_basis):
                for b, mb in enumerate(self.gram_basis):
                    k = tuple(x + y for x, y in zip(ma, mb))
                    terms[k] = terms.get(k, 0.0) + Q[a, b]
            return Polynomial(terms, n)
        entries = [[dict() for _ in range(self.size)] for _ in range(self.size)]
        for a, (ka, ma) in enumerate(self.gram_basis):
            for b, (kb, mb) in enumerate(self.gram_basis):
                k = tuple(x + y for x, y in zip(ma, mb))
                cell = entries[ka][kb]
                cell[k] = cell.get(k, 0.0) + Q[a, b]
        return [[Polynomial(entries[i][j], n) for j in range(self.size)] for i in range(self.size)]


@dataclass
class CertificateReport:
    """How well a Gram certificate matches its target.

    ``residual`` compares ``z^T Q z`` with the target; ``psd_residual``
    does the same after projecting ``Q`` onto the PSD cone, so a small
    ``psd_residual`` means the target is within that distance of an exact
    sum of squares.
    """

    residual: float
    min_eig: float
    scale: float
    psd_residual: float = 0.0

    def ok(self, residual_tol: float = CERT_TOL) -> bool:
        return max(self.residual, self.psd_residual) <= residual_tol * max(1.0, self.scale)


def _residual(cert: SosCertificate, p) -> float:
    rec = cert.reconstruct()
    if cert.is_matrix:
        return max(
            ((rec[i][j] - p[i][j]).norm_inf() for i in range(cert.size) for j in range(cert.size)),
            default=0.0,
        )
    return (rec - p).norm_inf()


def psd_projection(Q: np.ndarray) -> np.ndarray:
    """Nearest PSD matrix in Frobenius norm."""
    w, V = np.linalg.eigh(0.5 * (Q + Q.T))
    return (V * np.clip(w, 0.0, None)) @ V.T


def check_certificate(cert: SosCertificate, p) -> CertificateReport:
    """Compare ``z^T Q z`` against ``p`` coefficient-wise.

    ``p`` is a Polynomial for scalar certificates or a square matrix
    (nested lists) of Polynomials for matrix certificates.
    """
    residual = _residual(cert, p)
    if cert.gram_matrix.size == 0:
        return CertificateReport(residual, 0.0, 0.0, residual)
    projected = SosCertificate(cert.name, cert.gram_basis, psd_projection(cert.gram_matrix),
                               cert.nvars, cert.size)
    scale = float(np.max(np.abs(cert.gram_matrix)))
    return CertificateReport(residual=residual, min_eig=cert.min_eig(), scale=scale,
                             psd_residual=_residual(projected, p))


# -- standard-form SDP --------------------------------------------------------

@dataclass
class SdpProblem:
    """``optimise c^T x`` over ``x = [scalars, svec(block_1), ...]``.

    Constraints are ``A x = b`` (sparse triplets), ``lower_i <= x_i <= upper_i``
    for bounded scalars and ``mat(svec_k) >= 0`` for each PSD block.  Blocks use
    the column-major upper-triangle ``svec`` with off-diagonals scaled by
    ``sqrt(2)``.
    """

    n_scalar: int
    block_sizes: list[int]
    eq_rows: list[int]
    eq_cols: list[int]
    eq_vals: list[float]
    rhs: list[float]
    objective: dict[int, float]
    sense: str = "min"
    lower: dict[int, float] = field(default_factory=dict)
    upper: dict[int, float] = field(default_factory=dict)
    scalar_names: list[str] = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return self.n_scalar + sum(svec_len(k) for k in self.block_sizes)

    @property
    def n_eq(self) -> int:
        return len(self.rhs)

    def block_offsets(self) -> list[int]:
        offs, pos = [], self.n_scalar
        for k in self.block_sizes:
            offs.append(pos)
            pos += svec_len(k)
        return offs

    def eq_matrix(self) -> sp.csc_matrix:
        return sp.csc_matrix((self.eq_vals, (self.eq_rows, self.eq_cols)), shape=(self.n_eq, self.n_vars))

    def cost_vector(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        for j, v in self.objective.items():
            c[j] = v
        return c

    def blocks(self, x: np.ndarray) -> list[np.ndarray]:
        return [smat(x[o:o + svec_len(k)], k) for o, k in zip(self.block_offsets(), self.block_sizes)]

    def dump(self, fh: TextIO) -> None:
        """Plain-text sparse dump; format documented in the README."""
        fh.write("# quasipot sdp dump v1\n")
        fh.write(f"sense {self.sense}\n")
        fh.write(f"scalars {self.n_scalar}\n")
        fh.write("blocks " + " ".join(str(k) for k in self.block_sizes) + "\n")
        fh.write(f"lower {len(self.lower)}\n")
        for j, v in sorted(self.lower.items()):
            fh.write(f"{j} {v!r}\n")
        fh.write(f"upper {len(self.upper)}\n")
        for j, v in sorted(self.upper.items()):
            fh.write(f"{j} {v!r}\n")
        fh.write(f"objective {len(self.objective)}\n")
        for j, v in sorted(self.objective.items()):
            fh.write(f"{j} {v!r}\n")
        fh.write(f"equalities {self.n_eq} {len(self.eq_vals)}\n")
        for r, c, v in zip(self.eq_rows, self.eq_cols, self.eq_vals):
            fh.write(f"{r} {c} {v!r}\n")
        fh.write("rhs\n")
        for r, v in enumerate(self.rhs):
            if v != 0.0:
                fh.write(f"{r} {v!r}\n")
        fh.write("end\n")


def svec_len(k: int) -> int:
    return k * (k + 1) // 2


def svec_index(i: int, j: int) -> int:
    if i > j:
        i, j = j, i
    return j * (j + 1) // 2 + i


def smat(v: np.ndarray, k: int) -> np.ndarray:
    Q = np.zeros((k, k))
    for j in range(k):
        for i in range(j + 1):
            val = v[svec_index(i, j)]
            if i == j:
                Q[i, i] = val
            else:
                Q[i, j] = Q[j, i] = val / _SQRT2
    return Q


@dataclass
class SdpSolution:
    status: str  # optimal | infeasible | unbounded | numerical-failure
    x: np.ndarray | None
    objective: float | None
    iterations: int = 0
    solve_time: float = 0.0
    primal_residual: float = math.nan
    dual_residual: float = math.nan
    detail: str = ""


class SdpBackend(Protocol):
    def solve(self, problem: SdpProblem) -> SdpSolution: ...


class ClarabelBackend:
    """Interior-point backend built on the Clarabel conic solver."""

    def __init__(self, tol: float = 1e-9, max_iter: int = 200, verbose: bool = False):
        self.tol = tol
        self.max_iter = max_iter
        self.verbose = verbose

    def solve(self, problem: SdpProblem) -> SdpSolution:
        import clarabel

        nv = problem.n_vars
        Aeq = problem.eq_matrix()
        rows = [Aeq]
        b = [np.asarray(problem.rhs, dtype=float)]
        cones = []
        if problem.n_eq:
            cones.append(clarabel.ZeroConeT(problem.n_eq))
        if problem.lower:
            idx = sorted(problem.lower)
            rows.append(sp.csc_matrix((-np.ones(len(idx)), (range(len(idx)), idx)), shape=(len(idx), nv)))
            b.append(-np.array([problem.lower[j] for j in idx]))
            cones.append(clarabel.NonnegativeConeT(len(idx)))
        if problem.upper:
            idx = sorted(problem.upper)
            rows.append(sp.csc_matrix((np.ones(len(idx)), (range(len(idx)), idx)), shape=(len(idx), nv)))
            b.append(np.array([problem.upper[j] for j in idx]))
            cones.append(clarabel.NonnegativeConeT(len(idx)))
        for off, k in zip(problem.block_offsets(), problem.block_sizes):
            m = svec_len(k)
            rows.append(sp.csc_matrix((-np.ones(m), (range(m), range(off, off + m))), shape=(m, nv)))
            b.append(np.zeros(m))
            cones.append(clarabel.PSDTriangleConeT(k))
        A = sp.vstack(rows, format="csc")
        bvec = np.concatenate(b)
        c = problem.cost_vector()
        if problem.sense == "max":
            c = -c
        P = sp.csc_matrix((nv, nv))

        settings = clarabel.DefaultSettings()
        settings.verbose = self.verbose
        settings.max_iter = self.max_iter
        settings.tol_gap_abs = self.tol
        settings.tol_gap_rel = self.tol
        settings.tol_feas = self.tol
        settings.tol_ktratio = 1e-7
        # SOS optima often sit on the boundary of the PSD cone; longer steps
        # and tighter KKT refinement buy roughly two digits there
        settings.max_step_fraction = 0.999
        settings.iterative_refinement_reltol = 1e-14
        settings.iterative_refinement_abstol = 1e-14
        settings.iterative_refinement_max_iter = 50
        t0 = time.perf_counter()
        solver = clarabel.DefaultSolver(P, c, A, bvec, cones, settings)
        sol = solver.solve()
        elapsed = time.perf_counter() - t0

        raw = str(sol.status)
        status = _CLARABEL_STATUS.get(raw.split(".")[-1], "numerical-failure")
        x = np.array(sol.x) if status == "optimal" else None
        obj = float(problem.cost_vector() @ x) if x is not None else None
        return SdpSolution(status, x, obj, iterations=int(sol.iterations), solve_time=elapsed,
                           primal_residual=float(sol.r_prim), dual_residual=float(sol.r_dual),
                           detail=raw)


_CLARABEL_STATUS = {
    "Solved": "optimal",
    "AlmostSolved": "optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
}


class CvxpyBackend:
    """Backend routing the same standard form through cvxpy (e.g. SCS, CVXOPT)."""

    def __init__(self, solver: str = "CVXOPT", **options):
        self.solver = solver
        self.options = options

    def solve(self, problem: SdpProblem) -> SdpSolution:
        import cvxpy as cp

        x = cp.Variable(problem.n_vars)
        cons = []
        if problem.n_eq:
            cons.append(problem.eq_matrix() @ x == np.asarray(problem.rhs))
        for j, lo in problem.lower.items():
            cons.append(x[j] >= lo)
        for j, hi in problem.upper.items():
            cons.append(x[j] <= hi)
        for off, k in zip(problem.block_offsets(), problem.block_sizes):
            S = cp.Variable((k, k), symmetric=True)
            for j in range(k):
                for i in range(j + 1):
                    scale = 1.0 if i == j else 1.0 / _SQRT2
                    cons.append(S[i, j] == scale * x[off + svec_index(i, j)])
            cons.append(S >> 0)
        c = problem.cost_vector()
        obj = cp.Maximize(c @ x) if problem.sense == "max" else cp.Minimize(c @ x)
        prob = cp.Problem(obj, cons)
        t0 = time.perf_counter()
        try:
            prob.solve(solver=self.solver, **self.options)
        except cp.error.SolverError as exc:
            return SdpSolution("numerical-failure", None, None, detail=str(exc))
        elapsed = time.perf_counter() - t0
        st = prob.status
        if st in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            return SdpSolution("optimal", np.asarray(x.value), float(c @ x.value),
                               solve_time=elapsed, detail=st)
        if st in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return SdpSolution("infeasible", None, None, solve_time=elapsed, detail=st)
        if st in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
            return SdpSolution("unbounded", None, None, solve_time=elapsed, detail=st)
        return SdpSolution("numerical-failure", None, None, solve_time=elapsed, detail=st)


# -- SOS programs ---------------------------------------------------------------

@dataclass
class _SosConstraint:
    name: str
    size: int | None  # None for scalar constraints
    basis: list
    rows: dict  # key -> {var index or None: coeff}
    target: object  # ParamPolynomial or matrix of them


@dataclass
class SosSolution:
    status: str
    values: np.ndarray | None
    objective: float | None
    certificates: dict[str, SosCertificate]
    eq_residual: float
    min_eig: float
    sdp: SdpSolution
    var_names: list[str]

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def value(self, var: DecisionVar) -> float:
        return float(self.values[var.index])

    def polynomial(self, p: ParamPolynomial) -> Polynomial:
        return p.substitute(self.values)

    def as_dict(self) -> dict[str, float]:
        return {name: float(v) for name, v in zip(self.var_names, self.values)}


class SosProgram:
    """Builder for SOS programs over a fixed state dimension ``nvars``."""

    def __init__(self, nvars: int):
        self.nvars = nvars
        self.vars: list[DecisionVar] = []
        self.constraints: list[_SosConstraint] = []
        self.linear_eqs: list[tuple[dict[int, float], float]] = []
        self.objective: dict[int, float] = {}
        self.sense = "min"

    # variables & objective
    def new_var(self, name: str, lower: float | None = None, upper: float | None = None) -> DecisionVar:
        if any(v.name == name for v in self.vars):
            raise ValueError(f"duplicate decision variable {name!r}")
        v = DecisionVar(len(self.vars), name, lower, upper)
        self.vars.append(v)
        return v

    def add_linear_equality(self, terms: Mapping[DecisionVar, float], rhs: float = 0.0) -> None:
        self.linear_eqs.append(({v.index: float(c) for v, c in terms.items()}, float(rhs)))

    def _set_objective(self, terms, sense: str) -> None:
        if isinstance(terms, DecisionVar):
            terms = {terms: 1.0}
        elif not isinstance(terms, Mapping):
            terms = {v: 1.0 for v in terms}
        self.objective = {v.index: float(c) for v, c in terms.items()}
        self.sense = sense

    def maximize(self, terms) -> None:
        self._set_objective(terms, "max")

    def minimize(self, terms) -> None:
        self._set_objective(terms, "min")

    # constraints
    def _name(self, name: str | None) -> str:
        name = name or f"sos{len(self.constraints)}"
        if any(c.name == name for c in self.constraints):
            raise ValueError(f"duplicate constraint name {name!r}")
        return name

    def add_scalar_sos(self, p: ParamPolynomial | Polynomial, name: str | None = None,
                       support_hint: Iterable[Iterable[int]] | None = None) -> str:
        """Require ``p`` to be a sum of squares; returns the constraint name."""
        if isinstance(p, Polynomial):
            p = ParamPolynomial.from_poly(p)
        name = self._name(name)
        support = p.support()
        env = _Envelope.of(support if support_hint is None else [Monomial(m) for m in support_hint])
        basis = env.half() if env is not None else []
        if support_hint is not None and env is not None:
            own = _Envelope.of(support)
            basis = [m for m in basis if own is not None and m in set(own.half())]
        rows = p.coefficient_rows()

        def key(a, b):
            return tuple(x + y for x, y in zip(a, b))

        basis = _prune_diagonal(basis, key, set(rows))
        self._check_structure(name, rows, {key(a, b) for a in basis for b in basis}, p.nvars)
        self.constraints.append(_SosConstraint(name, None, basis, rows, p))
        return name

    def add_matrix_sos(self, M: Sequence[Sequence[ParamPolynomial | Polynomial]], name: str | None = None) -> str:
        """Require the polynomial matrix ``M(x)`` to be PSD for every ``x``.

        Encoded as ``y^T M(x) y`` SOS in ``(x, y)`` with Gram elements
        ``y_k * m(x)``, ``m`` ranging over half the envelope of ``M_kk``.
        """
        size = len(M)
        cells = [[e if isinstance(e, ParamPolynomial) else ParamPolynomial.from_poly(e) for e in row] for row in M]
        if any(len(row) != size for row in cells):
            raise ValueError("matrix constraint must be square")
        name = self._name(name)
        rows: dict = {}
        for i in range(size):
            for j in range(i, size):
                entry = cells[i][j] if i == j else cells[i][j] + cells[j][i]
                for m, coeffs in entry.coefficient_rows().items():
                    rows[(i, j, m)] = coeffs
        basis = []
        for k in range(size):
            env = _Envelope.of(cells[k][k].support())
            if env is not None:
                basis.extend((k, m) for m in env.half())

        def key(a, b):
            (ka, ma), (kb, mb) = a, b
            i, j = min(ka, kb), max(ka, kb)
            return (i, j, tuple(x + y for x, y in zip(ma, mb)))

        basis = _prune_diagonal(basis, key, set(rows))
        self._check_structure(name, rows, {key(a, b) for a in basis for b in basis}, self.nvars)
        self.constraints.append(_SosConstraint(name, size, basis, rows, cells))
        return name

    @staticmethod
    def _check_structure(name, rows, reachable, nvars) -> None:
        for k, coeffs in rows.items():
            if k in reachable:
                continue
            if set(coeffs) == {None}:
                mono = k if isinstance(k[-1], int) else k[-1]
                raise StructuralInfeasibility(
                    f"constraint {name!r}: fixed term {Monomial(mono).to_text()} lies outside "
                    f"the half-degree envelope (odd or unbalanced leading degree)"
                )

    # compile & solve
    def compile(self) -> SdpProblem:
        n_scalar = len(self.vars)
        eq_rows, eq_cols, eq_vals, rhs = [], [], [], []
        row = 0
        for terms, value in self.linear_eqs:
            for j, c in terms.items():
                eq_rows.append(row)
                eq_cols.append(j)
                eq_vals.append(c)
            rhs.append(value)
            row += 1
        offset = n_scalar
        sizes = []
        for con in self.constraints:
            gram: dict = {}
            nb = len(con.basis)
            for a in range(nb):
                for b in range(a, nb):
                    za, zb = con.basis[a], con.basis[b]
                    if con.size is None:
                        k = tuple(x + y for x, y in zip(za, zb))
                    else:
                        (ka, ma), (kb, mb) = za, zb
                        k = (min(ka, kb), max(ka, kb), tuple(x + y for x, y in zip(ma, mb)))
                    gram.setdefault(k, []).append((offset + svec_index(a, b), 1.0 if a == b else _SQRT2))
            for k in set(gram) | set(con.rows):
                coeffs = con.rows.get(k, {})
                for j, c in coeffs.items():
                    if j is not None:
                        eq_rows.append(row)
                        eq_cols.append(j)
                        eq_vals.append(c)
                for col, w in gram.get(k, ()):
                    eq_rows.append(row)
                    eq_cols.append(col)
                    eq_vals.append(-w)
                rhs.append(-coeffs.get(None, 0.0))
                row += 1
            sizes.append(nb)
            offset += svec_len(nb)
        lower = {v.index: v.lower for v in self.vars if v.lower is not None}
        upper = {v.index: v.upper for v in self.vars if v.upper is not None}
        return SdpProblem(n_scalar, sizes, eq_rows, eq_cols, eq_vals, rhs, dict(self.objective),
                          self.sense, lower, upper, [v.name for v in self.vars])

    def solve(self, backend: SdpBackend | None = None) -> SosSolution:
        problem = self.compile()
        backend = backend or ClarabelBackend()
        sol = backend.solve(problem)
        if sol.status != "optimal":
            log.debug("SOS program ended with status %s (%s)", sol.status, sol.detail)
            return SosSolution(sol.status, None, None, {}, math.inf, -math.inf, sol,
                               [v.name for v in self.vars])
        x = sol.x
        resid = problem.eq_matrix() @ x - np.asarray(problem.rhs)
        eq_residual = float(np.max(np.abs(resid))) if resid.size else 0.0
        blocks = problem.blocks(x)
        certs = {}
        for con, Q in zip(self.constraints, blocks):
            certs[con.name] = SosCertificate(con.name, list(con.basis), Q, self.nvars, con.size)
        min_eig = min((c.min_eig() for c in certs.values()), default=0.0)
        return SosSolution("optimal", x[: len(self.vars)].copy(), sol.objective, certs,
                           eq_residual, min_eig, sol, [v.name for v in self.vars])

    def constraint_target(self, name: str, solution: SosSolution):
        """The constrained polynomial (or matrix) with the solution substituted."""
        con = next(c for c in self.constraints if c.name == name)
        if con.size is None:
            return con.target.substitute(solution.values)
        return [[e.substitute(solution.values) for e in row] for row in con.target]
