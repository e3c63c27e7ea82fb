"""Sub-orthogonal decomposition ``f = -grad U + f_U``.

The pipeline is

1. :func:`construct_initial` -- the steepest potential: maximise the
   lower-bound weights subject to ``U >= sum eps_i b_i`` and
   ``M_U(x) >= 0``, where ``M_U = [[-grad U . f, grad U^T], [grad U, I]]``;
2. :func:`iterate` -- repeated refinement: minimise ``alpha`` subject to
   ``U2 >= eps |x|^2``, ``M_U2 >= 0`` and
   ``grad U2 . (f + 2 grad U1) >= alpha f . grad U1 + (1 + alpha) |grad U1|^2``.

``M_U >= 0`` holds exactly when the defect ``-grad U . f - |grad U|^2``
is non-negative, i.e. when ``grad U . f_U <= 0``.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .basis import BasisError, BasisSpec, build_basis
from .poly import Monomial, Polynomial, VectorField, variable_names
from .sos import (
    CERT_TOL,
    PSD_TOL,
    CertificateReport,
    ClarabelBackend,
    ParamPolynomial,
    SosCertificate,
    SosProgram,
    SosSolution,
    StructuralInfeasibility,
    check_certificate,
    dot_param,
)

__all__ = [
    "DecomposeConfig",
    "DecompositionError",
    "DecompositionResult",
    "IterationRecord",
    "StageResult",
    "construct_initial",
    "iterate",
    "defect",
    "defect_measure",
    "decompose",
    "normalize",
]

log = logging.getLogger(__name__)


class DecompositionError(RuntimeError):
    """A pipeline stage failed; ``stage`` and ``status`` say where and how."""

    def __init__(self, stage: str, status: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.status = status


@dataclass
class DecomposeConfig:
    max_iterations: int = 5
    alpha_stop: float = 0.999
    defect_stop: float = 1e-4
    epsilon_posdef: float = 0.0  # lower bound on eps in the refinement program
    normalization_point: Sequence[float] | None = None  # default: origin
    box: Sequence[tuple[float, float]] | None = None  # default: [-2, 2]^n
    grid_resolution: int = 21
    extend_basis: bool = True
    solver_tol: float = 1e-9
    offset_cap: float = 1e3
    alpha_orthogonal: float = 1e-6  # alpha this small means U_prev was already orthogonal

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if not 0 < self.alpha_stop <= 1:
            raise ValueError("alpha_stop must lie in (0, 1]")
        if self.grid_resolution < 1:
            raise ValueError("grid_resolution must be >= 1")

    def box_for(self, n: int) -> list[tuple[float, float]]:
        if self.box is None:
            return [(-2.0, 2.0)] * n
        if len(self.box) != n:
            raise ValueError(f"box has {len(self.box)} intervals for dimension {n}")
        return [(float(a), float(b)) for a, b in self.box]

    def backend(self) -> ClarabelBackend:
        return ClarabelBackend(tol=self.solver_tol)


RESULT_CERTIFICATES = ("lower_bound", "sub_orthogonality")
EPS_FLOOR = 1e-7  # sum of bound weights at or below this counts as zero


@dataclass
class StageResult:
    """One solved program: the potential it produced and its certificates."""

    U: Polynomial
    solution: SosSolution
    certificates: dict[str, SosCertificate]
    reports: dict[str, CertificateReport]
    epsilon: dict[str, float] = field(default_factory=dict)
    alpha: float | None = None

    @property
    def certified(self) -> bool:
        """Lower bound and sub-orthogonality certificates both check out."""
        return all(name in self.reports and self.reports[name].ok() for name in RESULT_CERTIFICATES)


@dataclass
class IterationRecord:
    stage: str
    alpha: float | None
    defect_measure: float
    eq_residual: float
    min_eig: float
    solve_time: float
    certified: bool


@dataclass
class DecompositionResult:
    f: VectorField
    U: Polynomial
    f_U: VectorField
    defect: Polynomial
    basis: BasisSpec
    iterations: list[IterationRecord]
    certificates: dict[str, SosCertificate]
    reports: dict[str, CertificateReport]
    epsilon: dict[str, float]
    U_raw: Polynomial
    offset: float
    box: list[tuple[float, float]]
    status: str  # certified | uncertified

    @property
    def certified(self) -> bool:
        return self.status == "certified"

    @property
    def defect_measure(self) -> float:
        return self.iterations[-1].defect_measure

    @property
    def alphas(self) -> list[float]:
        return [r.alpha for r in self.iterations if r.alpha is not None]

    def coefficient(self, mono) -> float:
        return self.U.coefficient(mono)


def _potential(prog: SosProgram, basis: BasisSpec, offset_cap: float | None = None):
    """``U = sum_j c_j p_j`` and the map from monomial to coefficient variable."""
    n = basis.nvars
    names = variable_names(n)
    coeffs, by_mono = {}, {}
    for m in basis.potential_basis:
        cap = offset_cap if m.is_constant() else None
        v = prog.new_var(f"c[{m.to_text(names)}]", upper=cap)
        coeffs[v] = Polynomial({m: 1.0}, n)
        by_mono[m] = v
    return ParamPolynomial.linear(coeffs, n), by_mono


def _schur_matrix(grad: list[ParamPolynomial], f: VectorField) -> list[list]:
    """``[[-grad U . f, grad U^T], [grad U, I]]``."""
    n = f.nvars
    top = -dot_param(grad, list(f))
    one = Polynomial.constant(1.0, n)
    zero = Polynomial.zero(n)
    M = [[top] + list(grad)]
    for i in range(n):
        M.append([grad[i]] + [one if i == j else zero for j in range(n)])
    return M


def _certify(prog: SosProgram, sol: SosSolution) -> dict[str, CertificateReport]:
    return {name: check_certificate(cert, prog.constraint_target(name, sol))
            for name, cert in sol.certificates.items()}


def construct_initial(f: VectorField, basis: BasisSpec, backend=None,
                      offset_cap: float | None = 1e3, max_cap: float = 1e7,
                      tie_break: float | None = 1e-6) -> StageResult:
    """Steepest sub-orthogonal potential in the span of ``basis``.

    The bound weights usually approach their supremum only as the constant
    term of ``U`` grows without limit; ``offset_cap`` bounds that constant so
    the program has an attained optimum.  The resulting bias is of order
    ``1 / offset_cap`` and is removed by :func:`iterate`.  If the cap makes
    the program infeasible it is raised tenfold, up to ``max_cap``, and
    finally dropped.

    The maximiser is rarely unique.  With ``tie_break`` set, a second
    solve keeps ``sum eps`` within that relative slack of its optimum and
    maximises the coefficients of the bound monomials in ``U``, picking
    the steepest potential on the optimal face.  For linear drift this is
    ``tr(P) / 2``, which the maximal Riccati solution maximises.
    """
    cap = offset_cap
    while True:
        try:
            return _steepest(f, basis, backend, cap, tie_break)
        except DecompositionError as exc:
            if exc.status != "infeasible" or cap is None or exc.stage == "basis":
                raise
            cap = cap * 10 if cap * 10 <= max_cap else None
            log.info("steepest-potential program infeasible under offset cap; retrying with %s", cap)


def _steepest(f: VectorField, basis: BasisSpec, backend, offset_cap: float | None,
              tie_break: float | None = None) -> StageResult:
    n = f.nvars
    prog = SosProgram(n)
    U, coeff = _potential(prog, basis, offset_cap)
    names = variable_names(n)
    eps = [prog.new_var(f"eps[{b.to_text(names)}]", lower=0.0) for b in basis.bound_basis]
    bound = ParamPolynomial.linear({e: Polynomial({b: 1.0}, n) for e, b in zip(eps, basis.bound_basis)}, n)
    try:
        prog.add_scalar_sos(U - bound, name="lower_bound")
        prog.add_matrix_sos(_schur_matrix(U.gradient(), f), name="sub_orthogonality")
    except StructuralInfeasibility as exc:
        raise DecompositionError("basis", "infeasible", str(exc)) from None
    prog.maximize(eps)
    sol = prog.solve(backend)
    if sol.status == "infeasible":
        raise DecompositionError(
            "construct_initial", "infeasible",
            "no potential in the basis is bounded below by the chosen monomials while keeping "
            "M_U >= 0 (feasibility failure: drift may be unstable, or the bound degree exceeds "
            "what the potential can dominate)")
    if sol.status == "unbounded":
        raise DecompositionError(
            "construct_initial", "unbounded",
            "lower-bound weights are unbounded; the potential basis is likely missing the "
            "monomials needed to constrain the bound")
    if not sol.optimal:
        raise DecompositionError("construct_initial", sol.status, f"solver failed: {sol.sdp.detail}")
    if sol.objective <= EPS_FLOOR:
        raise DecompositionError(
            "construct_initial", "infeasible",
            f"best lower-bound weight sum is {sol.objective:.3g}: only a flat potential satisfies "
            "M_U >= 0, so no Lyapunov function exists in this basis (is the drift unstable?)")
    if tie_break is not None:
        best = sol.objective
        total = prog.new_var("eps_total", lower=best - tie_break * max(1.0, abs(best)))
        prog.add_linear_equality({total: 1.0, **{e: -1.0 for e in eps}}, 0.0)
        prog.maximize([coeff[b] for b in basis.bound_basis])
        second = prog.solve(backend)
        if second.optimal:
            tied = _stage(prog, second, U, eps)
            first = _stage(prog, sol, U, eps)
            if tied.certified or not first.certified:
                return tied
            log.info("tie-break solution failed its certificate check; keeping first solution")
        else:
            log.info("tie-break solve ended with %s; keeping first solution", second.status)
    return _stage(prog, sol, U, eps)


def _stage(prog: SosProgram, sol: SosSolution, U: ParamPolynomial, eps) -> StageResult:
    return StageResult(
        U=sol.polynomial(U),
        solution=sol,
        certificates=sol.certificates,
        reports=_certify(prog, sol),
        epsilon={v.name: sol.value(v) for v in eps},
    )


def iterate(f: VectorField, U_prev: Polynomial, basis: BasisSpec, backend=None,
            epsilon_min: float = 0.0, alpha_tol: float = 1e-6) -> StageResult:
    """One refinement step towards orthogonality.

    ``(alpha = 1, U2 = U_prev)`` is feasible whenever ``U_prev`` is; a
    smaller ``alpha`` certifies ``grad U2 . f_U2 >= alpha * grad U_prev .
    f_U_prev + |grad U2 - grad U_prev|^2`` pointwise.  Solver failure, or
    an optimum above ``1 + alpha_tol``, returns ``U_prev`` with
    ``alpha = 1`` and a warning.
    """
    n = f.nvars
    prog = SosProgram(n)
    U2, _ = _potential(prog, basis)
    alpha = prog.new_var("alpha", lower=0.0)
    eps = prog.new_var("eps", lower=epsilon_min)
    sq = sum((Polynomial.variable(i, n) ** 2 for i in range(n)), Polynomial.zero(n))
    g1 = U_prev.gradient()
    D1 = defect(U_prev, f)
    grad2 = U2.gradient()
    improve = dot_param(grad2, list(f + g1.scale(2.0))) - g1.norm_sq() + alpha * D1
    try:
        prog.add_scalar_sos(U2 - eps * sq, name="lower_bound")
        prog.add_matrix_sos(_schur_matrix(grad2, f), name="sub_orthogonality")
        prog.add_scalar_sos(improve, name="improvement")
    except StructuralInfeasibility as exc:
        warnings.warn(f"refinement skipped: {exc}", RuntimeWarning, stacklevel=2)
        return _fallback(U_prev)
    prog.minimize(alpha)
    sol = prog.solve(backend)
    if not sol.optimal:
        warnings.warn(f"refinement solve failed ({sol.status}); keeping previous potential",
                      RuntimeWarning, stacklevel=2)
        return _fallback(U_prev)
    if sol.value(alpha) > 1 + alpha_tol:
        warnings.warn(f"refinement gave alpha = {sol.value(alpha):.6g} > 1; keeping previous potential",
                      RuntimeWarning, stacklevel=2)
        return _fallback(U_prev)
    return StageResult(
        U=sol.polynomial(U2),
        solution=sol,
        certificates=sol.certificates,
        reports=_certify(prog, sol),
        epsilon={"eps": sol.value(eps)},
        alpha=sol.value(alpha),
    )


def _fallback(U_prev: Polynomial) -> StageResult:
    return StageResult(U=U_prev, solution=None, certificates={}, reports={}, alpha=1.0)


def defect(U: Polynomial, f: VectorField) -> Polynomial:
    """``-grad U . f - |grad U|^2``; non-negative iff the split is sub-orthogonal."""
    g = U.gradient()
    return -(g.dot(f)) - g.norm_sq()


def defect_measure(D: Polynomial, box: Sequence[tuple[float, float]], resolution: int = 21) -> float:
    """Mean of ``D`` over a uniform ``resolution^n`` tensor grid on ``box``.

    Evaluated monomial by monomial: the grid mean of ``x^a`` factorises
    into per-axis means, so the cost does not grow with ``resolution^n``.
    """
    n = D.nvars
    if len(box) != n:
        raise ValueError("box dimension mismatch")
    if D.is_zero():
        return 0.0
    top = max(D.max_degree_in(i) for i in range(n))
    axis_means = []
    for lo, hi in box:
        pts = np.array([0.5 * (lo + hi)]) if resolution == 1 else np.linspace(lo, hi, resolution)
        axis_means.append(np.array([np.mean(pts ** k) for k in range(top + 1)]))
    total = 0.0
    for m, c in D.terms.items():
        total += c * math.prod(axis_means[i][e] for i, e in enumerate(m))
    return float(total)


def normalize(U: Polynomial, x_ref) -> Polynomial:
    """Shift ``U`` by a constant so that ``U(x_ref) = 0``."""
    return U - U(np.asarray(x_ref, dtype=float))


def _record(stage: str, st: StageResult, D: Polynomial, box, res: int) -> IterationRecord:
    sol = st.solution
    return IterationRecord(
        stage=stage,
        alpha=st.alpha,
        defect_measure=defect_measure(D, box, res),
        eq_residual=sol.eq_residual if sol else math.nan,
        min_eig=sol.min_eig if sol else math.nan,
        solve_time=sol.sdp.solve_time if sol else 0.0,
        certified=st.certified if sol else False,
    )


def decompose(f: VectorField, config: DecomposeConfig | None = None, basis: BasisSpec | None = None,
              backend=None) -> DecompositionResult:
    """Run basis selection, the steepest-potential program and refinements."""
    config = config or DecomposeConfig()
    backend = backend or config.backend()
    n = f.nvars
    box = config.box_for(n)
    res = config.grid_resolution
    if basis is None:
        try:
            basis = build_basis(f, extend=config.extend_basis)
        except BasisError as exc:
            raise DecompositionError("basis", "infeasible", str(exc)) from None

    t0 = time.perf_counter()
    current = construct_initial(f, basis, backend, config.offset_cap)
    D = defect(current.U, f)
    records = [_record("initial", current, D, box, res)]
    log.info("initial potential: defect measure %.3e", records[-1].defect_measure)

    for k in range(config.max_iterations):
        prev_measure = records[-1].defect_measure
        step = iterate(f, current.U, basis, backend, config.epsilon_posdef)
        if step.solution is None:
            break
        if step.alpha <= config.alpha_orthogonal and (current.certified or not step.certified):
            # alpha = 0 forces U2 = U_prev: the previous potential is already orthogonal
            records.append(_record(f"iteration {k + 1}", step, defect(current.U, f), box, res))
            records[-1].certified = current.certified
            log.info("iteration %d: alpha %.3g, previous potential is orthogonal", k + 1, step.alpha)
            break
        D_new = defect(step.U, f)
        rec = _record(f"iteration {k + 1}", step, D_new, box, res)
        records.append(rec)
        current = step
        log.info("iteration %d: alpha %.6f, defect measure %.3e", k + 1, rec.alpha, rec.defect_measure)
        if rec.alpha >= config.alpha_stop:
            break
        scale = max(abs(prev_measure), 1e-300)
        if (prev_measure - rec.defect_measure) / scale < config.defect_stop:
            break
    log.info("decomposition finished in %.2fs", time.perf_counter() - t0)

    U_raw = current.U
    x_ref = np.zeros(n) if config.normalization_point is None else np.asarray(config.normalization_point, float)
    offset = U_raw(x_ref)
    U = normalize(U_raw, x_ref)
    grad = U.gradient()
    f_U = f + grad
    residual = (f + grad) - f_U
    assert residual.is_zero(), "decomposition identity violated"
    status = "certified" if current.certified else "uncertified"
    return DecompositionResult(
        f=f, U=U, f_U=f_U, defect=defect(U, f), basis=basis, iterations=records,
        certificates=current.certificates, reports=current.reports, epsilon=current.epsilon,
        U_raw=U_raw, offset=offset, box=box, status=status,
    )
