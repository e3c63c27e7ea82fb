"""Analytic reference results for linear drift ``f(x) = A x``.

For stable ``A`` the orthogonal decomposition ``A = A_g + A_c`` with
symmetric ``A_g`` has a closed form through the Gramian ``S`` solving
``A S + S A^T = -I``: ``A_g = -S^{-1} / 2``.  The potential is
``U(x) = -x^T A_g x / 2`` and ``P = -A_g`` is the maximal solution of
``P A + A^T P + 2 P^2 = 0``.
"""

from __future__ import annotations

import csv
import logging
import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .poly import Monomial, Polynomial, VectorField

__all__ = [
    "StabilityError",
    "LinearSystem",
    "LinearDecomposition",
    "LinearReport",
    "gramian_potential",
    "normal_case_potential",
    "riccati_residual",
    "random_stable_matrix",
    "verify_linear_decomposition",
    "quadratic_form",
    "gradient_matrix",
    "linear_drift_matrix",
    "BenchRow",
    "run_bench",
    "write_bench_csv",
    "median_times_monotone",
]

log = logging.getLogger(__name__)

NORMAL_TOL = 1e-10
COND_WARN = 1e10


class StabilityError(ValueError):
    """The matrix has an eigenvalue with non-negative real part."""


def _spectral_abscissa(A: np.ndarray) -> float:
    return float(np.max(np.linalg.eigvals(A).real))


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        mu = _spectral_abscissa(A)
        if mu >= 0:
            raise StabilityError(f"A is not stable: spectral abscissa {mu:.6g} >= 0")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def spectral_abscissa(self) -> float:
        return _spectral_abscissa(self.A)

    def drift(self) -> VectorField:
        return VectorField.linear(self.A)


@dataclass(frozen=True)
class LinearDecomposition:
    A_g: np.ndarray
    A_c: np.ndarray

    def potential(self) -> Polynomial:
        """``U(x) = -x^T A_g x / 2``."""
        return quadratic_form(-0.5 * self.A_g)


def _as_matrix(A) -> np.ndarray:
    if isinstance(A, LinearSystem):
        return A.A
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    return A


def gramian_potential(A) -> LinearDecomposition:
    """Orthogonal decomposition of a stable linear drift via its Gramian."""
    sys = A if isinstance(A, LinearSystem) else LinearSystem(A)
    A = sys.A
    S = linalg.solve_continuous_lyapunov(A, -np.eye(sys.n))
    S = 0.5 * (S + S.T)
    cond = np.linalg.cond(S)
    if cond > COND_WARN:
        warnings.warn(f"Gramian is ill-conditioned (condition number {cond:.3g})",
                      RuntimeWarning, stacklevel=2)
    A_g = -0.5 * np.linalg.inv(S)
    A_g = 0.5 * (A_g + A_g.T)
    return LinearDecomposition(A_g=A_g, A_c=A - A_g)


def normal_case_potential(A) -> np.ndarray:
    """Symmetric part of a normal matrix, its orthogonal gradient part."""
    A = _as_matrix(A)
    comm = np.linalg.norm(A @ A.T - A.T @ A)
    if comm > NORMAL_TOL * max(1.0, np.linalg.norm(A) ** 2):
        raise ValueError(f"A is not normal (|AA^T - A^TA| = {comm:.3g}); use gramian_potential")
    return 0.5 * (A + A.T)


def riccati_residual(P, A) -> float:
    """``|P A + A^T P + 2 P^2|_F / |A|_F``."""
    P = np.asarray(P, dtype=float)
    A = _as_matrix(A)
    R = P @ A + A.T @ P + 2 * P @ P
    return float(np.linalg.norm(R) / np.linalg.norm(A))


def random_stable_matrix(n: int, seed=None, margin: float = 0.5) -> LinearSystem:
    """Shift a standard-normal matrix so its spectral abscissa is ``-margin``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    A = B - (_spectral_abscissa(B) + margin) * np.eye(n)
    return LinearSystem(A)


@dataclass(frozen=True)
class LinearReport:
    symmetry: float
    max_real_eig_Ac: float
    antisymmetry: float

    def ok(self, tol: float = 1e-8) -> bool:
        return max(self.symmetry, self.max_real_eig_Ac, self.antisymmetry) < tol


def verify_linear_decomposition(A, A_g) -> LinearReport:
    """Residuals of the orthogonality claims for ``A = A_g + A_c``."""
    A = _as_matrix(A)
    A_g = np.asarray(A_g, dtype=float)
    A_c = A - A_g
    G = A_g @ A_c
    return LinearReport(
        symmetry=float(np.linalg.norm(A_g - A_g.T)),
        max_real_eig_Ac=float(np.max(np.abs(np.linalg.eigvals(A_c).real))),
        antisymmetry=float(np.linalg.norm(G + G.T)),
    )


def quadratic_form(Q) -> Polynomial:
    """The polynomial ``x^T Q x`` for symmetric ``Q``."""
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    terms = {}
    for i in range(n):
        for j in range(i, n):
            e = [0] * n
            e[i] += 1
            e[j] += 1
            c = Q[i, i] if i == j else Q[i, j] + Q[j, i]
            if c != 0.0:
                terms[Monomial(e)] = float(c)
    return Polynomial(terms, n)


def gradient_matrix(U: Polynomial) -> np.ndarray:
    """``A_g = -Hess U`` for a quadratic potential."""
    if U.degree > 2:
        raise ValueError(f"potential has degree {U.degree}; expected a quadratic")
    n = U.nvars
    H = np.zeros((n, n))
    for m, c in U.terms.items():
        if m.degree != 2:
            continue
        idx = m.support()
        if len(idx) == 1:
            H[idx[0], idx[0]] = 2 * c
        else:
            i, j = idx
            H[i, j] = H[j, i] = c
    return -H


def linear_drift_matrix(f: VectorField) -> np.ndarray:
    """Matrix of a homogeneous linear drift; rejects anything else."""
    n = f.nvars
    A = np.zeros((n, n))
    for i, p in enumerate(f):
        for m, c in p.terms.items():
            if m.degree != 1:
                raise ValueError(f"drift component {i + 1} is not homogeneous linear")
            A[i, m.support()[0]] = c
    return A


# scaling benchmark

@dataclass
class BenchRow:
    n: int
    seed: int
    time: float
    iterations: int
    riccati: float
    gramian_error: float
    certified: bool
    error: str = ""


BENCH_FIELDS = ["n", "seed", "time", "iterations", "riccati", "gramian_error", "certified", "error"]


def bench_case(n: int, seed: int, config=None) -> BenchRow:
    """Decompose one random stable system and compare with its Gramian."""
    from .decompose import DecomposeConfig, decompose

    sys = random_stable_matrix(n, seed)
    exact = gramian_potential(sys)
    t0 = time.perf_counter()
    try:
        res = decompose(sys.drift(), config or DecomposeConfig())
    except Exception as exc:  # keep the sweep going
        log.warning("n=%d seed=%d failed: %s", n, seed, exc)
        return BenchRow(n, seed, time.perf_counter() - t0, 0, np.nan, np.nan, False, str(exc))
    elapsed = time.perf_counter() - t0
    A_g = gradient_matrix(res.U)
    err = np.linalg.norm(A_g - exact.A_g) / np.linalg.norm(exact.A_g)
    return BenchRow(n, seed, elapsed, len(res.iterations) - 1, riccati_residual(-A_g, sys.A),
                    float(err), res.certified)


def run_bench(ns, seeds, config=None) -> list[BenchRow]:
    return [bench_case(n, s, config) for n in ns for s in seeds]


def median_times_monotone(rows: list[BenchRow]) -> tuple[bool, dict[int, float]]:
    """Median wall time per ``n`` and whether it never decreases with ``n``."""
    medians = {}
    for n in sorted({r.n for r in rows}):
        medians[n] = float(np.median([r.time for r in rows if r.n == n]))
    vals = list(medians.values())
    return all(b >= a for a, b in zip(vals, vals[1:])), medians


def write_bench_csv(rows: list[BenchRow], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(BENCH_FIELDS)
    for r in rows:
        w.writerow([r.n, r.seed, "%.10g" % r.time, r.iterations, "%.10g" % r.riccati,
                    "%.10g" % r.gramian_error, int(r.certified), r.error])
