import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasipot.basis import build_basis
from quasipot.decompose import construct_initial, decompose
from quasipot.linear_oracle import (
    LinearSystem,
    StabilityError,
    bench_case,
    gradient_matrix,
    gramian_potential,
    linear_drift_matrix,
    median_times_monotone,
    normal_case_potential,
    quadratic_form,
    random_stable_matrix,
    riccati_residual,
    verify_linear_decomposition,
    write_bench_csv,
)
from quasipot.poly import VectorField

from conftest import LINEAR3

REFERENCE_AG = np.array([[-5.01, 0.14, 0.18], [0.14, -1.55, -0.02], [0.18, -0.02, -0.94]])


def test_scaled_identity():
    d = gramian_potential(-2 * np.eye(2))
    assert np.allclose(d.A_g, -2 * np.eye(2))
    assert np.allclose(d.A_c, 0)
    U = d.potential()
    assert U.coefficient((2, 0)) == pytest.approx(1.0)
    assert U.coefficient((0, 2)) == pytest.approx(1.0)
    assert U.coefficient((1, 1)) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("omega", [0.5, 3.0])
def test_rotation_plus_decay(omega):
    A = np.array([[-1.0, omega], [-omega, -1.0]])
    d = gramian_potential(A)
    assert np.allclose(d.A_g, -np.eye(2), atol=1e-12)
    assert np.allclose(d.A_c, [[0, omega], [-omega, 0]], atol=1e-12)
    assert np.allclose(normal_case_potential(A), -np.eye(2))


def test_reference_linear_example():
    d = gramian_potential(LINEAR3)
    assert np.max(np.abs(d.A_g - REFERENCE_AG)) < 0.02
    assert verify_linear_decomposition(LINEAR3, d.A_g).ok(1e-8)


def test_unstable_rejected():
    with pytest.raises(StabilityError):
        gramian_potential(np.array([[0.1, 0.0], [0.0, -1.0]]))
    with pytest.raises(ValueError):
        LinearSystem(np.ones((2, 3)))


def test_ill_conditioned_gramian_warns():
    with pytest.warns(RuntimeWarning, match="condition number"):
        gramian_potential(np.diag([-1.0, -1e-11]))


def test_normal_case_examples():
    S = np.array([[-2.0, 0.5], [0.5, -1.0]])
    assert np.allclose(normal_case_potential(S), S)
    assert np.allclose(normal_case_potential(np.diag([-1.0, -2.0])), np.diag([-1.0, -2.0]))
    with pytest.raises(ValueError, match="gramian_potential"):
        normal_case_potential(LINEAR3)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_normal_matrices_agree_with_gramian(n, seed):
    rng = np.random.default_rng(seed)
    K = rng.standard_normal((n, n))
    # scalar decay plus a skew part commutes, so A is normal
    A = -rng.uniform(0.5, 3.0) * np.eye(n) + (K - K.T)
    assert np.abs(gramian_potential(A).A_g - normal_case_potential(A)).max() < 1e-10


def test_riccati_examples():
    A = -2 * np.eye(2)
    assert riccati_residual(np.eye(2), A) == pytest.approx(1.0)
    assert riccati_residual(2 * np.eye(2), A) == pytest.approx(0.0, abs=1e-15)
    d = gramian_potential(LINEAR3)
    assert riccati_residual(-d.A_g, LINEAR3) < 1e-10


def test_random_stable_matrix():
    for seed in range(5):
        assert random_stable_matrix(1, seed).A[0, 0] == pytest.approx(-0.5)
    A = random_stable_matrix(5, 42).A
    assert np.array_equal(A, random_stable_matrix(5, 42).A)
    assert not np.array_equal(A, random_stable_matrix(5, 43).A)
    assert np.linalg.eigvals(A).real.max() <= -0.5 + 1e-12
    with pytest.raises(ValueError):
        random_stable_matrix(0, 1)


def test_verify_report():
    d = gramian_potential(LINEAR3)
    r = verify_linear_decomposition(LINEAR3, d.A_g)
    assert max(r.symmetry, r.max_real_eig_Ac, r.antisymmetry) < 1e-8
    naive = verify_linear_decomposition(LINEAR3, 0.5 * (LINEAR3 + LINEAR3.T))
    assert naive.symmetry == 0.0
    assert naive.antisymmetry > 1e-2
    assert not naive.ok()
    A = np.diag([-1.0, -3.0])
    assert verify_linear_decomposition(A, A).ok()


@pytest.mark.parametrize("seed", range(3))
def test_random_gramian_is_orthogonal(seed):
    sys = random_stable_matrix(4, seed)
    d = gramian_potential(sys)
    assert verify_linear_decomposition(sys.A, d.A_g).ok(1e-8)
    assert riccati_residual(-d.A_g, sys.A) < 1e-10


def test_quadratic_form_roundtrip():
    Q = np.array([[1.0, 0.3, 0.0], [0.3, 2.0, -0.5], [0.0, -0.5, 0.7]])
    U = quadratic_form(Q)
    x = np.array([0.2, -1.0, 0.4])
    assert U(x) == pytest.approx(x @ Q @ x)
    assert np.allclose(gradient_matrix(U), -2 * Q)
    A = linear_drift_matrix(VectorField.linear(LINEAR3))
    assert np.array_equal(A, LINEAR3)
    with pytest.raises(ValueError):
        linear_drift_matrix(VectorField.parse(["-x1 + 1", "-x2"]))


@pytest.mark.parametrize("n,seed", [(2, 0), (3, 1), (4, 2)])
def test_sos_potential_never_exceeds_maximal_solution(n, seed):
    sys = random_stable_matrix(n, seed)
    P_max = -gramian_potential(sys).A_g
    f = sys.drift()
    first = construct_initial(f, build_basis(f))
    for U in (first.U, decompose(f).U):
        P = -gradient_matrix(U)
        assert np.trace(P_max) >= np.trace(P) - 1e-6


def test_bench_rows_and_csv():
    rows = [bench_case(2, s) for s in range(2)]
    for r in rows:
        assert r.certified and r.gramian_error < 1e-2 and r.riccati < 1e-3
    ok, med = median_times_monotone(rows)
    assert ok and list(med) == [2]
    buf = io.StringIO()
    write_bench_csv(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].startswith("n,seed,time")
    assert len(lines) == 3
