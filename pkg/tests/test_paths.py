import io
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from quasipot.paths import (
    Path,
    PathError,
    action_gradient,
    geometric_action,
    minimize_action,
    predict_map,
    quasi_potential_bounds,
    refine_fixed_point,
)
from quasipot.poly import VectorField, parse_polynomial

from conftest import field

OU = VectorField.parse(["-x"])
MS_U = parse_polynomial("0.25*x1^4 + 0.5*x1^2*x2^2 - 0.5*x1^2 + 0.5*x2^2", nvars=2)
ZERO2 = VectorField.parse(["0", "0"], variables=["x1", "x2"])


def ms_gradient():
    return SimpleNamespace(U=MS_U, f=field("ms_1_1"), f_U=ZERO2)


def test_refine_maier_stein():
    f = field("ms_1_1")
    fp = refine_fixed_point(f, [-1.1, 0.05])
    assert np.allclose(fp.x, [-1, 0], atol=1e-12)
    assert fp.kind == "stable" and fp.residual < 1e-9
    sp = refine_fixed_point(f, [0.1, 0.0])
    assert np.allclose(sp.x, [0, 0], atol=1e-12)
    assert sp.kind == "saddle"


def test_quartic_has_four_attractors():
    f = field("quartic")
    U = parse_polynomial("0.5*x1^4 + 0.5*x2^4 - 5*x1^2 - 5*x2^2 + x1*x2 + x1", nvars=2)
    roots = []
    for guess in [(2.2, 2.2), (2.2, -2.2), (-2.2, 2.2), (-2.2, -2.2)]:
        fp = refine_fixed_point(f, guess)
        assert fp.kind == "stable"
        assert np.linalg.norm(U.gradient()(fp.x)) < 1e-9
        roots.append(fp.x)
    assert len({tuple(np.round(r, 6)) for r in roots}) == 4


def test_refine_errors():
    with pytest.raises(ValueError):
        refine_fixed_point(field("ms_1_1"), [0.0])
    with pytest.raises(PathError) as err:
        refine_fixed_point(VectorField.parse(["x^2 + 1"]), [0.3])
    assert err.value.last is not None


@pytest.mark.parametrize("a", [0.5, 1.0, 2.0])
def test_ou_straight_line_action(a):
    path = Path(np.linspace(0, a, 201)[:, None])
    assert geometric_action(OU, path).value == pytest.approx(2 * a * a, rel=1e-9)


def test_downhill_path_has_zero_action():
    path = Path(np.linspace(1.0, 0.0, 50)[:, None])
    assert geometric_action(OU, path).value == pytest.approx(0.0, abs=1e-12)


def test_relaxation_trajectory_has_zero_action():
    f = field("ms_1_10")
    sol = solve_ivp(lambda t, y: f(y), (0, 8), [-0.3, 0.5], rtol=1e-10, atol=1e-12,
                    t_eval=np.linspace(0, 8, 400))
    down = Path(sol.y.T)
    up = down.reversed()
    assert geometric_action(f, down).value < 1e-4
    assert geometric_action(f, up).value > 0.1


def test_gradient_maier_stein_axis_action():
    path = Path(np.column_stack([np.linspace(-1, 0, 401), np.zeros(401)]))
    assert geometric_action(field("ms_1_1"), path).value == pytest.approx(1.0, rel=1e-4)


@settings(max_examples=20, deadline=None)
@given(st.floats(-1.4, -0.3), st.floats(-0.7, 0.7))
def test_resampling_invariance(x1, x2):
    f = field("ms_1_10")
    x_o, x_e = np.array([-1.0, 0.0]), np.array([x1, x2])
    chord = x_e - x_o
    if np.linalg.norm(chord) < 0.2:
        return
    t = np.linspace(0, 1, 200)[:, None]
    normal = 0.2 * np.array([-chord[1], chord[0]])
    states = x_o + t * chord + normal * np.sin(np.pi * t)
    path = Path(states)
    a = geometric_action(f, path).value
    b = geometric_action(f, path.resample(200)).value
    assert abs(a - b) <= 5e-3 * max(a, 1e-3)


def test_action_gradient_matches_finite_differences():
    f = field("ms_1_10")
    rng = np.random.default_rng(3)
    X = np.column_stack([np.linspace(-1, -0.3, 12), 0.4 * np.sin(np.linspace(0, np.pi, 12))])
    X[1:-1] += 0.01 * rng.standard_normal((10, 2))
    val, G = action_gradient(f, X)
    assert val == pytest.approx(geometric_action(f, X).value)
    h = 1e-6
    for k in (1, 5, 10):
        for j in range(2):
            Xp, Xm = X.copy(), X.copy()
            Xp[k, j] += h
            Xm[k, j] -= h
            fd = (geometric_action(f, Xp).value - geometric_action(f, Xm).value) / (2 * h)
            assert G[k, j] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_minimize_ou():
    path, act = minimize_action(OU, [0.0], [1.0], N=50)
    assert act.value == pytest.approx(2.0, rel=0.02)
    assert np.allclose(path.x_o, [0.0]) and np.allclose(path.x_e, [1.0])


def test_minimize_gradient_maier_stein():
    res = minimize_action(field("ms_1_1"), [-1.0, 0.0], [0.0, 0.0], N=100, return_details=True)
    assert res.action.value == pytest.approx(1.0, rel=0.02)
    h = np.array(res.history)
    assert np.all(np.diff(h) <= 1e-12 * np.abs(h[:-1]))


def test_minimize_degenerate_and_small_N():
    path, act = minimize_action(OU, [0.5], [0.5])
    assert act.value == 0.0 and path.degenerate
    with pytest.raises(ValueError):
        minimize_action(OU, [0.0], [1.0], N=4)


def test_predict_map_ou():
    path = predict_map(parse_polynomial("0.5*x^2"), VectorField.parse(["0"]), [0.0], [1.0])
    assert np.allclose(path.x_o, [0.0]) and np.allclose(path.x_e, [1.0])
    t_rev = path.times[-1] - path.times
    assert np.allclose(path.states[1:-1, 0], np.exp(-t_rev[1:-1]), atol=1e-9)


def test_predict_map_follows_axis_in_gradient_case():
    d = ms_gradient()
    path = predict_map(d.U, d.f_U, [-1.0, 0.0], [-0.4, 0.0])
    assert np.all(np.abs(path.states[:, 1]) < 1e-12)
    assert geometric_action(d.f, path).value == pytest.approx(4 * (MS_U([-0.4, 0]) - MS_U([-1, 0])), rel=1e-3)


def test_predict_map_errors():
    U = parse_polynomial("0.5*x^2")
    with pytest.raises(PathError, match="basin"):
        predict_map(-U, VectorField.parse(["0"]), [0.0], [1.0])
    with pytest.raises(PathError, match="t_max"):
        predict_map(U, VectorField.parse(["0"]), [0.0], [1.0], t_max=0.5)


def test_gradient_case_paths_agree_pointwise():
    d = ms_gradient()
    rep = quasi_potential_bounds(d, [-1.0, 0.0], [-0.8, 0.5])
    pred = rep.predicted.resample(101).states
    orac = rep.oracle_path.resample(101).states
    assert np.max(np.linalg.norm(pred - orac, axis=1)) < 1e-2
    vals = [rep.lower, rep.oracle, rep.predicted_upper]
    assert max(vals) - min(vals) <= 0.02 * max(vals)
    assert rep.sandwich_ok()


def test_path_validation_and_csv():
    with pytest.raises(ValueError):
        Path([[0.0, 0.0]])
    with pytest.raises(ValueError):
        Path([[0.0], [1.0], [1.0]])
    with pytest.raises(ValueError):
        Path([[0.0], [1.0]], times=[0.0])
    p = Path([[0.0, 1.0], [0.5, 1.5], [1.0, 1.25]], times=[0.0, 0.1, 0.3])
    buf = io.StringIO()
    p.to_csv(buf)
    assert buf.getvalue().splitlines()[0] == "t,x1,x2"
    buf.seek(0)
    q = Path.from_csv(buf)
    assert np.array_equal(q.states, p.states) and np.array_equal(q.times, p.times)
    assert np.allclose(p.reversed().times, [0.0, 0.2, 0.3])
    assert p.arc_length()[-1] == pytest.approx(np.sqrt(0.5) + np.sqrt(0.3125))
