"""Minimum-action paths and the quasi-potential bound sandwich.

Actions use the noise-free convention: every value is ``sigma^2`` times
the Freidlin-Wentzell action, so for a decomposition ``f = -grad U + f_U``
the quasi-potential from ``x_o`` satisfies ``Q(x) >= 4 (U(x) - U(x_o))``.
Actions are evaluated in geometric form

    S = 2 * integral (|phi'| |f(phi)| - phi' . f(phi)) ds,

which is the infimum of the timed action over travel times and does not
depend on how the path is parameterised.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .poly import Polynomial, VectorField, variable_names

__all__ = [
    "PathError",
    "FixedPoint",
    "Path",
    "ActionValue",
    "BoundReport",
    "refine_fixed_point",
    "predict_map",
    "geometric_action",
    "action_gradient",
    "minimize_action",
    "quasi_potential_bounds",
]

log = logging.getLogger(__name__)


class PathError(RuntimeError):
    """Newton divergence, or a reverse flow that never reaches ``x_o``."""

    def __init__(self, message: str, last=None):
        super().__init__(message)
        self.last = None if last is None else np.asarray(last, dtype=float)


@dataclass(frozen=True)
class FixedPoint:
    x: np.ndarray
    kind: str  # "stable", "saddle", "unstable" or "degenerate"
    residual: float
    eigenvalues: np.ndarray


def _classify(eigs: np.ndarray, tol: float = 1e-10) -> str:
    re = eigs.real
    if np.any(np.abs(re) <= tol):
        return "degenerate"
    if np.all(re < 0):
        return "stable"
    if np.all(re > 0):
        return "unstable"
    return "saddle"


def refine_fixed_point(f: VectorField, guess, tol: float = 1e-12, max_steps: int = 50) -> FixedPoint:
    """Newton's method from ``guess``; classifies the root by its Jacobian."""
    x = np.array(guess, dtype=float)
    if x.shape != (f.nvars,):
        raise ValueError(f"guess has shape {x.shape}, expected ({f.nvars},)")
    for _ in range(max_steps):
        r = f(x)
        if np.linalg.norm(r) < tol:
            break
        J = f.jacobian_at(x)
        try:
            x = x - np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            raise PathError(f"singular Jacobian during Newton refinement at {x}", x) from None
        if not np.all(np.isfinite(x)):
            raise PathError("Newton refinement diverged", x)
    res = float(np.linalg.norm(f(x)))
    if res > 1e-9:
        raise PathError(f"Newton refinement did not converge (|f| = {res:.3g})", x)
    eigs = np.linalg.eigvals(f.jacobian_at(x))
    return FixedPoint(x=x, kind=_classify(eigs), residual=res, eigenvalues=eigs)


@dataclass(frozen=True)
class ActionValue:
    value: float
    convention: str = "sigma-free"

    def __float__(self) -> float:
        return self.value


class Path:
    """Polyline of states from ``x_o`` to ``x_e``, optionally timed."""

    def __init__(self, states, times=None):
        states = np.array(states, dtype=float)
        if states.ndim != 2 or states.shape[0] < 2:
            raise ValueError("a path needs at least two states of equal dimension")
        steps = np.linalg.norm(np.diff(states, axis=0), axis=1)
        if np.any(steps == 0) and not np.all(steps == 0):
            raise ValueError("consecutive path states must be distinct")
        if times is not None:
            times = np.array(times, dtype=float)
            if times.shape != (states.shape[0],):
                raise ValueError("times must have one entry per state")
        self.states = states
        self.times = times

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def nvars(self) -> int:
        return self.states.shape[1]

    @property
    def x_o(self) -> np.ndarray:
        return self.states[0]

    @property
    def x_e(self) -> np.ndarray:
        return self.states[-1]

    @property
    def degenerate(self) -> bool:
        return bool(np.all(self.states == self.states[0]))

    def arc_length(self) -> np.ndarray:
        """Cumulative length at each state, starting from 0."""
        return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(self.states, axis=0), axis=1))])

    def resample(self, m: int) -> "Path":
        """``m`` states equally spaced in arc length."""
        if m < 2:
            raise ValueError("need at least two states")
        if self.degenerate:
            return Path(np.repeat(self.states[:1], m, axis=0))
        return Path(_redistribute(self.states, m))

    def reversed(self) -> "Path":
        times = None if self.times is None else self.times[-1] - self.times[::-1]
        return Path(self.states[::-1], times)

    def to_csv(self, fh, names=None) -> None:
        names = list(names or variable_names(self.nvars))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((["t"] if self.times is not None else []) + names)
        for k, s in enumerate(self.states):
            row = ([self.times[k]] if self.times is not None else []) + list(s)
            w.writerow(["%.10g" % v for v in row])

    @classmethod
    def from_csv(cls, fh) -> "Path":
        rows = list(csv.reader(fh))
        header, data = rows[0], np.array(rows[1:], dtype=float)
        if header and header[0] == "t":
            return cls(data[:, 1:], data[:, 0])
        return cls(data)


def _redistribute(states: np.ndarray, m: int) -> np.ndarray:
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(states, axis=0), axis=1))])
    keep = np.concatenate([[True], np.diff(s) > 0])
    s, states = s[keep], states[keep]
    target = np.linspace(0.0, s[-1], m)
    out = np.column_stack([np.interp(target, s, states[:, i]) for i in range(states.shape[1])])
    out[0], out[-1] = states[0], states[-1]
    return out


def _states(path) -> np.ndarray:
    return path.states if isinstance(path, Path) else np.asarray(path, dtype=float)


def geometric_action(f: VectorField, path) -> ActionValue:
    """``2 sum_k (|dx_k| |f(m_k)| - dx_k . f(m_k))`` over segment midpoints ``m_k``."""
    X = _states(path)
    d = np.diff(X, axis=0)
    F = f(0.5 * (X[1:] + X[:-1]))
    val = 2.0 * np.sum(np.linalg.norm(d, axis=1) * np.linalg.norm(F, axis=1) - np.sum(d * F, axis=1))
    return ActionValue(float(val))


def action_gradient(f: VectorField, X: np.ndarray) -> tuple[float, np.ndarray]:
    """Discrete action and its gradient with respect to every state."""
    d = np.diff(X, axis=0)
    mid = 0.5 * (X[1:] + X[:-1])
    F = f(mid)
    J = f.jacobian_at(mid)
    dn = np.linalg.norm(d, axis=1)
    Fn = np.linalg.norm(F, axis=1)
    value = 2.0 * float(np.sum(dn * Fn - np.sum(d * F, axis=1)))
    d_hat = d / np.where(dn > 0, dn, 1.0)[:, None]
    F_hat = F / np.where(Fn > 0, Fn, 1.0)[:, None]
    g_d = 2.0 * (d_hat * Fn[:, None] - F)
    g_m = 2.0 * (np.einsum("kij,ki->kj", J, F_hat) * dn[:, None] - np.einsum("kij,ki->kj", J, d))
    G = np.zeros_like(X)
    G[1:] += g_d + 0.5 * g_m
    G[:-1] += -g_d + 0.5 * g_m
    return value, G


def _field_minus_grad(U: Polynomial, f_U: VectorField) -> VectorField:
    return -(U.gradient() + f_U)


def predict_map(U: Polynomial, f_U: VectorField, x_o, x_e, h: float = 1e-3, r: float = 1e-3,
                t_max: float = 1e3) -> Path:
    """Predicted minimum-action path from ``x_o`` to ``x_e``.

    Integrates ``x' = -(grad U + f_U)`` from ``x_e`` with fixed-step RK4
    until within ``r`` of ``x_o``, then reverses the trajectory and snaps
    its first state to ``x_o``.
    """
    x_o = np.asarray(getattr(x_o, "x", x_o), dtype=float)
    x = np.array(x_e, dtype=float)
    if np.linalg.norm(x - x_o) < r:
        return Path(np.array([x_o, x_o]) if np.all(x == x_o) else np.array([x_o, x]), np.array([0.0, 0.0]))
    g = _field_minus_grad(U, f_U)
    exps, coeffs = g._compile()

    def rhs(y):
        return coeffs @ np.prod(y ** exps, axis=1)

    states, times = [x.copy()], [0.0]
    t = 0.0
    while True:
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * h * k1)
        k3 = rhs(x + 0.5 * h * k2)
        k4 = rhs(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > 1e8:
            raise PathError("reverse flow diverged; x_e is probably outside the basin of x_o", x)
        if np.linalg.norm(x - x_o) < r:
            break
        if np.any(x != states[-1]):
            states.append(x.copy())
            times.append(t)
        if t > t_max:
            raise PathError(
                f"reverse flow did not reach x_o within t_max = {t_max:g}; "
                "x_e is probably outside the basin of x_o", x)
    states.append(x_o.copy())
    times.append(t)
    times = np.asarray(times)
    return Path(np.asarray(states)[::-1], t - times[::-1])


@dataclass
class MinimizeResult:
    path: Path
    action: ActionValue
    history: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def minimize_action(f: VectorField, x_o, x_e, N: int = 100, init: Path | None = None,
                    max_iter: int = 5000, tol: float = 1e-10, redistribute_every: int = 20,
                    return_details: bool = False):
    """Brute-force minimum of the geometric action with fixed endpoints.

    Gradient descent over the ``N`` interior states, with Barzilai-Borwein
    trial steps, Armijo backtracking and the tangential part of the
    gradient removed.  Every ``redistribute_every`` steps the states are
    re-spaced uniformly in arc length.  Returns ``(path, action)``, or a
    :class:`MinimizeResult` if ``return_details`` is set.
    """
    if N < 8:
        raise ValueError("N must be at least 8")
    x_o = np.asarray(getattr(x_o, "x", x_o), dtype=float)
    x_e = np.asarray(x_e, dtype=float)
    if np.all(x_o == x_e):
        path = Path(np.array([x_o, x_e]))
        res = MinimizeResult(path, ActionValue(0.0), [0.0], 0, True)
        return res if return_details else (res.path, res.action)

    if init is None:
        X = np.linspace(x_o, x_e, N + 2)
    else:
        X = _redistribute(_states(init), N + 2)
    X[0], X[-1] = x_o, x_e

    val, G = action_gradient(f, X)
    history = [val]
    step = None
    prev = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        D = _normal_part(X, G)
        D[0] = D[-1] = 0.0
        gg = float(np.sum(D * G))
        if gg <= 0 or np.sqrt(gg) < 1e-12 * max(1.0, val):
            converged = True
            break
        if prev is not None:
            s, y = X - prev[0], D - prev[1]
            sy = float(np.sum(s * y))
            step = float(np.sum(s * s)) / sy if sy > 0 else None
        if step is None:
            step = 1e-3 / max(1.0, np.max(np.abs(D)))
        step = min(step, 10.0 / max(1e-12, np.max(np.abs(D))))
        accepted = False
        for _ in range(40):
            X_new = X - step * D
            val_new, G_new = action_gradient(f, X_new)
            if val_new <= val - 1e-4 * step * gg:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True
            break
        prev = (X, D)
        drop = val - val_new
        X, val, G = X_new, val_new, G_new
        history.append(val)
        if drop < tol * max(1.0, abs(val)) and it > redistribute_every:
            converged = True
            break
        if it % redistribute_every == 0:
            X_re = _redistribute(X, N + 2)
            val_re, G_re = action_gradient(f, X_re)
            if val_re <= val:
                X, val, G = X_re, val_re, G_re
                history.append(val)
                prev = None
    else:
        warnings.warn(f"minimize_action stopped after {max_iter} iterations without converging",
                      RuntimeWarning, stacklevel=2)
    res = MinimizeResult(Path(X), ActionValue(val), history, it, converged)
    return res if return_details else (res.path, res.action)


def _normal_part(X: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Remove from ``G`` its component along the local path tangent."""
    T = np.zeros_like(X)
    T[1:-1] = X[2:] - X[:-2]
    n = np.linalg.norm(T, axis=1)
    T[1:-1] /= np.where(n[1:-1] > 0, n[1:-1], 1.0)[:, None]
    return G - np.sum(G * T, axis=1)[:, None] * T


@dataclass
class BoundReport:
    x_e: np.ndarray
    lower: float
    oracle: float
    predicted_upper: float
    predicted: Path | None = None
    oracle_path: Path | None = None

    def sandwich_ok(self, tol_lower: float = 1e-2, tol_upper: float = 2e-2) -> bool:
        return self.lower <= self.oracle + tol_lower and self.oracle + tol_lower <= self.predicted_upper + tol_upper

    def as_dict(self) -> dict:
        return {"x_e": [float(v) for v in self.x_e], "lower": self.lower, "oracle": self.oracle,
                "predicted_upper": self.predicted_upper}


def quasi_potential_bounds(decomp, x_o, x_e, N: int = 100, **predict_opts) -> BoundReport:
    """Lower bound ``4 (U(x_e) - U(x_o))``, oracle action and predicted-path action."""
    x_o = np.asarray(getattr(x_o, "x", x_o), dtype=float)
    x_e = np.asarray(x_e, dtype=float)
    U, f = decomp.U, decomp.f
    lower = 4.0 * (U(x_e) - U(x_o))
    pred = predict_map(U, decomp.f_U, x_o, x_e, **predict_opts)
    upper = geometric_action(f, pred).value
    init = pred if not pred.degenerate else None
    opath, oval = minimize_action(f, x_o, x_e, N=N, init=init)
    return BoundReport(x_e=x_e, lower=float(lower), oracle=oval.value, predicted_upper=upper,
                       predicted=pred, oracle_path=opath)
