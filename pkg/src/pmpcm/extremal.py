"""Control-eliminated Hamiltonian fields and their numeric integration.

Extremals are generated as initial value problems: any ``(x(a), psi(a))``
integrated through the field with the eliminated control satisfies both the
Hamiltonian system and the stationarity conditions.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import expr as ex
from .errors import (
    BadPsi0,
    DomainError,
    IntegrationError,
    NonFiniteState,
    StepSizeUnderflow,
    UnboundVariable,
)
from .expr import Expr
from .ocp import ControlElimination, OCProblem, build_hamiltonian

__all__ = [
    "ExtremalField",
    "IntegratorStats",
    "Trajectory",
    "build_field",
    "integrate",
    "evaluate_along",
    "DEFAULT_RTOL",
    "DEFAULT_ATOL",
    "DEFAULT_SAMPLES",
]

DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-12
DEFAULT_SAMPLES = 200


@dataclass(frozen=True, eq=False)
class ExtremalField:
    """``x' = dH/dpsi``, ``psi' = -dH/dx`` with the controls substituted out."""

    problem: OCProblem
    psi0: float
    H_reduced: Expr
    rhs: tuple[Expr, ...]
    controls: dict[str, Expr]
    _rhs_fn: ex.CompiledExprs = field(repr=False)
    _control_fn: ex.CompiledExprs = field(repr=False)

    @property
    def dimension(self) -> int:
        return len(self.rhs)

    @property
    def argnames(self) -> tuple[str, ...]:
        return ("t",) + self.problem.state_names + self.problem.costate_names

    def __call__(self, t: float, y: Sequence[float]) -> list[float]:
        return self._rhs_fn([t, *y])

    def control(self, t: float, y: Sequence[float]) -> list[float]:
        return self._control_fn([t, *y])


def build_field(p: OCProblem, elim: ControlElimination, psi0: float | None = None) -> ExtremalField:
    psi0 = p.psi0 if psi0 is None else float(psi0)
    if psi0 > 0:
        raise BadPsi0(f"psi0 must be <= 0, got {psi0}")
    H = build_hamiltonian(p)
    psi0_map = {"psi0": ex.const(Fraction(repr(psi0)))}

    def reduce(e: Expr) -> Expr:
        return ex.substitute(ex.substitute(e, elim.controls), psi0_map)

    H_reduced = reduce(H)
    rhs = [reduce(ex.differentiate(H, c)) for c in p.costate_names]
    rhs += [reduce(ex.neg(ex.differentiate(H, x))) for x in p.state_names]
    rhs = [ex.normalize(e) for e in rhs]
    controls = {u: ex.substitute(e, psi0_map) for u, e in elim.controls.items()}
    args = ("t",) + p.state_names + p.costate_names
    return ExtremalField(
        problem=p,
        psi0=psi0,
        H_reduced=H_reduced,
        rhs=tuple(rhs),
        controls=controls,
        _rhs_fn=ex.compile_exprs(rhs, args),
        _control_fn=ex.compile_exprs(list(controls.values()), args),
    )


@dataclass
class IntegratorStats:
    accepted: int = 0
    rejected: int = 0
    rhs_evaluations: int = 0
    max_local_error: float = 0.0
    """Largest absolute local error estimate of an accepted step."""
    error_estimate: float = 0.0
    """Sum of the accepted local error estimates; a crude global error bound."""


@dataclass(eq=False)
class Trajectory:
    """Sampled extremal plus the step data needed for dense output."""

    problem: OCProblem
    psi0: float
    t: np.ndarray
    x: np.ndarray
    psi: np.ndarray
    u: np.ndarray
    stats: IntegratorStats
    step_t: np.ndarray = field(repr=False)
    step_y: np.ndarray = field(repr=False)
    step_f: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def names(self) -> tuple[str, ...]:
        p = self.problem
        return ("t",) + p.state_names + p.control_names + p.costate_names

    def columns(self) -> np.ndarray:
        """Samples as a (K, 1 + n + r + n) array ordered like :attr:`names`."""
        return np.column_stack([self.t, self.x, self.u, self.psi])

    def binding(self, k: int) -> dict[str, float]:
        b = dict(zip(self.names, self.columns()[k].tolist()))
        b["psi0"] = self.psi0
        return b

    def state_at(self, t: float) -> np.ndarray:
        """Cubic Hermite interpolant of ``(x, psi)`` between accepted steps."""
        ts = self.step_t
        lo, hi = min(ts[0], ts[-1]), max(ts[0], ts[-1])
        if not lo <= t <= hi:
            raise ValueError(f"t={t} outside integrated interval [{lo}, {hi}]")
        forward = ts[-1] >= ts[0]
        if forward:
            i = min(max(bisect.bisect_right(ts, t) - 1, 0), len(ts) - 2)
        else:
            rev = ts[::-1]
            j = min(max(bisect.bisect_right(rev, t) - 1, 0), len(ts) - 2)
            i = len(ts) - 2 - j
        t0, t1 = ts[i], ts[i + 1]
        h = t1 - t0
        s = (t - t0) / h
        y0, y1 = self.step_y[i], self.step_y[i + 1]
        f0, f1 = self.step_f[i], self.step_f[i + 1]
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


# Dormand-Prince 5(4)
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


def _initial_step(fun, t0, y0, f0, direction, rtol, atol) -> float:
    scale = atol + np.abs(y0) * rtol
    d0 = np.max(np.abs(y0) / scale)
    d1 = np.max(np.abs(f0) / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + direction * h0 * f0
    try:
        f1 = np.asarray(fun(t0 + direction * h0, y1))
    except DomainError:
        return h0
    d2 = np.max(np.abs(f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def _solve(fun, t0: float, y0: np.ndarray, t_end: float, grid: np.ndarray, rtol: float, atol: float,
           max_steps: int):
    """Adaptive DP5(4) from t0 to t_end landing exactly on every grid time."""
    stats = IntegratorStats()
    direction = 1.0 if t_end >= t0 else -1.0
    t = t0
    y = y0.copy()
    f = np.asarray(fun(t, y))
    stats.rhs_evaluations += 1
    step_t, step_y, step_f = [t], [y.copy()], [f.copy()]
    out = {0: y.copy()}
    next_idx = 1
    if len(grid) > 1:
        h = _initial_step(fun, t, y, f, direction, rtol, atol)
        stats.rhs_evaluations += 1
        h = min(h, abs(t_end - t0))
    else:
        h = 0.0
    k = np.empty((7, len(y)))
    while next_idx < len(grid):
        if stats.accepted + stats.rejected >= max_steps:
            raise IntegrationError(f"exceeded {max_steps} steps at t={t!r}")
        target = grid[next_idx]
        min_h = 16 * np.spacing(abs(t)) if t else 1e-300
        if h < min_h:
            raise StepSizeUnderflow("step size underflow", t)
        hit = False
        if h >= abs(target - t) * (1 - 1e-12):
            h_try = abs(target - t)
            hit = True
        else:
            h_try = h
        hs = direction * h_try
        try:
            k[0] = f
            for s in range(1, 7):
                ys = y + hs * (np.asarray(_A[s]) @ k[:s])
                k[s] = fun(t + _C[s] * hs, ys)
            stats.rhs_evaluations += 6
            y_new = ys  # stage 7 evaluates at the 5th-order solution (FSAL)
            err_vec = hs * (np.asarray(_E) @ k)
            finite = np.all(np.isfinite(y_new)) and np.all(np.isfinite(k[6]))
        except DomainError:
            finite = False
        if not finite:
            stats.rejected += 1
            h = h_try * 0.25
            continue
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.max(np.abs(err_vec) / scale))
        if err <= 1.0:
            t = target if hit else t + hs
            y = y_new
            f = k[6].copy()
            stats.accepted += 1
            local = float(np.max(np.abs(err_vec)))
            stats.max_local_error = max(stats.max_local_error, local)
            stats.error_estimate += local
            step_t.append(t)
            step_y.append(y.copy())
            step_f.append(f.copy())
            if hit:
                out[next_idx] = y.copy()
                next_idx += 1
            factor = _MAX_FACTOR if err == 0 else min(_MAX_FACTOR, _SAFETY * err ** -0.2)
            # a step shortened to hit a grid point keeps the controller's proposal
            h = max(h, h_try * factor) if hit else h_try * factor
        else:
            stats.rejected += 1
            h = h_try * max(_MIN_FACTOR, _SAFETY * err ** -0.2)
    ys = np.array([out[i] for i in range(len(grid))])
    return ys, stats, np.array(step_t), np.array(step_y), np.array(step_f)


def integrate(
    f: ExtremalField,
    x0: Sequence[float],
    psi_init: Sequence[float],
    span: tuple[float, float] | None = None,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    samples: int = DEFAULT_SAMPLES,
    grid: Sequence[float] | None = None,
    max_steps: int = 1_000_000,
) -> Trajectory:
    """Integrate one extremal from ``(x0, psi_init)`` at ``span[0]``.

    ``span`` defaults to the problem horizon and may run backwards.  Output
    is sampled on ``grid`` or on ``samples`` uniformly spaced times.
    """
    p = f.problem
    if span is None:
        span = (p.a, p.b)
    t0, t1 = float(span[0]), float(span[1])
    lo, hi = min(t0, t1), max(t0, t1)
    slack = 1e-12 * max(1.0, abs(p.a), abs(p.b))
    if lo < p.a - slack or hi > p.b + slack:
        raise ValueError(f"span [{t0}, {t1}] is not inside the horizon [{p.a}, {p.b}]")
    if not (rtol > 0 and atol > 0):
        raise ValueError("rtol and atol must be positive")
    if len(x0) != p.n or len(psi_init) != p.n:
        raise ValueError(f"initial state and costate need {p.n} entries each")
    y0 = np.array([*x0, *psi_init], dtype=float)
    if not np.all(np.isfinite(y0)):
        raise NonFiniteState("initial values must be finite")
    if grid is None:
        if samples < 2 and t0 != t1:
            raise ValueError("need at least 2 samples")
        grid_arr = np.linspace(t0, t1, samples) if t0 != t1 else np.array([t0])
    else:
        grid_arr = np.asarray(grid, dtype=float)
        d = np.diff(grid_arr) * (1 if t1 >= t0 else -1)
        if grid_arr[0] != t0 or np.any(d <= 0):
            raise ValueError("grid must start at span[0] and be strictly monotone")

    def fun(t, y):
        return f(t, y)

    ys, stats, step_t, step_y, step_f = _solve(fun, t0, y0, t1, grid_arr, rtol, atol, max_steps)
    if not np.all(np.isfinite(ys)):
        raise NonFiniteState("integration produced non-finite values")
    n = p.n
    u = np.array([f.control(t, y) for t, y in zip(grid_arr, ys)]).reshape(len(grid_arr), p.r)
    return Trajectory(
        problem=p,
        psi0=f.psi0,
        t=grid_arr,
        x=ys[:, :n],
        psi=ys[:, n:],
        u=u,
        stats=stats,
        step_t=step_t,
        step_y=step_y,
        step_f=step_f,
    )


def evaluate_along(tr: Trajectory, F: Expr) -> list[tuple[float, float]]:
    """Value of ``F`` at every sample of ``tr``."""
    names = tr.names
    extra = ex.free_variables(F) - set(names) - {"psi0"}
    if extra:
        raise UnboundVariable(f"expression uses symbols the trajectory does not bind: {', '.join(sorted(extra))}")
    fn = ex.compile_exprs([F], names, {"psi0": tr.psi0})
    cols = tr.columns()
    return [(float(row[0]), fn(row.tolist())[0]) for row in cols]
